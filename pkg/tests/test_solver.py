import csv

import numpy as np
import pytest

from dssns.dss_fields import StripField, divergence_residual, x_norm, x_norm_samples
from dssns.initial_data import ProfileSpec, make_axisym_noswirl, zero_data
from dssns.solver import (SigmaSchedule, SolveResult, continuation, fixed_point_certificate,
                          get_problem, k_map, mild_residual, picard_solve)


@pytest.fixture(scope="module")
def problem(tiny_grid, axisym_data):
    return get_problem(axisym_data, tiny_grid)


@pytest.fixture(scope="module")
def solved(problem, tiny_grid):
    K0 = x_norm(problem.K(StripField.zeros(tiny_grid, 0.5), 1.0))
    return picard_solve(1.0, StripField.zeros(tiny_grid, 0.5), 1e-3 * K0, 30, problem=problem)


def test_k_vanishes_at_zero(problem, tiny_grid):
    z = StripField.zeros(tiny_grid, 0.5)
    assert np.all(problem.k_samples(z, 0.0) == 0.0)


def test_k_quadratic_in_sigma(problem, tiny_grid):
    z = StripField.zeros(tiny_grid, 0.5)
    k1 = problem.k_samples(z, 1.0)
    k5 = problem.k_samples(z, 0.5)
    assert np.allclose(k5, 0.25 * k1, rtol=1e-12, atol=0)


def test_k_quadratic_in_data(problem, tiny_grid):
    half = make_axisym_noswirl(ProfileSpec(seed=1, dss_amplitude=0.2), 2.0, 0.025)
    z = StripField.zeros(tiny_grid, 0.5)
    a = x_norm(problem.K(z, 1.0))
    b = x_norm(k_map(z, 1.0, half))
    assert b == pytest.approx(0.25 * a, rel=1e-10)


def test_k_map_validation(axisym_data, tiny_grid):
    z = StripField.zeros(tiny_grid, 0.5)
    with pytest.raises(ValueError):
        k_map(z, 1.5, axisym_data)
    bad = StripField(tiny_grid, np.full(tiny_grid.shape + (3,), np.inf), 0.5)
    with pytest.raises(ValueError):
        k_map(bad, 0.5, axisym_data)


def test_sigma_zero_is_immediate(problem, tiny_grid):
    r = picard_solve(0.0, StripField.zeros(tiny_grid, 0.5), 1e-12, 5, problem=problem)
    assert r.converged and r.iterations == 1
    assert np.all(r.v.samples == 0.0)


def test_picard_converges_geometrically(solved):
    assert solved.converged and solved.status == "converged"
    assert solved.final_residual <= solved.tol
    q = solved.contraction_factors()
    assert q.size >= 1 and np.all(q < 1.0)


def test_result_invariant(solved, problem, tiny_grid):
    assert solved.converged == (solved.final_residual <= solved.tol)
    short = picard_solve(1.0, StripField.zeros(tiny_grid, 0.5), 1e-14, 1, problem=problem)
    assert not short.converged and short.status == "budget"
    assert short.final_residual > short.tol


def test_swirl_stays_zero(solved):
    assert len(solved.swirl_history) == solved.iterations
    assert max(solved.swirl_history) <= 1e-10


def test_heat_part_is_divergence_free(problem):
    pts = np.array([[0.7, 0.2, 0.4], [2.0, -1.0, 0.5], [1.0, 1.0, 1.0]])
    U = lambda x: problem.U(x, np.full(len(x), 1.3))
    scale = np.abs(U(pts)).max()
    assert divergence_residual(U, pts, 1e-3) <= 1e-6 * scale


def test_certificate_and_mild_residual(solved, problem):
    cert = fixed_point_certificate(solved, problem, n_probe=4)
    assert cert["pass"], cert
    mild = mild_residual(solved, problem, n_probe=4)
    scale = x_norm(solved.v)
    assert mild <= 3.0 * solved.tol + 1e-3 * scale


def test_picard_validation(problem, tiny_grid):
    z = StripField.zeros(tiny_grid, 0.5)
    with pytest.raises(ValueError):
        picard_solve(1.0, z, 0.0, problem=problem)
    with pytest.raises(ValueError):
        picard_solve(1.0, z, 1e-3, damping=0.0, problem=problem)
    with pytest.raises(ValueError):
        picard_solve(1.0, z, 1e-3)


def test_continuation_zero_data(tiny_grid, tmp_path):
    tr = continuation(zero_data(2.0), tiny_grid, out_dir=tmp_path)
    assert tr.status == "reached_sigma_1"
    assert tr.accepted[-1]["sigma"] == 1.0
    assert (tmp_path / "continuation.csv").exists()


def _stalling_solver(grid, ok_below):
    def solve(sigma, v_init):
        good = sigma <= ok_below
        return SolveResult(StripField.zeros(grid, 0.5), sigma, [1.0], 0.0 if good else 1.0,
                           1, good, "converged" if good else "budget", 0.5)
    return solve


def test_continuation_forced_stall(axisym_data, tiny_grid, tmp_path):
    sched = SigmaSchedule(sigma0=0.2, step0=0.25, step_min=1e-2)
    tr = continuation(axisym_data, tiny_grid, sched, solve=_stalling_solver(tiny_grid, 0.5),
                      out_dir=tmp_path)
    assert tr.status == "step_underflow"
    s = tr.sigmas()
    assert np.all(np.diff(s) > 0) and s[-1] <= 0.5
    rows = list(csv.reader(l for l in open(tmp_path / "continuation.csv") if not l.startswith("#")))
    assert rows[0] == ["sigma", "x_norm", "converged", "step", "status"]
    assert len(rows) - 1 == len(tr.entries)
    assert all(r[-1] == "step_underflow" for r in rows[1:])


def test_continuation_initial_failure(axisym_data, tiny_grid, tmp_path):
    with pytest.raises(RuntimeError):
        continuation(axisym_data, tiny_grid, SigmaSchedule(sigma0=0.9),
                     solve=_stalling_solver(tiny_grid, 0.5), out_dir=tmp_path)
    assert "initial_failure" in (tmp_path / "continuation_summary.txt").read_text()


def test_continuation_reaches_one(axisym_data, tiny_grid):
    problem = get_problem(axisym_data, tiny_grid)
    tol = 1e-3 * x_norm(problem.K(StripField.zeros(tiny_grid, 0.5), 1.0))
    tr = continuation(axisym_data, tiny_grid, SigmaSchedule(sigma0=0.5, step0=0.5), tol=tol)
    assert tr.status == "reached_sigma_1"
    s = tr.sigmas()
    assert s[-1] == 1.0 and np.all(np.diff(s) > 0)
    assert x_norm_samples(tiny_grid, 0.5, tr.results[-1].v.samples) > 0
