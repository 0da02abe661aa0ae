import numpy as np
import pytest

from dssns.dss_fields import StripField
from dssns.estimates import (EstimateReport, PhiCalQuad, dss_invariance_check, dss_probes,
                             holder_seminorm, loglog_slope, phi_cal, phi_cal_bound,
                             solution_decay_check, stable, synthetic_holder_check)
from dssns.solver import SolveResult

# phi(0, 4, 2) from an mpmath (dps 20) tanh-sinh double integral of the
# radial form, computed independently of the library and frozen.
PHI_0_4_2 = 2.5501724695307858


def test_phi_cal_anchor():
    val, err = phi_cal([0.0, 0.0, 0.0], 4.0, 2.0, return_error=True)
    assert val == pytest.approx(PHI_0_4_2, rel=1e-6)
    assert err < 1e-5


def test_phi_cal_symmetry_and_radiality():
    x = np.array([1.3, -0.4, 2.0])
    rot = np.array([0.0, 0.0, np.linalg.norm(x)])
    a = phi_cal(x, 4.0, 2.5)
    assert phi_cal(x, 2.5, 4.0) == pytest.approx(a, rel=1e-7)
    assert phi_cal(rot, 4.0, 2.5) == pytest.approx(a, rel=1e-12)


@pytest.mark.parametrize("ab", [(1.0, 1.5), (5.0, 2.0), (0.0, 4.0), (3.0, -1.0)])
def test_phi_cal_rejects_bad_exponents(ab):
    with pytest.raises(ValueError):
        phi_cal([0.0, 0.0, 1.0], *ab)


def test_phi_cal_below_bound_far_out():
    for r in (10.0, 50.0):
        x = np.array([r, 0.0, 0.0])
        assert phi_cal(x, 4.0, 2.0, PhiCalQuad()) / phi_cal_bound(r, 4.0, 2.0) < 10.0


def test_phi_cal_bound_log_term():
    r = np.array([0.0, 10.0])
    assert np.all(phi_cal_bound(r, 3.0, 3.0) > phi_cal_bound(r, 3.0, 3.0, with_log=False))
    assert np.allclose(phi_cal_bound(r, 4.0, 2.0), phi_cal_bound(r, 4.0, 2.0, with_log=False))


def test_loglog_slope_exact():
    x = np.geomspace(1.0, 100.0, 9)
    s, err = loglog_slope(x, 3.0 * x ** -2.5)
    assert s == pytest.approx(-2.5, abs=1e-12) and err < 1e-10


def test_stable():
    assert stable(1.0, 1.05)
    assert not stable(1.0, 1.2)
    assert not stable(1.0, float("inf"))
    assert stable(0.0, 0.0)


def test_report_write(tmp_path):
    rep = EstimateReport("demo", [("r=1", 0.5, 1.0)], 0.5, (-2.0, 0.1), "pass", {"k": 1.5})
    rep.write(tmp_path / "r.csv", {"config_hash": "abc"})
    text = (tmp_path / "r.csv").read_text()
    assert text.startswith("# config_hash=abc\n")
    assert "# verdict=pass" in text and "# exponent=-2.0" in text and "# k=1.5" in text
    assert rep.passed


def _ss(x, t):
    x = np.asarray(x, dtype=float)
    return x / ((x * x).sum(-1) + np.asarray(t, dtype=float))[..., None]


def test_dss_invariance_positive_and_negative():
    P, T = dss_probes(2.0)
    assert dss_invariance_check(_ss, 2.0, P, T) < 1e-14
    wrong = lambda x, t: _ss(x, t) * (1.0 + 0.1 * np.sin(np.asarray(t))[..., None])
    assert dss_invariance_check(wrong, 2.0, P, T) > 1e-3


@pytest.mark.parametrize("theta", [0.3, 0.7])
def test_synthetic_holder(theta):
    rep = synthetic_holder_check(theta)
    assert rep.passed
    assert rep.fitted_constant == pytest.approx(1.0, rel=0.2)


def test_holder_of_constant_is_zero():
    const = lambda X, T: np.ones((np.asarray(X).reshape(-1, 3).shape[0], 3))
    vals, rep = holder_seminorm(const, 0.5, [[1.0, 0.0, 0.0]], 1.0)
    assert np.all(vals == 0.0) and rep.passed
    with pytest.raises(ValueError):
        holder_seminorm(const, 1.0, [[1.0, 0.0, 0.0]], 1.0)


def _result(grid, samples, converged=True):
    v = StripField(grid, samples, 0.5)
    return SolveResult(v, 1.0, [0.0], 0.0, 1, converged, "converged" if converged else "budget",
                       1.0)


def test_solution_decay_of_zero_field(tiny_grid):
    rep = solution_decay_check(_result(tiny_grid, np.zeros(tiny_grid.shape + (3,))),
                               "C^{1,beta}")
    assert rep.fitted_constant == 0.0 and rep.details["slope_v"] == 0.0
    assert rep.details["C_grad_cubic"] == 0.0


def test_solution_decay_recovers_known_rate(small_grid):
    X, T = small_grid.node_arrays()
    # |v| sqrt t = <z>^-2 exactly, z = x / sqrt t
    amp = 1.0 / (((X * X).sum(-1) / T + 2.0) * np.sqrt(T))
    v = (amp[:, None] * X / np.linalg.norm(X, axis=1)[:, None]).reshape(small_grid.shape + (3,))
    rep = solution_decay_check(_result(small_grid, v), "C^gamma", n_half=4)
    assert rep.details["slope_v"] == pytest.approx(-2.0, abs=1e-10)
    assert rep.exponent_fit[1] < 1e-10


def test_solution_decay_refuses_unconverged(tiny_grid):
    with pytest.raises(ValueError):
        solution_decay_check(_result(tiny_grid, np.zeros(tiny_grid.shape + (3,)), False))
    with pytest.raises(ValueError):
        solution_decay_check(_result(tiny_grid, np.zeros(tiny_grid.shape + (3,))), "C^2")
