"""Fixed-point problem v = K(v, sigma) on the strip and continuation in sigma.

K(v, sigma) = -Phi[(sigma U + E v) (x) (sigma U + E v)] restricted to the
strip, with U = e^{t Delta} u0.  Phi is applied through the assembled
operator of stokes_conv, so one Picard sweep costs a table build and a
matrix-vector product.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numba import njit, prange

from .dss_fields import StripField, StripGrid, bracket, dss_extend, x_norm, x_norm_samples
from .initial_data import DssInitialData
from .stokes_conv import (QuadratureSpec, Semigroup, TableSource, phi_at, phi_operator,
                          source_table)


# ------------------------------------------------------------------ problem

class Problem:
    """Everything K needs that does not depend on v: operator and U tables."""

    def __init__(self, u0: DssInitialData, grid: StripGrid,
                 spec: Optional[QuadratureSpec] = None, gamma: float = 0.5):
        if abs(u0.lam - grid.lam) > 1e-14 * grid.lam:
            raise ValueError("initial data and grid use different lambda")
        self.u0 = u0
        self.grid = grid
        self.spec = QuadratureSpec() if spec is None else spec
        self.gamma = gamma
        self.U = Semigroup(u0, self.spec)
        self.op = phi_operator(grid, self.spec)
        self.src = self.op.src
        if u0.is_zero:
            self.U_src = None
        else:
            self.U_src = self.U.table(self.src)

    @property
    def U_grid(self) -> np.ndarray:
        if self.U_src is None:
            return np.zeros(self.grid.shape + (3,))
        return self.U_src[:self.grid.n_rho]

    def k_samples(self, v: StripField, sigma: float) -> np.ndarray:
        F = source_table(self.src, v, sigma, self.U_src)
        return self.op.apply(F)

    def K(self, v: StripField, sigma: float) -> StripField:
        return StripField(self.grid, self.k_samples(v, sigma), v.gamma)

    def solution(self, v: StripField, sigma: float) -> "AssembledSolution":
        return AssembledSolution(v, self.U, sigma, self.U_grid)


_PROBLEMS = {}


def get_problem(u0: DssInitialData, grid: StripGrid, spec: Optional[QuadratureSpec] = None,
                gamma: float = 0.5) -> Problem:
    """Problem for (u0, grid, spec), memoised on object identity of u0."""
    spec = QuadratureSpec() if spec is None else spec
    key = (id(u0), tuple(sorted(grid.params().items())),
           tuple(sorted(spec.as_dict().items())), gamma)
    hit = _PROBLEMS.get(key)
    if hit is None or hit.u0 is not u0:
        hit = Problem(u0, grid, spec, gamma)
        _PROBLEMS[key] = hit
    return hit


def k_map(v: StripField, sigma: float, u0: DssInitialData,
          spec: Optional[QuadratureSpec] = None, problem: Optional[Problem] = None) -> StripField:
    """K(v, sigma) = -Phi[(sigma U + E v) (x) (sigma U + E v)] on the strip."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    if not math.isfinite(x_norm(v)):
        raise ValueError("v must have finite X-norm")
    if problem is None:
        problem = get_problem(u0, v.grid, spec, v.gamma)
    return problem.K(v, sigma)


class AssembledSolution:
    """u = sigma U + E v; at strip nodes U comes from the table."""

    def __init__(self, v: StripField, U: Semigroup, sigma: float,
                 U_grid: Optional[np.ndarray] = None):
        self.v = v
        self.U = U
        self.sigma = float(sigma)
        self.lam = v.grid.lam
        self.U_grid = U_grid

    def __call__(self, x, t) -> np.ndarray:
        out = dss_extend(self.v, x, t)
        if self.sigma != 0.0 and not self.U.u0.is_zero:
            out = out + self.sigma * self.U(x, t)
        return out

    def at_nodes(self) -> np.ndarray:
        out = np.array(self.v.samples)
        if self.sigma != 0.0 and self.U_grid is not None:
            out += self.sigma * self.U_grid
        return out


# ------------------------------------------------------------- a priori monitor

def apriori_monitor(v: StripField, u) -> dict:
    """Fitted constants of the a priori bounds over the strip nodes.

    C_u    = sup |u| (|x| + sqrt t)
    C_v2   = sup |v| sqrt t <x / sqrt t>^2
    C_vgam = sup |v| sqrt t <x / sqrt t>^(1 + gamma)
    """
    g = v.grid
    X, T = g.node_arrays()
    if isinstance(u, AssembledSolution):
        uval = u.at_nodes().reshape(-1, 3)
    else:
        uval = np.asarray(u(X, T)).reshape(-1, 3)
    vv = np.linalg.norm(v.samples.reshape(-1, 3), axis=1)
    st = np.sqrt(T)
    r = np.linalg.norm(X, axis=1)
    br = bracket(X / st[:, None])
    rep = {
        "C_u": float(np.max(np.linalg.norm(uval, axis=1) * (r + st))),
        "C_v2": float(np.max(vv * st * br ** 2)),
        "C_vgam": float(np.max(vv * st * br ** (1.0 + v.gamma))),
    }
    rep["finite"] = all(math.isfinite(val) for val in rep.values())
    return rep


# ------------------------------------------------------------------- Picard

@dataclass
class SolveResult:
    v: StripField
    sigma: float
    residual_history: list
    final_residual: float
    iterations: int
    converged: bool
    status: str
    tol: float
    apriori_report: dict = field(default_factory=dict)
    swirl_history: list = field(default_factory=list)
    damping_history: list = field(default_factory=list)

    def contraction_factors(self) -> np.ndarray:
        r = np.asarray(self.residual_history, dtype=float)
        if r.size < 2:
            return np.zeros(0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return r[1:] / r[:-1]


@njit(cache=True, parallel=True)
def _gram(A, B, out):
    """out[i, j] = A[i] . B[j], summed in a fixed order."""
    n = A.shape[0]
    m = B.shape[0]
    for ij in prange(n * m):
        i = ij // m
        j = ij - i * m
        s = 0.0
        for k in range(A.shape[1]):
            s += A[i, k] * B[j, k]
        out[i, j] = s


def _node_swirl(grid: StripGrid, samples: np.ndarray) -> float:
    """max |v . e_theta| over the strip nodes."""
    d = grid.directions
    rc = np.hypot(d[:, 0], d[:, 1])
    e = np.stack([-d[:, 1] / rc, d[:, 0] / rc, np.zeros_like(rc)], axis=1)
    return float(np.max(np.abs(np.einsum("raic,ac->rai", samples, e))))


def _weights(grid: StripGrid, gamma: float) -> np.ndarray:
    r = grid.radii
    return (r * r + 2.0) ** (0.5 * (1.0 + gamma))


def picard_solve(sigma: float, v_init: StripField, tol: float, max_iter: int = 50,
                 damping: float = 1.0, anderson_depth: int = 3,
                 u0: Optional[DssInitialData] = None, spec: Optional[QuadratureSpec] = None,
                 problem: Optional[Problem] = None, track_swirl: Optional[bool] = None,
                 auto_damping: bool = True) -> SolveResult:
    """Damped Picard iteration with optional Anderson mixing for v = K(v, sigma).

    Stops when ||v_{n+1} - v_n||_X <= tol.  If the residual grows while
    damping is 1, damping falls back to 0.5 once.  Growth by 10x over five
    iterations aborts with status "diverged".
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if anderson_depth < 0:
        raise ValueError("anderson_depth must be non-negative")
    if problem is None:
        if u0 is None:
            raise ValueError("need u0 or a Problem")
        problem = get_problem(u0, v_init.grid, spec, v_init.gamma)
    grid = v_init.grid
    gamma = v_init.gamma
    wgt = _weights(grid, gamma)[:, None, None, None]
    if track_swirl is None:
        track_swirl = bool(problem.u0.axisymmetric_noswirl)
    v = v_init
    hist, swirl, damp_hist = [], [], []
    Xs, Gs = [], []
    status = "budget"
    beta = damping
    Kv = problem.k_samples(v, sigma)
    final = math.inf
    it = 0
    while it < max_iter:
        it += 1
        g = Kv - v.samples
        damp_hist.append(beta)
        xv = (v.samples * wgt).ravel()
        gv = (g * wgt).ravel()
        new = v.samples + beta * g
        if anderson_depth > 0 and Xs:
            dX = np.array([xv - x for x in Xs])
            dG = np.array([gv - q for q in Gs])
            M = np.empty((len(Gs), len(Gs)))
            _gram(dG, dG, M)
            rhs = np.empty((len(Gs), 1))
            _gram(dG, gv[None], rhs)
            M += 1e-14 * np.trace(M) * np.eye(len(Gs))
            try:
                coef = np.linalg.solve(M, rhs[:, 0])
                mix = xv + beta * gv - (dX + beta * dG).T @ coef
                cand = mix.reshape(v.samples.shape) / wgt
                if np.all(np.isfinite(cand)):
                    new = cand
            except np.linalg.LinAlgError:
                pass
        Xs.append(xv)
        Gs.append(gv)
        if len(Xs) > anderson_depth:
            Xs.pop(0)
            Gs.pop(0)
        step = x_norm_samples(grid, gamma, new - v.samples)
        hist.append(step)
        v = StripField(grid, new, gamma)
        if track_swirl:
            swirl.append(_node_swirl(grid, new))
        Kv = problem.k_samples(v, sigma)
        if step <= tol:
            final = x_norm_samples(grid, gamma, Kv - v.samples)
            if final <= tol:
                status = "converged"
                break
        if not np.isfinite(step):
            status = "diverged"
            break
        if len(hist) >= 6 and hist[-1] > 10.0 * hist[-6]:
            status = "diverged"
            break
        if auto_damping and beta == 1.0 and len(hist) >= 2 and hist[-1] > hist[-2]:
            beta = 0.5
            Xs.clear()
            Gs.clear()
    if status != "converged":
        final = x_norm_samples(grid, gamma, Kv - v.samples)
    converged = status == "converged"
    rep = apriori_monitor(v, problem.solution(v, sigma))
    return SolveResult(v, float(sigma), hist, final, it, converged, status, tol, rep, swirl,
                       damp_hist)


# -------------------------------------------------------------- continuation

@dataclass(frozen=True)
class SigmaSchedule:
    sigma0: Optional[float] = None
    step0: float = 0.25
    step_min: float = 1e-3
    growth: float = 1.5
    sigma_target: float = 1.0
    max_steps: int = 50

    def initial(self, C_star: float) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        # sigma0 C_* <= 0.05
        return min(self.sigma_target, 0.05 / C_star) if C_star > 0 else self.sigma_target


@dataclass
class ContinuationTrace:
    entries: list = field(default_factory=list)
    status: str = "running"
    results: list = field(default_factory=list)

    def add(self, sigma, norm, converged, step):
        self.entries.append({"sigma": float(sigma), "x_norm": float(norm),
                             "converged": bool(converged), "step": float(step)})

    @property
    def accepted(self) -> list:
        return [e for e in self.entries if e["converged"]]

    def sigmas(self) -> np.ndarray:
        return np.array([e["sigma"] for e in self.accepted])


def continuation(u0: DssInitialData, grid: StripGrid, schedule: SigmaSchedule = SigmaSchedule(),
                 tol: float = 1e-6, max_iter: int = 30, damping: float = 1.0,
                 anderson_depth: int = 3, gamma: float = 0.5,
                 spec: Optional[QuadratureSpec] = None, solve: Optional[Callable] = None,
                 out_dir=None, header: Optional[dict] = None) -> ContinuationTrace:
    """Follow v(sigma) from sigma0 to sigma_target, warm-starting each step.

    A failed step is retried with half the step; below step_min the run
    ends with status step_underflow.  solve(sigma, v_init) may replace the
    Picard solver (used to force stalls in tests).  Accepted sigmas are
    strictly increasing.
    """
    trace = ContinuationTrace()
    v = StripField.zeros(grid, gamma)
    if solve is None:
        if u0.is_zero:
            def solve(sigma, v_init):
                z = StripField.zeros(grid, gamma)
                return SolveResult(z, sigma, [0.0], 0.0, 1, True, "converged", tol,
                                   apriori_monitor(z, z))
        else:
            problem = get_problem(u0, grid, spec, gamma)

            def solve(sigma, v_init):
                return picard_solve(sigma, v_init, tol, max_iter, damping, anderson_depth,
                                    problem=problem)
    sigma = schedule.initial(u0.C_star if not u0.is_zero else 0.0)
    first = solve(sigma, v)
    trace.add(sigma, x_norm(first.v), first.converged, sigma)
    if not first.converged:
        trace.status = "initial_failure"
        _persist(trace, out_dir, header)
        raise RuntimeError(f"Picard failed at sigma0 = {sigma:.4g}; "
                           "use a smaller sigma0 or a smaller C_*")
    trace.results.append(first)
    v = first.v
    step = schedule.step0
    n = 0
    while sigma < schedule.sigma_target - 1e-15:
        if n >= schedule.max_steps:
            trace.status = "iteration_budget"
            break
        n += 1
        trial = min(sigma + step, schedule.sigma_target)
        res = solve(trial, v)
        trace.add(trial, x_norm(res.v), res.converged, trial - sigma)
        if res.converged:
            trace.results.append(res)
            sigma = trial
            v = res.v
            step *= schedule.growth
        else:
            step *= 0.5
            if step < schedule.step_min:
                trace.status = "step_underflow"
                break
    else:
        trace.status = "reached_sigma_1" if schedule.sigma_target >= 1.0 else "reached_target"
    _persist(trace, out_dir, header)
    return trace


# ------------------------------------------------------------- certificates

def certificate_probes(grid: StripGrid, samples: np.ndarray, gamma: float, n_probe: int):
    """Deterministic probe nodes: the largest weighted |v| plus an even spread."""
    X, T = grid.node_arrays()
    w = _weights(grid, gamma)[:, None, None] * np.linalg.norm(samples, axis=-1)
    order = np.argsort(-w.ravel(), kind="stable")
    spread = np.linspace(0, X.shape[0] - 1, n_probe - n_probe // 2).round().astype(int)
    idx = np.unique(np.concatenate([order[:n_probe // 2], spread]))
    return idx, X[idx], T[idx]


def fixed_point_certificate(result: SolveResult, problem: Problem,
                            spec: Optional[QuadratureSpec] = None, n_probe: int = 12) -> dict:
    """||v - K(v, sigma)||_X recomputed by pointwise quadrature with a finer rule.

    K is re-evaluated through TableSource, which integrates the tabulated
    source node by node instead of through the assembled matrix, using
    spec (default: the refined rule of the problem).  Only n_probe nodes
    are checked; the residual is in absolute X-norm units.
    """
    spec = problem.spec.refined() if spec is None else spec
    v, sigma, grid = result.v, result.sigma, result.v.grid
    idx, X, T = certificate_probes(grid, v.samples, v.gamma, n_probe)
    F = source_table(problem.src, v, sigma, problem.U_src)
    Kd = phi_at(TableSource(problem.src, F), X, T, spec, grid.lam)
    wt = _weights(grid, v.gamma)[np.unravel_index(idx, grid.shape)[0]]
    diff = np.linalg.norm(v.samples.reshape(-1, 3)[idx] - Kd, axis=1) * wt
    res = float(diff.max())
    return {"residual": res, "n_probe": int(idx.size), "tol": result.tol,
            "bound": 3.0 * result.tol, "pass": bool(res <= 3.0 * result.tol)}


def mild_residual(result: SolveResult, problem: Problem, n_probe: int = 8,
                  spec: Optional[QuadratureSpec] = None) -> float:
    """sup <x>^(1+gamma) |u - (sigma e^{t Delta} u0 - Phi(u (x) u))| at strip nodes.

    Assembled independently of the solver: U is recomputed pointwise by
    the heat quadrature, u (x) u is formed from sigma U + E v at the source
    nodes with E v read through the DSS extension, and Phi is integrated
    node by node.
    """
    spec = problem.spec if spec is None else spec
    v, sigma, grid = result.v, result.sigma, result.v.grid
    idx, X, T = certificate_probes(grid, v.samples, v.gamma, n_probe)
    src = problem.src
    Xs, Ts = src.node_arrays()
    w = dss_extend(v, Xs, Ts)
    heat_x = np.zeros_like(X)
    if sigma != 0.0 and not problem.u0.is_zero:
        w = w + sigma * problem.U(Xs, Ts)
        heat_x = sigma * problem.U(X, T)
    w = w.reshape(src.shape + (3,))
    F = -w[..., :, None] * w[..., None, :]
    ph = phi_at(TableSource(src, F), X, T, spec, grid.lam)
    u = heat_x + v.samples.reshape(-1, 3)[idx]
    r = np.linalg.norm(u - (heat_x + ph), axis=1) * bracket(X) ** (1.0 + v.gamma)
    return float(r.max())


# --------------------------------------------------------------- persistence

def _header_lines(header: Optional[dict]) -> list:
    return [f"# {k}={v}" for k, v in (header or {}).items()]


def write_residual_csv(result: SolveResult, path, header: Optional[dict] = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in _header_lines(header):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "residual", "damping", "swirl"])
        for i, r in enumerate(result.residual_history):
            sw = result.swirl_history[i] if i < len(result.swirl_history) else ""
            d = result.damping_history[i] if i < len(result.damping_history) else ""
            w.writerow([i + 1, repr(float(r)), repr(d), repr(sw) if sw != "" else ""])


def write_trace_csv(trace: ContinuationTrace, path, header: Optional[dict] = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        for line in _header_lines(header):
            fh.write(line + "\n")
        w = csv.writer(fh)
        w.writerow(["sigma", "x_norm", "converged", "step", "status"])
        for e in trace.entries:
            w.writerow([repr(e["sigma"]), repr(e["x_norm"]), int(e["converged"]),
                        repr(e["step"]), trace.status])


def write_summary(values: dict, path, header: Optional[dict] = None) -> None:
    path = Path(path)
    with path.open("w") as fh:
        for line in _header_lines(header):
            fh.write(line + "\n")
        for k, val in values.items():
            fh.write(f"{k}={val!r}\n" if isinstance(val, float) else f"{k}={val}\n")


def _persist(trace: ContinuationTrace, out_dir, header) -> None:
    if out_dir is None:
        return
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trace_csv(trace, out / "continuation.csv", header)
    for i, res in enumerate(trace.results):
        write_residual_csv(res, out / f"residuals_step{i:03d}.csv", header)
    write_summary({"status": trace.status, "steps": len(trace.entries),
                   "accepted": len(trace.accepted),
                   "sigma_final": trace.accepted[-1]["sigma"] if trace.accepted else 0.0},
                  out / "continuation_summary.txt", header)
