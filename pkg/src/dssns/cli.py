"""Batch front end: solve, verify, extend and report.

Configuration is key=value text with [section] headers.  Every artifact
starts with '# key=value' lines echoing the config hash, so a file can be
traced back to the run that produced it.  Exit codes: 0 ok, 2 invalid
configuration, 3 continuation stall, 4 audit failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import math
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

EXIT_OK, EXIT_CONFIG, EXIT_STALL, EXIT_AUDIT = 0, 2, 3, 4
THREADS_ENV = "DSSNS_THREADS"

DEFAULTS = {
    "problem": {"lambda": "2.0", "gamma": "0.5", "beta": "0.5", "C_star": "0.05",
                "sigma_target": "1.0"},
    "data": {"family": "axisym-noswirl", "n_terms": "2", "log_modes": "1",
             "angular_degree": "2", "rough_terms": "0", "amplitude": "1.0",
             "dss_amplitude": "0.2", "seed": "1"},
    "grid": {"n_rho": "16", "r_min": "0.25", "r_max": "16.0", "n_theta": "4", "n_phi": "8",
             "n_time": "3", "angular": "spectral"},
    "quadrature": {},
    "solver": {"tol": "", "tol_rel": "2e-3", "max_iter": "30", "damping": "1.0",
               "anderson_depth": "3", "sigma0": "", "step0": "0.25", "step_min": "1e-3",
               "growth": "1.5", "max_steps": "50", "certificate_probes": "12",
               "mild_probes": "8"},
    "audit": {"ab_pairs": "4,2; 4,3; 3,3; 4,2.5", "stokes_m": "0, 0.5",
              "holder_theta": "0.3, 0.7"},
    "output": {"dir": "out"},
}
FAMILIES = ("generic", "axisym-noswirl", "zero")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ config

@dataclass
class RunConfig:
    lam: float
    gamma: float
    beta: Optional[float]
    C_star: float
    sigma_target: float
    family: str
    profile: dict
    grid: dict
    quadrature: dict
    solver: dict
    audit: dict
    out_dir: str
    text: str

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()[:16]

    def header(self) -> dict:
        from . import __version__
        return {"config_hash": self.hash, "dssns_version": __version__}

    def strip_grid(self):
        from .dss_fields import StripGrid
        g = self.grid
        return StripGrid(self.lam, g["n_rho"], math.log(g["r_min"]), math.log(g["r_max"]),
                         g["n_theta"], g["n_phi"], g["n_time"], g["angular"])

    def spec(self):
        from .stokes_conv import QuadratureSpec
        kw = dict(self.quadrature)
        kw.setdefault("lam_hint", self.lam)
        return QuadratureSpec(**kw)

    def initial_data(self):
        from .initial_data import ProfileSpec, make_axisym_noswirl, make_initial_data, zero_data
        if self.family == "zero" or self.C_star == 0.0:
            return zero_data(self.lam)
        ps = ProfileSpec(gamma=self.gamma, beta=0.5 if self.beta is None else self.beta,
                         **self.profile)
        make = make_axisym_noswirl if self.family == "axisym-noswirl" else make_initial_data
        return make(ps, self.lam, self.C_star)


def _num(sec, key, val, kind):
    try:
        return kind(val)
    except ValueError:
        raise ConfigError(f"[{sec}] {key}: cannot read {val!r} as {kind.__name__}") from None


def _quadrature_fields() -> dict:
    from .stokes_conv import QuadratureSpec
    return {f.name: f for f in fields(QuadratureSpec)}


def _parse_quadrature(items: dict) -> dict:
    known = _quadrature_fields()
    out = {}
    for k, v in items.items():
        if k not in known:
            raise ConfigError(f"[quadrature] unknown key {k!r}")
        default = known[k].default
        if isinstance(default, tuple):
            out[k] = tuple(_num("quadrature", k, p, int) for p in v.split(","))
        elif isinstance(default, bool):
            out[k] = v.lower() in ("1", "true", "yes")
        elif isinstance(default, int):
            out[k] = _num("quadrature", k, v, int)
        elif v.lower() in ("", "none"):
            out[k] = None
        elif k == "k_min_offset":
            out[k] = _num("quadrature", k, v, int)
        else:
            out[k] = _num("quadrature", k, v, float)
    return out


def load_config(path=None, seed: Optional[int] = None) -> RunConfig:
    """Read a config file over the defaults, validate it and fix its hash."""
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    cp.read_dict(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} not found")
        user = configparser.ConfigParser(interpolation=None, delimiters=("=",))
        user.optionxform = str
        try:
            user.read(path)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        for sec in user.sections():
            if sec not in DEFAULTS:
                raise ConfigError(f"unknown section [{sec}]")
            for k, v in user[sec].items():
                if sec != "quadrature" and k not in DEFAULTS[sec]:
                    raise ConfigError(f"[{sec}] unknown key {k!r}")
                cp[sec][k] = v.strip()
    if seed is not None:
        cp["data"]["seed"] = str(int(seed))
    P, D, G, S = cp["problem"], cp["data"], cp["grid"], cp["solver"]
    lam = _num("problem", "lambda", P["lambda"], float)
    gamma = _num("problem", "gamma", P["gamma"], float)
    beta = None if P["beta"].lower() in ("", "none") else _num("problem", "beta", P["beta"], float)
    C_star = _num("problem", "C_star", P["C_star"], float)
    sigma_target = _num("problem", "sigma_target", P["sigma_target"], float)
    if not lam > 1.0:
        raise ConfigError("lambda must exceed 1")
    if not 0.0 < gamma < 1.0:
        raise ConfigError("gamma must lie in (0, 1)")
    if beta is not None and not 0.0 < beta < 1.0:
        raise ConfigError("beta must lie in (0, 1)")
    if not 0.0 < sigma_target <= 1.0:
        raise ConfigError("sigma_target must lie in (0, 1]")
    if C_star < 0.0:
        raise ConfigError("C_star must be non-negative")
    family = D["family"]
    if family not in FAMILIES:
        raise ConfigError(f"data family must be one of {FAMILIES}")
    profile = {k: _num("data", k, D[k], int) for k in
               ("n_terms", "log_modes", "angular_degree", "rough_terms", "seed")}
    profile.update({k: _num("data", k, D[k], float) for k in ("amplitude", "dss_amplitude")})
    grid = {k: _num("grid", k, G[k], int) for k in ("n_rho", "n_theta", "n_phi", "n_time")}
    grid.update({k: _num("grid", k, G[k], float) for k in ("r_min", "r_max")})
    grid["angular"] = G["angular"]
    if not 0.0 < grid["r_min"] < grid["r_max"]:
        raise ConfigError("grid radii must satisfy 0 < r_min < r_max")
    solver = {}
    for k in ("tol", "tol_rel", "damping", "sigma0", "step0", "step_min", "growth"):
        solver[k] = None if S[k].lower() in ("", "none") else _num("solver", k, S[k], float)
    for k in ("max_iter", "anderson_depth", "max_steps", "certificate_probes", "mild_probes"):
        solver[k] = _num("solver", k, S[k], int)
    for k in ("tol", "tol_rel", "step0", "step_min"):
        if solver[k] is not None and not solver[k] > 0.0:
            raise ConfigError(f"[solver] {k} must be positive")
    if solver["tol"] is None and solver["tol_rel"] is None:
        raise ConfigError("[solver] needs tol or tol_rel")
    if solver["damping"] is None or not 0.0 < solver["damping"] <= 1.0:
        raise ConfigError("[solver] damping must lie in (0, 1]")
    if solver["anderson_depth"] < 0 or solver["max_iter"] < 1:
        raise ConfigError("[solver] anderson_depth >= 0 and max_iter >= 1 required")
    if solver["sigma0"] is not None and not 0.0 < solver["sigma0"] <= 1.0:
        raise ConfigError("[solver] sigma0 must lie in (0, 1]")
    A = cp["audit"]
    try:
        audit = {
            "ab_pairs": [tuple(float(p) for p in pair.split(",")) for pair in
                         A["ab_pairs"].split(";") if pair.strip()],
            "stokes_m": [float(p) for p in A["stokes_m"].split(",") if p.strip()],
            "holder_theta": [float(p) for p in A["holder_theta"].split(",") if p.strip()],
        }
    except ValueError:
        raise ConfigError("[audit] lists must be comma separated numbers") from None
    quadrature = _parse_quadrature(dict(cp["quadrature"]))
    cfg = RunConfig(lam, gamma, beta, C_star, sigma_target, family, profile, grid, quadrature,
                    solver, audit, cp["output"]["dir"], "")
    try:
        cfg.strip_grid()
        cfg.spec()
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    # the hash covers everything that can change a result, not the output location
    lines = []
    for sec in sorted(cp.sections()):
        if sec == "output":
            continue
        for k in sorted(cp[sec]):
            lines.append(f"{sec}.{k}={cp[sec][k]}")
    cfg.text = "\n".join(lines)
    return cfg


# ------------------------------------------------------------------ helpers

def _out(args, cfg: RunConfig) -> Path:
    out = Path(args.out if args.out else cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_kv(path: Path, values: dict, header: dict) -> None:
    from .solver import write_summary
    write_summary(values, path, header)


def configure_threads(n: Optional[int]) -> Optional[int]:
    """Worker count from --threads, else the environment variable; None keeps numba's default."""
    if n is None:
        env = os.environ.get(THREADS_ENV)
        n = int(env) if env else None
    if n is None:
        return None
    if n < 1:
        raise ConfigError("thread count must be positive")
    if "numba" not in sys.modules:
        cur = int(os.environ.get("NUMBA_NUM_THREADS", "0") or 0)
        os.environ["NUMBA_NUM_THREADS"] = str(max(cur, n))
    import numba
    n = min(n, numba.config.NUMBA_NUM_THREADS)
    numba.set_num_threads(n)
    return n


# -------------------------------------------------------------------- solve

def run_solve(cfg: RunConfig, out: Path) -> int:
    import numpy as np

    from .dss_fields import StripField, swirl_component, write_snapshot, x_norm_samples
    from .estimates import dss_invariance_check, dss_probes
    from .solver import (SigmaSchedule, continuation, fixed_point_certificate, get_problem,
                         mild_residual, write_residual_csv)

    header = cfg.header()
    grid = cfg.strip_grid()
    spec = cfg.spec()
    u0 = cfg.initial_data()
    S = cfg.solver
    problem = None
    tol = S["tol"]
    if not u0.is_zero:
        problem = get_problem(u0, grid, spec, cfg.gamma)
        if tol is None:
            k0 = problem.k_samples(StripField.zeros(grid, cfg.gamma), cfg.sigma_target)
            tol = S["tol_rel"] * x_norm_samples(grid, cfg.gamma, k0)
    if tol is None or tol <= 0.0:
        tol = S["tol_rel"]
    schedule = SigmaSchedule(S["sigma0"], S["step0"], S["step_min"], S["growth"],
                             cfg.sigma_target, S["max_steps"])
    summary = {"config_hash": cfg.hash, "tol": float(tol), "C_star": float(u0.C_star)}
    try:
        trace = continuation(u0, grid, schedule, tol, S["max_iter"], S["damping"],
                             S["anderson_depth"], cfg.gamma, spec, out_dir=out, header=header)
    except RuntimeError as exc:
        summary.update(status="initial_failure", message=str(exc))
        _write_kv(out / "audit_summary.txt", summary, header)
        print(f"continuation failed: {exc}", file=sys.stderr)
        return EXIT_STALL
    final = trace.results[-1]
    reached = (trace.status in ("reached_sigma_1", "reached_target") and final.converged
               and abs(final.sigma - cfg.sigma_target) <= 1e-12)
    write_snapshot(final.v, out / "snapshot.txt", header)
    write_residual_csv(final, out / "residuals_final.csv", header)
    summary.update(status=trace.status, sigma=final.sigma, iterations=final.iterations,
                   final_residual=final.final_residual, converged=final.converged)
    for k, v in final.apriori_report.items():
        summary[f"apriori_{k}"] = v
    if problem is not None:
        cert = fixed_point_certificate(final, problem, n_probe=S["certificate_probes"])
        summary.update(certificate_residual=cert["residual"], certificate_bound=cert["bound"],
                       certificate_pass=cert["pass"])
        mild = mild_residual(final, problem, n_probe=S["mild_probes"])
        summary.update(mild_residual=mild, mild_pass=bool(mild <= 3.0 * tol))
        u = problem.solution(final.v, final.sigma)
        P, T = dss_probes(cfg.lam)
        dss = dss_invariance_check(u, cfg.lam, P, T, cfg.gamma)
        summary.update(dss_invariance=dss, dss_pass=bool(dss <= 3.0 * tol))
        if u0.axisymmetric_noswirl:
            rng = np.random.default_rng(3)
            pts = rng.normal(size=(64, 3)) * 3.0
            summary["swirl_iterates_max"] = float(max(final.swirl_history, default=0.0))
            summary["swirl_solution"] = swirl_component(lambda x: u(x, np.full(len(x), 1.3)), pts)
    _write_kv(out / "audit_summary.txt", summary, header)
    print(f"solve: status={trace.status} sigma={final.sigma:.6g} "
          f"residual={final.final_residual:.3e} tol={tol:.3e}")
    return EXIT_OK if reached else EXIT_STALL


# ------------------------------------------------------------------- verify

def _kernel_suite(out: Path, header: dict) -> list:
    from .kernels import kernel_bound_check, kernel_oracle_check
    orc = kernel_oracle_check()
    bnd = kernel_bound_check()
    rows = [
        ("kernel_oracle", orc["max_rel_error"] <= 1e-6, orc),
        ("kernel_trace", orc["max_trace_error"] <= 1e-10, orc),
        ("kernel_bound_C0", bnd["C0_stable"], bnd),
        ("kernel_bound_C1", bnd["C1_stable"], bnd),
    ]
    _write_kv(out / "kernels_audit.txt", {**orc, **bnd}, header)
    return [(name, ok) for name, ok, _ in rows]


def _estimate_suite(cfg: RunConfig, out: Path, header: dict) -> list:
    from .estimates import (phi_cal_bound_check, phi_holder_check, stokes_decay_check,
                            synthetic_holder_check)
    spec = cfg.spec()
    reports = [phi_cal_bound_check(a, b) for a, b in cfg.audit["ab_pairs"]]
    reports += [stokes_decay_check(m, spec=spec, lam=cfg.lam) for m in cfg.audit["stokes_m"]]
    if cfg.audit["holder_theta"]:
        reports += phi_holder_check(cfg.audit["holder_theta"], spec=spec, lam=cfg.lam)
    reports += [synthetic_holder_check(th) for th in cfg.audit["holder_theta"]]
    rows = []
    for rep in reports:
        fname = "".join(c if c.isalnum() or c in "._=-" else "_" for c in rep.name)
        rep.write(out / f"estimate_{fname}.csv", header)
        rows.append((rep.name, rep.passed))
    return rows


def run_verify(cfg: RunConfig, suite: str, out: Path) -> int:
    if suite not in ("kernels", "estimates", "all"):
        raise ConfigError("suite must be kernels, estimates or all")
    header = cfg.header()
    rows = []
    if suite in ("kernels", "all"):
        rows += _kernel_suite(out, header)
    if suite in ("estimates", "all"):
        rows += _estimate_suite(cfg, out, header)
    with (out / f"verify_{suite}.txt").open("w") as fh:
        for k, v in header.items():
            fh.write(f"# {k}={v}\n")
        for name, ok in rows:
            fh.write(f"{name}={'pass' if ok else 'fail'}\n")
    for name, ok in rows:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(ok for _, ok in rows) else EXIT_AUDIT


# ------------------------------------------------------------------- extend

def read_points(path) -> tuple:
    """Rows x1 x2 x3 t (comma or whitespace separated; '#' comments and a header row allowed)."""
    import numpy as np
    rows = []
    seen_header = False
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            try:
                vals = [float(p) for p in parts]
            except ValueError:
                if rows or seen_header:
                    raise ConfigError(f"unreadable point row: {line!r}") from None
                seen_header = True
                continue
            if len(vals) != 4:
                raise ConfigError(f"point rows need 4 numbers, got {line!r}")
            rows.append(vals)
    arr = np.array(rows, dtype=float).reshape(-1, 4)
    return arr[:, :3], arr[:, 3]


def run_extend(cfg: RunConfig, snapshot, points, out: Path) -> tuple:
    """Write extend.csv with (x1, x2, x3, t, k, Ev1, Ev2, Ev3); returns (rows, skipped)."""
    import numpy as np

    from .dss_fields import dss_extend, epoch_index, read_snapshot
    v = read_snapshot(snapshot)
    X, T = read_points(points)
    keep = T > 0.0
    skipped = int(np.count_nonzero(~keep))
    X, T = X[keep], T[keep]
    lam = v.grid.lam
    k = epoch_index(T, lam) if T.size else np.zeros(0, dtype=int)
    E = dss_extend(v, X, T) if T.size else np.zeros((0, 3))
    with (out / "extend.csv").open("w", newline="") as fh:
        for key, val in {**cfg.header(), "snapshot": Path(snapshot).name,
                         "skipped_rows": skipped}.items():
            fh.write(f"# {key}={val}\n")
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "x3", "t", "k", "Ev1", "Ev2", "Ev3"])
        for x, t, kk, e in zip(X, T, k, E):
            w.writerow([repr(float(x[0])), repr(float(x[1])), repr(float(x[2])),
                        repr(float(t)), int(kk), repr(float(e[0])), repr(float(e[1])),
                        repr(float(e[2]))])
    if skipped:
        print(f"extend: skipped {skipped} row(s) with t <= 0", file=sys.stderr)
    return int(T.size), skipped


# ------------------------------------------------------------------- report

def run_report(out: Path) -> int:
    """Collect the key=value summaries and verdicts found in an output directory."""
    lines = []
    failed = False
    for path in sorted(out.glob("*.txt")):
        if path.name == "report.txt" or path.name == "snapshot.txt":
            continue
        lines.append(f"[{path.name}]")
        for line in path.read_text().splitlines():
            if line.startswith("#") or "=" not in line:
                continue
            lines.append(line)
            key, val = line.split("=", 1)
            if val == "fail" or (key.endswith("_pass") and val == "False"):
                failed = True
    if not lines:
        print(f"no summaries found in {out}", file=sys.stderr)
        return EXIT_CONFIG
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_AUDIT if failed else EXIT_OK


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dssns", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--out", help="output directory (overrides [output] dir)")
    common.add_argument("--threads", type=int, help=f"worker threads (default ${THREADS_ENV})")
    common.add_argument("--seed", type=int, help="random seed of the initial data")
    sub.add_parser("solve", parents=[common], help="continuation to sigma_target")
    v = sub.add_parser("verify", parents=[common], help="kernel and estimate audits")
    v.add_argument("--suite", default="all", help="kernels, estimates or all")
    e = sub.add_parser("extend", parents=[common], help="evaluate E v at query points")
    e.add_argument("--snapshot", required=True)
    e.add_argument("--points", required=True)
    sub.add_parser("report", parents=[common], help="summarise an output directory")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_threads(args.threads)
        cfg = load_config(args.config, args.seed)
        out = _out(args, cfg)
        if args.command == "solve":
            return run_solve(cfg, out)
        if args.command == "verify":
            return run_verify(cfg, args.suite, out)
        if args.command == "extend":
            run_extend(cfg, args.snapshot, args.points, out)
            return EXIT_OK
        return run_report(out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
