"""Strip grids, strip fields, the DSS extension and the weighted norm.

A field on the strip Q = R^3 x [1, lam^2) is stored at nodes
(shell rho_i, angle (mu_a, phi_b), time t_j) with rho uniform in log|x| and
t_j = lam^(2j/n_time).  Values between nodes come from cubic Lagrange
interpolation in rho and log t, and either spectral or bilinear
interpolation on the sphere.  Time stencils that leave [1, lam^2) wrap
around through the DSS identity, so the interpolant is DSS by construction.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numba import njit

from .initial_data import DssInitialData, u0_point

ANGULAR_SCHEMES = ("spectral", "bilinear")


def bracket(z) -> np.ndarray | float:
    """Japanese bracket (|z|^2 + 2)^(1/2) along the last axis."""
    z = np.asarray(z, dtype=float)
    out = np.sqrt(np.sum(z * z, axis=-1) + 2.0)
    return float(out) if out.ndim == 0 else out


def epoch_index(t, lam: float) -> np.ndarray:
    """Integer k with 1 <= lam^(2k) t < lam^2."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("time must be positive")
    L = 2.0 * math.log(lam)
    k = -np.floor(np.log(t) / L).astype(np.int64)
    s = t * lam ** (2.0 * k)
    k = np.where(s < 1.0, k + 1, k)
    s = t * lam ** (2.0 * k)
    k = np.where(s >= lam * lam, k - 1, k)
    return k


@dataclass(frozen=True)
class StripGrid:
    lam: float
    n_rho: int
    rho_min: float
    rho_max: float
    n_theta: int
    n_phi: int
    n_time: int
    angular: str = "spectral"

    def __post_init__(self):
        if not self.lam > 1.0:
            raise ValueError("lambda must exceed 1")
        if not self.rho_min < self.rho_max:
            raise ValueError("rho_min must be below rho_max")
        if min(self.n_rho, self.n_theta, self.n_phi, self.n_time) < 2:
            raise ValueError("all grid counts must be at least 2")
        if self.n_rho < 4:
            raise ValueError("cubic radial interpolation needs at least 4 shells")
        if self.n_phi % 2:
            raise ValueError("n_phi must be even")
        if self.angular not in ANGULAR_SCHEMES:
            raise ValueError(f"angular scheme must be one of {ANGULAR_SCHEMES}")

    @property
    def n_ang(self) -> int:
        return self.n_theta * self.n_phi

    @property
    def drho(self) -> float:
        return (self.rho_max - self.rho_min) / (self.n_rho - 1)

    @property
    def rho(self) -> np.ndarray:
        return self.rho_min + self.drho * np.arange(self.n_rho)

    @property
    def radii(self) -> np.ndarray:
        return np.exp(self.rho)

    @property
    def mu(self) -> np.ndarray:
        return np.polynomial.legendre.leggauss(self.n_theta)[0]

    @property
    def phi(self) -> np.ndarray:
        return 2.0 * math.pi * np.arange(self.n_phi) / self.n_phi

    @property
    def directions(self) -> np.ndarray:
        mu = self.mu
        s = np.sqrt(1.0 - mu * mu)
        ph = self.phi
        d = np.stack([s[:, None] * np.cos(ph)[None], s[:, None] * np.sin(ph)[None],
                      np.repeat(mu[:, None], self.n_phi, axis=1)], axis=-1)
        return d.reshape(-1, 3)

    @property
    def angular_weights(self) -> np.ndarray:
        w = np.polynomial.legendre.leggauss(self.n_theta)[1]
        return np.repeat(w, self.n_phi) * (2.0 * math.pi / self.n_phi)

    @property
    def times(self) -> np.ndarray:
        return self.lam ** (2.0 * np.arange(self.n_time) / self.n_time)

    @property
    def points(self) -> np.ndarray:
        """Spatial nodes, shape (n_rho, n_ang, 3)."""
        return self.radii[:, None, None] * self.directions[None]

    def node_arrays(self):
        """Flattened (x, t) for every node in (shell, angle, time) order."""
        x = np.broadcast_to(self.points[:, :, None, :],
                            (self.n_rho, self.n_ang, self.n_time, 3)).reshape(-1, 3)
        t = np.broadcast_to(self.times[None, None, :],
                            (self.n_rho, self.n_ang, self.n_time)).reshape(-1)
        return np.ascontiguousarray(x), np.ascontiguousarray(t)

    @property
    def shape(self):
        return (self.n_rho, self.n_ang, self.n_time)

    def params(self) -> dict:
        return {"lambda": self.lam, "n_rho": self.n_rho, "rho_min": self.rho_min,
                "rho_max": self.rho_max, "n_theta": self.n_theta, "n_phi": self.n_phi,
                "n_time": self.n_time, "angular": self.angular}

    def mu_scale(self) -> np.ndarray:
        """sqrt(1 - mu_a^2); mode m carries its |m|-th power."""
        mu = self.mu
        return np.sqrt(1.0 - mu * mu)

    def bary_weights(self) -> np.ndarray:
        mu = self.mu
        w = np.ones_like(mu)
        for a in range(mu.size):
            for b in range(mu.size):
                if a != b:
                    w[a] /= mu[a] - mu[b]
        return w


# ---------------------------------------------------------------- numba core

@njit(cache=True, nogil=True)
def _angular_weights(mu, phi, mu_nodes, bary, mu_scale, n_phi, scheme, W):
    """Nodal weights W[a, b] reproducing the angular interpolant at (mu, phi)."""
    nt = mu_nodes.shape[0]
    if scheme == 1:
        for a in range(nt):
            for b in range(n_phi):
                W[a, b] = 0.0
        # bilinear in (mu, phi); mu clamped to the node range
        m = mu
        if m < mu_nodes[0]:
            m = mu_nodes[0]
        if m > mu_nodes[nt - 1]:
            m = mu_nodes[nt - 1]
        a0 = 0
        while a0 < nt - 2 and m > mu_nodes[a0 + 1]:
            a0 += 1
        fa = (m - mu_nodes[a0]) / (mu_nodes[a0 + 1] - mu_nodes[a0])
        dphi = 2.0 * math.pi / n_phi
        p = phi / dphi
        b0f = math.floor(p)
        fb = p - b0f
        b0 = int(b0f) % n_phi
        b1 = (b0 + 1) % n_phi
        W[a0, b0] += (1 - fa) * (1 - fb)
        W[a0, b1] += (1 - fa) * fb
        W[a0 + 1, b0] += fa * (1 - fb)
        W[a0 + 1, b1] += fa * fb
        return
    # Lagrange basis in mu (barycentric, exact at nodes)
    L = np.empty(nt)
    hit = -1
    for a in range(nt):
        if mu == mu_nodes[a]:
            hit = a
    if hit >= 0:
        for a in range(nt):
            L[a] = 0.0
        L[hit] = 1.0
    else:
        s = 0.0
        for a in range(nt):
            L[a] = bary[a] / (mu - mu_nodes[a])
            s += L[a]
        for a in range(nt):
            L[a] /= s
    # longitudinal mode m carries the pole factor sin(theta)^|m|, which keeps
    # the interpolant smooth on the sphere
    sm = math.sqrt(max(0.0, 1.0 - mu * mu))
    M = n_phi // 2
    C = np.empty(M + 1)
    for b in range(n_phi):
        d = phi - 2.0 * math.pi * b / n_phi
        C[0] = 1.0 / n_phi
        for m in range(1, M):
            C[m] = 2.0 * math.cos(m * d) / n_phi
        C[M] = math.cos(M * d) / n_phi
        for a in range(nt):
            q = sm / mu_scale[a]
            acc = C[0]
            qm = 1.0
            for m in range(1, M + 1):
                qm *= q
                acc += C[m] * qm
            W[a, b] = L[a] * acc


@njit(cache=True, nogil=True)
def _lagrange4(u, w):
    """Cubic Lagrange weights for nodes -1, 0, 1, 2 at offset u."""
    w[0] = -u * (u - 1.0) * (u - 2.0) / 6.0
    w[1] = (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0
    w[2] = -(u + 1.0) * u * (u - 2.0) / 2.0
    w[3] = (u + 1.0) * u * (u - 1.0) / 6.0


@njit(cache=True, nogil=True)
def inner_weights(r, rho_min, drho, w):
    """Cubic Lagrange weights in r (not log r) on the four innermost shells.

    Used for 0 <= r < r_min, where the field is smooth in x but the log
    radius runs off to -inf; extrapolating along the ray beats freezing the
    innermost value by one to two orders on smooth profiles.
    """
    nodes = np.empty(4)
    for i in range(4):
        nodes[i] = math.exp(rho_min + i * drho)
    for i in range(4):
        acc = 1.0
        for j in range(4):
            if j != i:
                acc *= (r - nodes[j]) / (nodes[i] - nodes[j])
        w[i] = acc


@njit(cache=True, nogil=True)
def strip_eval_point(x0, x1, x2, t, lam, rho_min, drho, n_rho, n_time, mu_nodes, bary,
                     mu_scale, n_phi, scheme, table, tail, gamma, W, out):
    """DSS-extended interpolant at one (x, t); table is (n_rho, n_time, n_ang, 3).

    Returns the summed time weight of stencil nodes that fell in the far
    field (beyond the outermost shell), for callers that add a far model.
    """
    Llam = math.log(lam)
    # epoch reduction
    k = -math.floor(math.log(t) / (2.0 * Llam))
    s = t * lam ** (2.0 * k)
    if s < 1.0:
        k += 1
        s = t * lam ** (2.0 * k)
    if s >= lam * lam:
        k -= 1
        s = t * lam ** (2.0 * k)
    sc = lam ** k
    y0 = x0 * sc
    y1 = x1 * sc
    y2 = x2 * sc
    r = math.sqrt(y0 * y0 + y1 * y1 + y2 * y2)
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    if r > 0.0:
        mu = y2 / r
        phi = math.atan2(y1, y0)
        if phi < 0.0:
            phi += 2.0 * math.pi
        rho = math.log(r)
    else:
        mu = 1.0
        phi = 0.0
        rho = -math.inf
    _angular_weights(mu, phi, mu_nodes, bary, mu_scale, n_phi, scheme, W)
    nt = mu_nodes.shape[0]
    dtau = 2.0 * Llam / n_time
    u = math.log(s) / dtau
    j0 = int(math.floor(u))
    if j0 > n_time - 1:
        j0 = n_time - 1
    wt = np.empty(4)
    wr = np.empty(4)
    _lagrange4(u - j0, wt)
    rho_max = rho_min + drho * (n_rho - 1)
    far_w = 0.0
    for jt in range(4):
        jn = j0 - 1 + jt
        q = jn // n_time
        jj = jn - q * n_time
        fac = wt[jt] * lam ** (-q)
        rp = rho - q * Llam
        if rp > rho_max:
            brk = math.pow(math.exp(2.0 * rp) + 2.0, -0.5 * (1.0 + gamma))
            for a in range(nt):
                for b in range(n_phi):
                    wab = W[a, b] * fac * brk
                    if wab != 0.0:
                        ia = a * n_phi + b
                        for c in range(3):
                            out[c] += wab * tail[jj, ia, c]
            far_w += wt[jt]
            continue
        if rp < rho_min:
            inner_weights(math.exp(rp), rho_min, drho, wr)
            i0 = 1
        else:
            ur = (rp - rho_min) / drho
            i0 = int(math.floor(ur))
            if i0 < 1:
                i0 = 1
            if i0 > n_rho - 3:
                i0 = n_rho - 3
            _lagrange4(ur - i0, wr)
        for ir in range(4):
            fr = fac * wr[ir]
            if fr == 0.0:
                continue
            ish = i0 - 1 + ir
            for a in range(nt):
                for b in range(n_phi):
                    wab = W[a, b] * fr
                    if wab != 0.0:
                        ia = a * n_phi + b
                        for c in range(3):
                            out[c] += wab * table[ish, jj, ia, c]
    out[0] *= sc
    out[1] *= sc
    out[2] *= sc
    return far_w


@njit(cache=True)
def _strip_eval_many(X, T, lam, rho_min, drho, n_rho, n_time, mu_nodes, bary, mu_scale,
                     n_phi, scheme, table, tail, gamma, u0_on, sigma, kinds, dirs, vecs,
                     ecoefs, gcos, gsin, kappa, poly, camp, cfreq, cphase, out):
    W = np.empty((mu_nodes.shape[0], n_phi))
    val = np.empty(3)
    u = np.empty(3)
    gu = np.empty((3, 3))
    for n in range(X.shape[0]):
        fw = strip_eval_point(X[n, 0], X[n, 1], X[n, 2], T[n], lam, rho_min, drho, n_rho,
                              n_time, mu_nodes, bary, mu_scale, n_phi, scheme, table, tail,
                              gamma, W, val)
        if u0_on and fw != 0.0:
            u0_point(X[n], kinds, dirs, vecs, ecoefs, gcos, gsin, kappa, poly, camp, cfreq,
                     cphase, u, gu)
            for c in range(3):
                val[c] += sigma * fw * u[c]
        out[n] = val


# ------------------------------------------------------------- StripField

def fit_tail(grid: StripGrid, samples: np.ndarray, gamma: float) -> np.ndarray:
    """Least-squares amplitudes A with v ~ A <x>^-(1+gamma) on the outer two shells.

    Returns shape (n_ang, n_time, 3).
    """
    r = grid.radii[-2:]
    w = (r * r + 2.0) ** (-0.5 * (1.0 + gamma))
    v = samples[-2:]
    return np.einsum("s,sajc->ajc", w, v) / np.sum(w * w)


@dataclass
class StripField:
    """Vector field on the fundamental strip.  samples has shape (n_rho, n_ang, n_time, 3)."""

    grid: StripGrid
    samples: np.ndarray
    gamma: float
    tail: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.ascontiguousarray(np.asarray(self.samples, dtype=float))
        if self.samples.shape != self.grid.shape + (3,):
            raise ValueError(f"samples shape {self.samples.shape} does not match grid "
                             f"{self.grid.shape + (3,)}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if self.tail is None:
            self.tail = fit_tail(self.grid, self.samples, self.gamma)
        self.samples.setflags(write=False)
        self._table = None
        self._tail_t = None

    @classmethod
    def zeros(cls, grid: StripGrid, gamma: float) -> "StripField":
        return cls(grid, np.zeros(grid.shape + (3,)), gamma)

    @classmethod
    def from_function(cls, grid: StripGrid, gamma: float, fn) -> "StripField":
        """Sample fn(x, t) -> (N, 3) at the grid nodes."""
        x, t = grid.node_arrays()
        return cls(grid, np.asarray(fn(x, t)).reshape(grid.shape + (3,)), gamma)

    def with_samples(self, samples: np.ndarray) -> "StripField":
        return StripField(self.grid, samples, self.gamma)

    def __add__(self, other: "StripField") -> "StripField":
        return self.with_samples(self.samples + other.samples)

    def __sub__(self, other: "StripField") -> "StripField":
        return self.with_samples(self.samples - other.samples)

    def __mul__(self, a: float) -> "StripField":
        return self.with_samples(a * self.samples)

    __rmul__ = __mul__

    def packed(self):
        if self._table is None:
            self._table = np.ascontiguousarray(self.samples.transpose(0, 2, 1, 3))
            self._tail_t = np.ascontiguousarray(self.tail.transpose(1, 0, 2))
        return self._table, self._tail_t

    def evaluator(self, u0: Optional[DssInitialData] = None, sigma: float = 0.0,
                  extra: Optional[np.ndarray] = None) -> "StripEvaluator":
        return StripEvaluator(self, u0, sigma, extra)

    def __call__(self, x, t):
        return dss_extend(self, x, t)


class StripEvaluator:
    """Callable (x, t) -> field using the strip interpolant and the DSS wrap.

    With u0 given, the evaluated field is sigma*U + v where extra holds the
    tabulated sigma*U samples; beyond the outermost shell U is replaced by
    u0 itself.
    """

    def __init__(self, v: StripField, u0: Optional[DssInitialData] = None,
                 sigma: float = 0.0, extra: Optional[np.ndarray] = None):
        g = v.grid
        self.grid = g
        self.lam = g.lam
        table, tail = v.packed()
        if extra is not None:
            table = np.ascontiguousarray(table + extra.transpose(0, 2, 1, 3))
        self.table = table
        self.tail = tail
        self.gamma = v.gamma
        self.mu_nodes = g.mu
        self.bary = g.bary_weights()
        self.mu_scale = g.mu_scale()
        self.scheme = ANGULAR_SCHEMES.index(g.angular)
        self.sigma = float(sigma)
        self.u0 = u0
        if u0 is not None and sigma != 0.0 and u0.terms.kinds.size:
            self.u0_on = True
            self.terms = u0.terms
            self.kappa = u0.kappa
        else:
            from .initial_data import PotentialTerms
            self.u0_on = False
            self.terms = PotentialTerms.empty()
            self.kappa = 1.0

    def args(self):
        """Positional arguments expected by strip_eval_point after (x, t)."""
        g = self.grid
        return (g.lam, g.rho_min, g.drho, g.n_rho, g.n_time, self.mu_nodes, self.bary,
                self.mu_scale, g.n_phi, self.scheme, self.table, self.tail, self.gamma)

    def far_args(self):
        return (self.u0_on, self.sigma, *self.terms.arrays(), self.kappa,
                *self.terms.shape_arrays())

    def __call__(self, x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        shape = np.broadcast_shapes(x.shape[:-1], t.shape)
        X = np.ascontiguousarray(np.broadcast_to(x, shape + (3,)).reshape(-1, 3))
        T = np.ascontiguousarray(np.broadcast_to(t, shape).reshape(-1))
        if np.any(T <= 0):
            raise ValueError("time must be positive")
        out = np.empty((X.shape[0], 3))
        _strip_eval_many(X, T, *self.args(), *self.far_args(), out)
        return out.reshape(shape + (3,))


def dss_extend(v: StripField, x, t) -> np.ndarray:
    """E v(x, t) = lam^k v(lam^k x, lam^(2k) t), k the epoch index of t."""
    return StripEvaluator(v)(x, t)


def x_norm(v: StripField) -> float:
    """sup <x>^(1+gamma) |v| over samples and the tail model."""
    r = v.grid.radii
    w = (r * r + 2.0) ** (0.5 * (1.0 + v.gamma))
    s = np.max(w[:, None, None] * np.linalg.norm(v.samples, axis=-1)) if v.samples.size else 0.0
    tail = np.max(np.linalg.norm(v.tail, axis=-1)) if v.tail.size else 0.0
    return float(max(s, tail))


def x_norm_samples(grid: StripGrid, gamma: float, samples: np.ndarray) -> float:
    """X-norm of raw sample arrays (no tail), used for residuals."""
    r = grid.radii
    w = (r * r + 2.0) ** (0.5 * (1.0 + gamma))
    return float(np.max(w[:, None, None] * np.linalg.norm(samples, axis=-1)))


def boundary_mismatch(v: StripField) -> float:
    """Weighted gap between v(x, 1) and lam v(lam x, lam^2) extrapolated in time.

    The last four time slices are extrapolated (cubic in log t) to lam^2,
    then interpolated in rho to lam x.  Reported in X-norm units.
    """
    from scipy.interpolate import CubicSpline

    g = v.grid
    nt = g.n_time
    if nt < 4:
        return float("nan")
    dt = 2.0 * math.log(g.lam) / nt
    taus = dt * np.arange(nt - 4, nt)
    target = 2.0 * math.log(g.lam)
    wts = np.array([np.prod([(target - taus[m]) / (taus[l] - taus[m])
                             for m in range(4) if m != l]) for l in range(4)])
    end = np.einsum("j,iajc->iac", wts, v.samples[:, :, nt - 4:, :])
    spline = CubicSpline(g.rho, end, axis=0)
    rho_s = g.rho + math.log(g.lam)
    inside = rho_s <= g.rho_max
    pred = g.lam * spline(rho_s[inside])
    diff = pred - v.samples[inside, :, 0, :]
    r = g.radii[inside]
    w = (r * r + 2.0) ** (0.5 * (1.0 + v.gamma))
    return float(np.max(w[:, None] * np.linalg.norm(diff, axis=-1)))


# ------------------------------------------------------------- snapshots

_HEADER_KEYS = ("lambda", "gamma", "n_rho", "rho_min", "rho_max", "n_theta", "n_phi",
                "n_time", "angular")


def write_snapshot(v: StripField, path, header: Optional[dict] = None) -> None:
    """Plain-text snapshot: key=value header, then index and value columns."""
    g = v.grid
    lines = []
    for k, val in (header or {}).items():
        lines.append(f"# {k}={val}")
    lines.append("format=dssns-strip-1")
    params = g.params()
    params["gamma"] = v.gamma
    for k in _HEADER_KEYS:
        val = params[k]
        lines.append(f"{k}={val!r}" if isinstance(val, float) else f"{k}={val}")
    lines.append("columns=shell,angle,time,v1,v2,v3")
    s = v.samples
    for i in range(g.n_rho):
        for a in range(g.n_ang):
            for j in range(g.n_time):
                x = s[i, a, j]
                lines.append(f"{i} {a} {j} {float(x[0])!r} {float(x[1])!r} {float(x[2])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_snapshot(path) -> StripField:
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                k, val = line.split("=", 1)
                meta[k] = val
            else:
                rows.append(line)
    if meta.get("format") != "dssns-strip-1":
        raise ValueError("not a strip snapshot")
    g = StripGrid(float(meta["lambda"]), int(meta["n_rho"]), float(meta["rho_min"]),
                  float(meta["rho_max"]), int(meta["n_theta"]), int(meta["n_phi"]),
                  int(meta["n_time"]), meta.get("angular", "spectral"))
    samples = np.zeros(g.shape + (3,))
    for line in rows:
        p = line.split()
        samples[int(p[0]), int(p[1]), int(p[2])] = [float(p[3]), float(p[4]), float(p[5])]
    return StripField(g, samples, float(meta["gamma"]))


# ------------------------------------------------------------- diagnostics

def swirl_component(u: Callable, points) -> float:
    """max |u . e_theta| over points off the symmetry axis."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    rc = np.hypot(pts[:, 0], pts[:, 1])
    scale = np.linalg.norm(pts, axis=1)
    on_axis = rc <= 1e-12 * np.maximum(scale, 1e-300)
    n_skip = int(np.count_nonzero(on_axis))
    if n_skip:
        warnings.warn(f"swirl_component skipped {n_skip} point(s) on the axis", stacklevel=2)
    pts = pts[~on_axis]
    if pts.shape[0] == 0:
        return 0.0
    rc = rc[~on_axis]
    e = np.stack([-pts[:, 1] / rc, pts[:, 0] / rc, np.zeros_like(rc)], axis=1)
    vals = np.asarray(u(pts)).reshape(-1, 3)
    return float(np.max(np.abs(np.sum(vals * e, axis=1))))


def divergence_residual(u: Callable, points, h: float) -> float:
    """max over points of the central-difference divergence of u."""
    if h <= 0:
        raise ValueError("h must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    div = np.zeros(pts.shape[0])
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        div += (np.asarray(u(pts + e))[:, k] - np.asarray(u(pts - e))[:, k]) / (2.0 * h)
    return float(np.max(np.abs(div)))
