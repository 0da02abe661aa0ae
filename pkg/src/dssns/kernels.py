"""Heat kernel, Oseen tensor and its spatial gradient in closed form.

Both tensors are written in parabolic similarity form. With xi = x/sqrt(t)
and r = |xi|,

    S_ij(x, t) = t^{-3/2} [alpha(r) delta_ij + beta(r) xi_i xi_j]

where alpha and beta come from the Newtonian potential of the Gaussian,
Psi(x, t) = erf(|x| / 2 sqrt t) / (4 pi |x|).  For r < 2 every coefficient
is evaluated from its Taylor series in z = r^2/4, which avoids the
cancellation in erf(r)/r - exp(-r^2) type differences.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate

FOUR_PI = 4.0 * math.pi
_K = 1.0 / (8.0 * math.pi ** 1.5)
_SQRT_PI = math.sqrt(math.pi)
_SERIES_R = 2.0
_N_SERIES = 24
# test hook: a corrupted build that returns -S, used to exercise audit failure paths
FLIP_SIGN_ENV = "DSSNS_TEST_FLIP_SIGN"


@njit(cache=True, nogil=True)
def oseen_coeffs(r):
    """Return (alpha, beta, alpha'/r, beta'/r) of the t = 1 profile at radius r."""
    if r < _SERIES_R:
        z = 0.25 * r * r
        a = 0.0
        b = 0.0
        da = 0.0
        db = 0.0
        term = 1.0  # (-z)^m / m!
        for m in range(_N_SERIES):
            a += term * (2.0 * m + 2.0) / (2.0 * m + 3.0)
            b += term / (2.0 * m + 5.0)
            da += term * (2.0 * m + 4.0) / (2.0 * m + 5.0)
            db += term / (2.0 * m + 7.0)
            term *= -z / (m + 1.0)
        return _K * a, 0.5 * _K * b, -0.5 * _K * da, -0.25 * _K * db
    r2 = r * r
    gauss = math.exp(-0.25 * r2)
    gam = gauss / FOUR_PI ** 1.5
    h = gauss / _SQRT_PI * r - math.erf(0.5 * r)
    a_pot = h / (FOUR_PI * r2 * r)
    alpha = gam + a_pot
    beta = (-gam - 3.0 * a_pot) / r2
    dalpha = -0.5 * gam - (gam + 3.0 * a_pot) / r2
    dbeta = 0.5 * gam / r2 + (5.0 * gam + 15.0 * a_pot) / (r2 * r2)
    return alpha, beta, dalpha, dbeta


@njit(cache=True, nogil=True)
def oseen_grad_point(x0, x1, x2, t, out):
    """Fill out[i, j, k] = d_k S_ij(x, t) for a single point."""
    st = math.sqrt(t)
    e0 = x0 / st
    e1 = x1 / st
    e2 = x2 / st
    r = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
    _, beta, da, db = oseen_coeffs(r)
    scale = 1.0 / (t * t)
    xi = (e0, e1, e2)
    for i in range(3):
        for j in range(3):
            for k in range(3):
                v = db * xi[k] * xi[i] * xi[j]
                if i == j:
                    v += da * xi[k]
                if i == k:
                    v += beta * xi[j]
                if j == k:
                    v += beta * xi[i]
                out[i, j, k] = scale * v


@njit(cache=True)
def _oseen_tensor_many(x, t, out):
    for n in range(x.shape[0]):
        st = math.sqrt(t[n])
        e0 = x[n, 0] / st
        e1 = x[n, 1] / st
        e2 = x[n, 2] / st
        r = math.sqrt(e0 * e0 + e1 * e1 + e2 * e2)
        alpha, beta, _, _ = oseen_coeffs(r)
        scale = t[n] ** -1.5
        xi = (e0, e1, e2)
        for i in range(3):
            for j in range(3):
                v = beta * xi[i] * xi[j]
                if i == j:
                    v += alpha
                out[n, i, j] = scale * v


@njit(cache=True)
def _oseen_grad_many(x, t, out):
    for n in range(x.shape[0]):
        oseen_grad_point(x[n, 0], x[n, 1], x[n, 2], t[n], out[n])


def _prepare(x, t):
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("kernel evaluated at non-positive time")
    if x.shape[-1] != 3:
        raise ValueError("points must have 3 components")
    lead = np.broadcast_shapes(x.shape[:-1], t.shape)
    xb = np.ascontiguousarray(np.broadcast_to(x, lead + (3,)).reshape(-1, 3))
    tb = np.ascontiguousarray(np.broadcast_to(t, lead).reshape(-1))
    return xb, tb, lead


def heat_kernel(x, t):
    """Gaussian (4 pi t)^{-3/2} exp(-|x|^2 / 4t); broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0):
        raise ValueError("heat kernel needs t > 0")
    r2 = np.sum(x * x, axis=-1)
    return (FOUR_PI * t) ** -1.5 * np.exp(-r2 / (4.0 * t))


def oseen_tensor(x, t):
    """Oseen tensor S_ij(x, t) with shape (..., 3, 3)."""
    xb, tb, lead = _prepare(x, t)
    out = np.empty((xb.shape[0], 3, 3))
    _oseen_tensor_many(xb, tb, out)
    if os.environ.get(FLIP_SIGN_ENV) == "1":
        out = -out
    return out.reshape(lead + (3, 3))


def oseen_grad(x, t):
    """Spatial gradient with out[..., i, j, k] = d_k S_ij(x, t)."""
    xb, tb, lead = _prepare(x, t)
    out = np.empty((xb.shape[0], 3, 3, 3))
    _oseen_grad_many(xb, tb, out)
    return out.reshape(lead + (3, 3, 3))


@dataclass(frozen=True)
class KernelValue:
    tensor: np.ndarray
    x: np.ndarray
    t: float

    @classmethod
    def evaluate(cls, x, t: float) -> "KernelValue":
        x = np.asarray(x, dtype=float)
        return cls(oseen_tensor(x, t), x, float(t))

    @property
    def trace(self) -> float:
        return float(np.trace(self.tensor))


def log_sweep(n_r=40, n_t=40, r_range=(1e-2, 1e2), t_range=(1e-2, 1e2), direction=None):
    """Sample set on a log grid in (|x|, t) along a fixed direction."""
    if direction is None:
        direction = np.array([1.0, 2.0, 2.0]) / 3.0
    r = np.geomspace(*r_range, n_r)
    t = np.geomspace(*t_range, n_t)
    rr, tt = np.meshgrid(r, t, indexing="ij")
    x = rr.reshape(-1, 1) * np.asarray(direction, dtype=float)
    return x, tt.reshape(-1)


def kernel_bound_fit(order: int, samples) -> float:
    """sup |D^order S| (|x| + sqrt t)^(3 + order) over a sample set (Frobenius norm)."""
    if order not in (0, 1):
        raise ValueError("order must be 0 or 1")
    x, t = samples
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    t = np.asarray(t, dtype=float).reshape(-1)
    if x.shape[0] == 0:
        raise ValueError("empty sample set")
    scale = np.linalg.norm(x, axis=1) + np.sqrt(t)
    if np.log10(scale.max() / scale.min()) < 3.0:
        raise ValueError("sample set must span at least 3 decades of |x| + sqrt(t)")
    vals = oseen_tensor(x, t) if order == 0 else oseen_grad(x, t)
    mag = np.sqrt(np.sum(vals.reshape(len(t), -1) ** 2, axis=1))
    return float(np.max(mag * scale ** (3 + order)))


def oseen_time_integral(x, t: float) -> np.ndarray:
    """S_ij from its definition as the Leray projection of Gamma, by 1-d quadrature.

    Delta^{-1} Gamma(t) = -int_t^inf Gamma(s) ds, so
    S_ij = Gamma delta_ij + int_t^inf d_i d_j Gamma(x, s) ds.  With u = t/s
    the two scalar integrals are int_0^1 exp(-c u) u^(3/2 or 1/2) du,
    c = |x|^2 / 4t, done by algebraic-weight adaptive quadrature.  Independent
    of the closed-form coefficients; used by the kernel audit.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    if t <= 0.0:
        raise ValueError("kernel evaluated at non-positive time")
    c = float(x @ x) / (4.0 * t)
    kw = dict(weight="alg", epsabs=0.0, epsrel=1e-13, limit=200)
    A = integrate.quad(lambda u: math.exp(-c * u), 0.0, 1.0, wvar=(1.5, 0.0), **kw)[0]
    B = integrate.quad(lambda u: math.exp(-c * u), 0.0, 1.0, wvar=(0.5, 0.0), **kw)[0]
    g0 = (FOUR_PI * t) ** -1.5
    gam = g0 * math.exp(-c)
    return gam * np.eye(3) + g0 * (np.outer(x, x) * A / (4.0 * t) - 0.5 * B * np.eye(3))


def kernel_oracle_check(n_points: int = 120, seed: int = 2024, r_range=(0.1, 10.0),
                        t_range=(0.1, 10.0)) -> dict:
    """Closed form against oseen_time_integral at random points, plus the trace identity.

    Points have |x| and t log-uniform in the given ranges and uniformly
    random directions.  Returns the max relative Frobenius error and the max
    |tr S - 2 Gamma| / |S|.
    """
    rng = np.random.default_rng(seed)
    d = rng.normal(size=(n_points, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = np.exp(rng.uniform(*np.log(r_range), n_points))
    t = np.exp(rng.uniform(*np.log(t_range), n_points))
    x = d * r[:, None]
    S = oseen_tensor(x, t)
    ref = np.array([oseen_time_integral(xi, ti) for xi, ti in zip(x, t)])
    rel = np.linalg.norm((S - ref).reshape(n_points, -1), axis=1) / \
        np.linalg.norm(ref.reshape(n_points, -1), axis=1)
    gam = heat_kernel(x, t)
    # measured against |S|: where Gamma underflows tr S is a cancellation of O(|x|^-3) terms
    tr = np.abs(np.trace(S, axis1=-2, axis2=-1) - 2.0 * gam) / \
        np.linalg.norm(S.reshape(n_points, -1), axis=1)
    return {"n_points": n_points, "max_rel_error": float(rel.max()),
            "max_trace_error": float(tr.max())}


def kernel_bound_check(n: int = 40) -> dict:
    """C_0 and C_1 over a 3-decade sweep at n and 2n points per axis."""
    out = {}
    for order in (0, 1):
        c0 = kernel_bound_fit(order, log_sweep(n, n))
        c1 = kernel_bound_fit(order, log_sweep(2 * n, 2 * n))
        out[f"C{order}"] = c1
        out[f"C{order}_coarse"] = c0
        out[f"C{order}_stable"] = bool(abs(c1 - c0) <= 0.05 * max(c0, c1))
    return out
