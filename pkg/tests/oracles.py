"""Slow reference computations that share no code path with the library."""
import math

import numpy as np
from numpy.polynomial.legendre import leggauss


def _composite(breaks, n):
    xg, wg = leggauss(n)
    nodes, weights = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b <= a:
            continue
        nodes.append(0.5 * (b - a) * xg + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * wg)
    return np.concatenate(nodes), np.concatenate(weights)


def _frame(x):
    r = np.linalg.norm(x)
    if r == 0.0:
        return np.eye(3), 0.0
    e3 = x / r
    trial = np.array([1.0, 0.0, 0.0]) if abs(e3[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = trial - trial.dot(e3) * e3
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e3, e1)
    return np.stack([e1, e2, e3], axis=1), r


def oseen_by_quadrature(x, t, n=24):
    """S_ij = Gamma delta_ij + (1/4 pi) int d_i d_j Gamma(x - z, t) / |z| dz.

    The Hessian of the Newtonian potential of Gamma is moved onto Gamma, and
    the convolution is done in spherical coordinates about z = 0 with the pole
    along x, composite Gauss-Legendre in |z| and in 1 - cos(theta), uniform in
    azimuth.
    """
    x = np.asarray(x, dtype=float)
    rot, r0 = _frame(x)
    st = math.sqrt(t)
    lo = max(0.0, r0 - 14.0 * st)
    hi = r0 + 14.0 * st
    rb = [0.0] if lo == 0.0 else [0.0, lo]
    rb = np.unique(np.concatenate([rb, np.linspace(lo, hi, int(np.ceil((hi - lo) / (0.5 * st))) + 1)]))
    rho, wrho = _composite(rb, n)
    nphi = 8
    phi = 2 * np.pi * np.arange(nphi) / nphi
    total = np.zeros((3, 3))
    g0 = (4 * np.pi * t) ** -1.5
    for rk, wk in zip(rho, wrho):
        kappa = r0 * rk / (2 * t)
        wb = [0.0]
        edge = 1.0 / kappa if kappa > 0 else 2.0
        while edge < 2.0 and len(wb) < 12:
            wb.append(edge)
            edge *= 3.0
        wb.append(2.0)
        w, ww = _composite(np.array(wb), n)
        mu = 1.0 - w
        sin = np.sqrt(np.clip(1 - mu * mu, 0, None))
        # d = x' - rho omega in the rotated frame (x' along e3)
        d = np.empty((len(mu), nphi, 3))
        d[..., 0] = -rk * sin[:, None] * np.cos(phi)[None, :]
        d[..., 1] = -rk * sin[:, None] * np.sin(phi)[None, :]
        d[..., 2] = (r0 - rk * mu)[:, None]
        # |d|^2 = (r0 - rho)^2 + 2 r0 rho w, split to keep exp() accurate
        gauss = g0 * np.exp(-((r0 - rk) ** 2) / (4 * t) - kappa * w)[:, None]
        hess = gauss[..., None, None] * (
            d[..., :, None] * d[..., None, :] / (4 * t * t) - np.eye(3) / (2 * t)
        )
        inner = np.einsum("m,mpij->ij", ww, hess) * (2 * np.pi / nphi)
        total += wk * rk * inner / (4 * np.pi)
    gam = g0 * math.exp(-r0 * r0 / (4 * t))
    local = gam * np.eye(3) + total
    return rot @ local @ rot.T


E_TEST = np.array([[1.0, 0.3, -0.2], [0.3, -0.5, 0.4], [-0.2, 0.4, 0.7]])


def gaussian_source(b, c, c0=0.0, E=E_TEST):
    """f(y, s) = s^b Gamma(y, c s + c0) E, a heat-kernel source with a closed-form Phi.

    Since S(t - s) * Gamma(c s + c0) = S(t - s + c s + c0), Phi f reduces to
    the 1-d integral int_0^t s^b d_k S_ik(x, t - s + c s + c0) E_kj ... ds,
    done by adaptive quadrature on the Oseen gradient.
    """
    from dssns.kernels import heat_kernel, oseen_grad
    from scipy.integrate import quad

    def f(y, s):
        g = (np.asarray(s) ** b) * heat_kernel(y, c * np.asarray(s) + c0)
        return g[:, None, None] * E

    def phi(x, t):
        def comp(i, s):
            G = oseen_grad(x, t - s + c * s + c0)
            return s ** b * np.einsum("jk,kj->", G[i], E)
        return np.array([quad(lambda s: comp(i, s), 0, t, limit=400, epsabs=0,
                              epsrel=1e-12)[0] for i in range(3)])
    return f, phi
