"""Divergence-free lambda-DSS initial data built from a log-periodic potential.

Every potential is a sum of terms of two kinds, each driven by a scalar

    phi(x) = G(log|x|) F(x_hat . d),

with G a truncated Fourier series in log|x| of period log(lambda) and F a
polynomial plus a cosine series in the direction cosine.

* kind 0 (generic):  psi = phi c                      u0 = grad phi x c
* kind 1 (no swirl): psi = phi (e_z x x) / |x|        u0 = curl psi

For kind 1 the radial weight 1/|x| is folded into G so psi stays degree 0,
and with d = e_z psi points along e_theta, which makes u0 axisymmetric with
no swirl.  Gradients are analytic, so div u0 = trace(grad u0) = 0 up to
rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

_MAX_POLY = 4
_MAX_COS = 8


@njit(cache=True, nogil=True)
def _scalar_derivs(x, d, ecoef, gcos, gsin, kappa, poly, camp, cfreq, cphase, grad, hess):
    """Gradient and Hessian of G(rho) F(zeta) at one point (added into grad/hess)."""
    r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
    r = math.sqrt(r2)
    rho = math.log(r)
    # G = exp(-e rho) g(rho)
    g = 0.0
    g1 = 0.0
    g2 = 0.0
    for n in range(gcos.shape[0]):
        w = n * kappa
        c = math.cos(w * rho)
        s = math.sin(w * rho)
        g += gcos[n] * c + gsin[n] * s
        g1 += w * (-gcos[n] * s + gsin[n] * c)
        g2 += -w * w * (gcos[n] * c + gsin[n] * s)
    ex = math.exp(-ecoef * rho)
    G = ex * g
    G1 = ex * (g1 - ecoef * g)
    G2 = ex * (g2 - 2.0 * ecoef * g1 + ecoef * ecoef * g)
    zeta = (x[0] * d[0] + x[1] * d[1] + x[2] * d[2]) / r
    F = 0.0
    F1 = 0.0
    F2 = 0.0
    zp = 1.0
    for p in range(poly.shape[0]):
        F += poly[p] * zp
        if p >= 1:
            F1 += p * poly[p] * zeta ** (p - 1)
        if p >= 2:
            F2 += p * (p - 1) * poly[p] * zeta ** (p - 2)
        zp *= zeta
    for q in range(camp.shape[0]):
        arg = cfreq[q] * zeta + cphase[q]
        F += camp[q] * math.cos(arg)
        F1 += -camp[q] * cfreq[q] * math.sin(arg)
        F2 += -camp[q] * cfreq[q] * cfreq[q] * math.cos(arg)
    xh = (x[0] / r, x[1] / r, x[2] / r)
    dz = np.empty(3)
    for i in range(3):
        dz[i] = (d[i] - zeta * xh[i]) / r
    for i in range(3):
        gG_i = G1 * xh[i] / r
        gH_i = F1 * dz[i]
        grad[i] += F * gG_i + G * gH_i
        for j in range(3):
            gG_j = G1 * xh[j] / r
            gH_j = F1 * dz[j]
            hG = G2 * xh[i] * xh[j] / r2 - 2.0 * G1 * xh[i] * xh[j] / r2
            hz = (-(d[i] * xh[j] + xh[i] * d[j]) + 3.0 * zeta * xh[i] * xh[j]) / r2
            if i == j:
                hG += G1 / r2
                hz -= zeta / r2
            hH = F2 * dz[i] * dz[j] + F1 * hz
            hess[i, j] += F * hG + gG_i * gH_j + gH_i * gG_j + G * hH


@njit(cache=True, nogil=True)
def u0_point(x, kinds, dirs, vecs, ecoefs, gcos, gsin, kappa, poly, camp, cfreq, cphase, u, gu):
    """Velocity u[i] and gradient gu[i, j] = d_j u_i of the potential's curl."""
    for i in range(3):
        u[i] = 0.0
        for j in range(3):
            gu[i, j] = 0.0
    grad = np.empty(3)
    hess = np.empty((3, 3))
    for m in range(kinds.shape[0]):
        grad[:] = 0.0
        hess[:, :] = 0.0
        _scalar_derivs(x, dirs[m], ecoefs[m], gcos[m], gsin[m], kappa,
                       poly[m], camp[m], cfreq[m], cphase[m], grad, hess)
        if kinds[m] == 0:
            c = vecs[m]
            # u_i = eps_ikl d_k phi c_l
            u[0] += grad[1] * c[2] - grad[2] * c[1]
            u[1] += grad[2] * c[0] - grad[0] * c[2]
            u[2] += grad[0] * c[1] - grad[1] * c[0]
            for j in range(3):
                gu[0, j] += hess[1, j] * c[2] - hess[2, j] * c[1]
                gu[1, j] += hess[2, j] * c[0] - hess[0, j] * c[2]
                gu[2, j] += hess[0, j] * c[1] - hess[1, j] * c[0]
        else:
            # psi = chi m with m = e_z x x;  u = grad chi x m + 2 chi e_z
            mv0 = -x[1]
            mv1 = x[0]
            u[0] += -grad[2] * mv1
            u[1] += grad[2] * mv0
            u[2] += grad[0] * mv1 - grad[1] * mv0
            for j in range(3):
                dm0 = -1.0 if j == 1 else 0.0
                dm1 = 1.0 if j == 0 else 0.0
                gu[0, j] += -hess[2, j] * mv1 - grad[2] * dm1
                gu[1, j] += hess[2, j] * mv0 + grad[2] * dm0
                gu[2, j] += (hess[0, j] * mv1 + grad[0] * dm1
                             - hess[1, j] * mv0 - grad[1] * dm0)
            # 2 chi e_z: need chi itself
            chi = _scalar_value(x, dirs[m], ecoefs[m], gcos[m], gsin[m], kappa,
                                poly[m], camp[m], cfreq[m], cphase[m])
            u[2] += 2.0 * chi
            for j in range(3):
                gu[2, j] += 2.0 * grad[j]


@njit(cache=True, nogil=True)
def _scalar_grad(x, d, ecoef, gcos, gsin, kappa, poly, camp, cfreq, cphase, grad):
    """Value and gradient of G(rho) F(zeta); the gradient is added into grad."""
    r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2]
    r = math.sqrt(r2)
    rho = math.log(r)
    g = 0.0
    g1 = 0.0
    for n in range(gcos.shape[0]):
        w = n * kappa
        c = math.cos(w * rho)
        s = math.sin(w * rho)
        g += gcos[n] * c + gsin[n] * s
        g1 += w * (-gcos[n] * s + gsin[n] * c)
    ex = math.exp(-ecoef * rho)
    G = ex * g
    G1 = ex * (g1 - ecoef * g)
    zeta = (x[0] * d[0] + x[1] * d[1] + x[2] * d[2]) / r
    F = 0.0
    F1 = 0.0
    zp = 1.0
    for p in range(poly.shape[0]):
        F += poly[p] * zp
        if p >= 1:
            F1 += p * poly[p] * zeta ** (p - 1)
        zp *= zeta
    for q in range(camp.shape[0]):
        if camp[q] == 0.0:
            continue
        arg = cfreq[q] * zeta + cphase[q]
        F += camp[q] * math.cos(arg)
        F1 += -camp[q] * cfreq[q] * math.sin(arg)
    for i in range(3):
        xh = x[i] / r
        grad[i] += F * G1 * xh / r + G * F1 * (d[i] - zeta * xh) / r
    return G * F


@njit(cache=True, nogil=True)
def u0_value(x, kinds, dirs, vecs, ecoefs, gcos, gsin, kappa, poly, camp, cfreq, cphase, u):
    """Velocity only (no Hessians); same field as u0_point."""
    u[0] = 0.0
    u[1] = 0.0
    u[2] = 0.0
    grad = np.empty(3)
    for m in range(kinds.shape[0]):
        grad[:] = 0.0
        chi = _scalar_grad(x, dirs[m], ecoefs[m], gcos[m], gsin[m], kappa,
                           poly[m], camp[m], cfreq[m], cphase[m], grad)
        if kinds[m] == 0:
            c = vecs[m]
            u[0] += grad[1] * c[2] - grad[2] * c[1]
            u[1] += grad[2] * c[0] - grad[0] * c[2]
            u[2] += grad[0] * c[1] - grad[1] * c[0]
        else:
            u[0] += -grad[2] * x[0]
            u[1] += -grad[2] * x[1]
            u[2] += grad[0] * x[0] + grad[1] * x[1] + 2.0 * chi


@njit(cache=True, nogil=True)
def _scalar_value(x, d, ecoef, gcos, gsin, kappa, poly, camp, cfreq, cphase):
    r = math.sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2])
    rho = math.log(r)
    g = 0.0
    for n in range(gcos.shape[0]):
        g += gcos[n] * math.cos(n * kappa * rho) + gsin[n] * math.sin(n * kappa * rho)
    zeta = (x[0] * d[0] + x[1] * d[1] + x[2] * d[2]) / r
    F = 0.0
    for p in range(poly.shape[0]):
        F += poly[p] * zeta ** p
    for q in range(camp.shape[0]):
        if camp[q] != 0.0:
            F += camp[q] * math.cos(cfreq[q] * zeta + cphase[q])
    return math.exp(-ecoef * rho) * g * F


@njit(cache=True)
def _u0_many(pts, kinds, dirs, vecs, ecoefs, gcos, gsin, kappa, poly, camp, cfreq, cphase,
             with_grad, out_u, out_g):
    u = np.empty(3)
    gu = np.empty((3, 3))
    for n in range(pts.shape[0]):
        u0_point(pts[n], kinds, dirs, vecs, ecoefs, gcos, gsin, kappa,
                 poly, camp, cfreq, cphase, u, gu)
        out_u[n] = u
        if with_grad:
            out_g[n] = gu


@dataclass(frozen=True)
class PotentialTerms:
    """Packed coefficient arrays; one row per scalar block."""

    kinds: np.ndarray
    dirs: np.ndarray
    vecs: np.ndarray
    ecoefs: np.ndarray
    gcos: np.ndarray
    gsin: np.ndarray
    poly: np.ndarray
    camp: np.ndarray
    cfreq: np.ndarray
    cphase: np.ndarray

    @classmethod
    def empty(cls, n_log: int = 1) -> "PotentialTerms":
        z = np.zeros
        return cls(z(0, np.int64), z((0, 3)), z((0, 3)), z(0), z((0, n_log + 1)),
                   z((0, n_log + 1)), z((0, _MAX_POLY)), z((0, _MAX_COS)),
                   z((0, _MAX_COS)), z((0, _MAX_COS)))

    def scaled(self, factor: float) -> "PotentialTerms":
        return replace(self, gcos=self.gcos * factor, gsin=self.gsin * factor)

    def arrays(self):
        return (self.kinds, self.dirs, self.vecs, self.ecoefs, self.gcos, self.gsin)

    def shape_arrays(self):
        return (self.poly, self.camp, self.cfreq, self.cphase)


@dataclass(frozen=True)
class ProfileSpec:
    """Recipe for random smooth (or lacunary-rough) DSS profiles.

    n_terms scalar blocks, each with log_modes Fourier modes in log|x| and a
    polynomial of angular_degree in the direction cosine.  rough_terms > 0
    adds a lacunary cosine series with amplitudes 2^{-k(1+gamma)}, so the
    velocity is only nominally C^gamma.
    """

    n_terms: int = 2
    log_modes: int = 1
    angular_degree: int = 2
    rough_terms: int = 0
    gamma: float = 0.5
    beta: float = 0.5
    amplitude: float = 1.0
    dss_amplitude: float = 1.0
    seed: int = 0


@dataclass
class DssInitialData:
    lam: float
    terms: PotentialTerms
    holder_class: str
    exponent: float
    axisymmetric_noswirl: bool = False
    C_star: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def kappa(self) -> float:
        return 2.0 * math.pi / math.log(self.lam)

    @property
    def is_zero(self) -> bool:
        t = self.terms
        return t.kinds.size == 0 or (not np.any(t.gcos) and not np.any(t.gsin))

    def _eval(self, x, with_grad):
        x = np.asarray(x, dtype=float)
        pts = np.ascontiguousarray(x.reshape(-1, 3))
        u = np.zeros((pts.shape[0], 3))
        g = np.zeros((pts.shape[0] if with_grad else 1, 3, 3))
        if self.terms.kinds.size:
            _u0_many(pts, *self.terms.arrays(), self.kappa, *self.terms.shape_arrays(),
                     with_grad, u, g)
        if with_grad:
            return u.reshape(x.shape), g.reshape(x.shape[:-1] + (3, 3))
        return u.reshape(x.shape)

    def __call__(self, x):
        """u0 at points of shape (..., 3)."""
        return self._eval(x, False)

    def grad(self, x):
        """Analytic gradient, out[..., i, j] = d_j u0_i."""
        return self._eval(x, True)[1]

    def divergence(self, x):
        return np.trace(self.grad(x), axis1=-2, axis2=-1)


def annulus_samples(lam: float, n_r: int = 12, n_dir: int = 1500) -> np.ndarray:
    """Deterministic points filling the fundamental annulus 1 <= |x| <= lam."""
    i = np.arange(n_dir) + 0.5
    mu = 1.0 - 2.0 * i / n_dir
    phi = math.pi * (1.0 + math.sqrt(5.0)) * i
    s = np.sqrt(1.0 - mu * mu)
    dirs = np.stack([s * np.cos(phi), s * np.sin(phi), mu], axis=1)
    radii = lam ** np.linspace(0.0, 1.0, n_r)
    return (radii[:, None, None] * dirs[None]).reshape(-1, 3)


def measure_c_star(u0: DssInitialData, samples=None) -> float:
    """sup over the fundamental annulus of |x| |u0(x)|, by sampling."""
    pts = annulus_samples(u0.lam) if samples is None else samples
    if u0.is_zero:
        return 0.0
    return float(np.max(np.linalg.norm(pts, axis=1) * np.linalg.norm(u0(pts), axis=1)))


def _random_terms(spec: ProfileSpec, kind: int, rng) -> PotentialTerms:
    n = spec.n_terms
    L = spec.log_modes + 1
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    vecs = rng.normal(size=(n, 3))
    if kind == 1:
        dirs[:] = (0.0, 0.0, 1.0)
        vecs[:] = 0.0
    decay = 1.0 / (1.0 + np.arange(L)) ** 2
    decay[1:] *= spec.dss_amplitude
    gcos = rng.normal(size=(n, L)) * decay
    gsin = rng.normal(size=(n, L)) * decay
    gsin[:, 0] = 0.0
    poly = np.zeros((n, _MAX_POLY))
    deg = min(spec.angular_degree, _MAX_POLY - 1)
    poly[:, : deg + 1] = rng.normal(size=(n, deg + 1))
    camp = np.zeros((n, _MAX_COS))
    cfreq = np.zeros((n, _MAX_COS))
    cphase = np.zeros((n, _MAX_COS))
    for k in range(min(spec.rough_terms, _MAX_COS)):
        # phi in C^{1,gamma} in angle, so u0 = curl(phi c) is C^gamma
        camp[:, k] = 2.0 ** (-k * (1.0 + spec.gamma))
        cfreq[:, k] = math.pi * 2.0 ** k
        cphase[:, k] = rng.uniform(0, 2 * math.pi, size=n)
    return PotentialTerms(np.full(n, kind, dtype=np.int64), dirs, vecs,
                          np.full(n, float(kind)), gcos, gsin, poly, camp, cfreq, cphase)


def _build(spec: ProfileSpec, lam: float, C_star_target: float, kind: int) -> DssInitialData:
    if lam <= 1.0:
        raise ValueError("DSS factor lambda must exceed 1")
    if C_star_target <= 0.0:
        raise ValueError("C_star_target must be positive")
    rng = np.random.default_rng(spec.seed)
    terms = _random_terms(spec, kind, rng)
    if spec.amplitude == 0.0 or spec.n_terms == 0:
        terms = terms.scaled(0.0)
    rough = spec.rough_terms > 0
    u0 = DssInitialData(
        lam=float(lam), terms=terms,
        holder_class="C^gamma" if rough else "C^{1,beta}",
        exponent=spec.gamma if rough else spec.beta,
        axisymmetric_noswirl=(kind == 1),
        meta={"seed": spec.seed, "rough_terms": spec.rough_terms},
    )
    c = measure_c_star(u0)
    if c == 0.0:
        return u0
    u0.terms = terms.scaled(C_star_target / c)
    u0.C_star = measure_c_star(u0)
    return u0


def make_initial_data(spec: ProfileSpec, lam: float, C_star_target: float) -> DssInitialData:
    """Generic (non-symmetric) DSS datum with sup |x||u0| = C_star_target."""
    return _build(spec, lam, C_star_target, kind=0)


def make_axisym_noswirl(spec: ProfileSpec, lam: float, C_star_target: float) -> DssInitialData:
    """Axisymmetric DSS datum whose swirl component vanishes identically."""
    return _build(spec, lam, C_star_target, kind=1)


def zero_data(lam: float) -> DssInitialData:
    return DssInitialData(float(lam), PotentialTerms.empty(), "C^{1,beta}", 0.5)
