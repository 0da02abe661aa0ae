"""Heat semigroup of DSS data, the Stokes potential Phi and pressure recovery.

Phi f(x, t)_i = int_0^t int d_k S_ij(x - y, t - s) f_kj(y, s) dy ds

is evaluated per target with a hard split at |y| = a|x|.  The outer part is
integrated on spheres about the target with geometric radial panels and
angular zones graded in |y|; small spheres use an antipodally symmetric
rule, so the odd kernel annihilates f frozen at the target and the ball
rho < rho0 is dropped.  The inner part, where f may be singular as s -> 0,
is integrated on spheres about the origin.  Every panel break scales with
|x| or sqrt t, so DSS inputs give DSS outputs to rounding.

Both spherical frames use the meridional plane through the target as a
mirror plane, which keeps axisymmetric no-swirl inputs exactly no-swirl.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, asdict, replace
from typing import Optional

import numpy as np
from numba import njit, prange

from .dss_fields import (ANGULAR_SCHEMES, StripEvaluator, StripField, StripGrid,
                         _angular_weights, _lagrange4, bracket, inner_weights,
                         strip_eval_point)
from .initial_data import DssInitialData, u0_point, u0_value
from .kernels import oseen_grad_point

_MAXGL = 48
_GLX = np.zeros((_MAXGL + 1, _MAXGL))
_GLW = np.zeros((_MAXGL + 1, _MAXGL))
for _n in range(1, _MAXGL + 1):
    _x, _w = np.polynomial.legendre.leggauss(_n)
    _GLX[_n, :_n] = _x
    _GLW[_n, :_n] = _w


# slots of the packed parameter vector
(_NEAR, _RRAT, _FAR, _NR, _TRAT, _NT, _SMIN, _TCUT, _SPLIT, _ZRAT, _TSTAT, _NT0, _NCLS,
 _ORAT, _SPOW, _NS, _CORE) = range(17)
_ANG = 17
_NP = 25


@dataclass(frozen=True)
class QuadratureSpec:
    """Resolution knobs for Phi and the heat semigroup.

    near_radius_factor  rho0 / min(|x|, sqrt t); the dropped inner ball
    k_min_offset        past epochs kept: s >= t lam^(-2 k_min_offset); None picks
                        the smallest count with lam^(-2 k) <= past_tol
    radial_ratio        geometric ratio of radial panels
    far_factor          outer radius as a multiple of max(|x|, sqrt t)
    n_radial, n_time    Gauss-Legendre points per radial / time panel
    n_time0             points on the first time panel, tau < rho^2 / tau_stat
    time_ratio          geometric ratio of time panels
    tau_cut             geometric time panels stop at tau_cut rho^2 (or t/2)
    n_s, s_power        graded panel s = (t/2) z^s_power near s = 0
    split               the hard split |y| = split |x| between the two pieces
    zone_ratio          |y| ratio between angular zones on target spheres
    near_class          spheres below near_class max(|x|, sqrt t) use ang_near
    ang_near/mid/far    (n_mu, n_phi) spherical rules by distance class
    ang_origin          (n_mu, n_phi) for the origin-centred piece
    origin_core         first origin radial break, in units of sqrt(s_min)
    origin_ratio        geometric ratio of origin radial panels
    heat_radial, heat_mu, heat_phi   heat-semigroup resolutions
    target_tol          accuracy above which phi_apply warns
    lam_hint            lambda used when a caller does not supply one
    """

    near_radius_factor: float = 2e-3
    k_min_offset: Optional[int] = None
    past_tol: float = 2e-6
    radial_ratio: float = 3.0
    far_factor: float = 60.0
    n_radial: int = 5
    n_time: int = 5
    n_time0: int = 4
    time_ratio: float = 8.0
    tau_cut: float = 100.0
    tau_stat: float = 32.0
    split: float = 0.5
    zone_ratio: float = 2.0
    ang_near: tuple = (4, 8)
    ang_mid: tuple = (7, 14)
    ang_far: tuple = (8, 16)
    ang_origin: tuple = (4, 8)
    near_class: float = 0.1
    origin_ratio: float = 4.0
    s_power: float = 3.0
    n_s: int = 8
    origin_core: float = 0.5
    heat_radial: int = 6
    heat_mu: int = 6
    heat_phi: int = 12
    target_tol: float = 5e-3
    lam_hint: float = 1.5

    def __post_init__(self):
        ints = [self.n_radial, self.n_time, self.n_time0, self.heat_radial, self.heat_mu,
                self.heat_phi, *self.ang_near, *self.ang_mid, *self.ang_far, *self.ang_origin]
        if min(ints) < 2 or max(ints) > _MAXGL:
            raise ValueError(f"quadrature resolutions must lie in [2, {_MAXGL}]")
        for pair in (self.ang_near, self.ang_mid, self.ang_far, self.ang_origin):
            if pair[1] % 2:
                raise ValueError("azimuthal counts must be even")
        if not 0 < self.past_tol < 1:
            raise ValueError("past_tol must lie in (0, 1)")
        if self.target_tol <= 0:
            raise ValueError("target_tol must be positive")
        if self.k_min_offset is not None and self.k_min_offset < 1:
            raise ValueError("k_min_offset must be at least 1")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if min(self.radial_ratio, self.time_ratio, self.zone_ratio, self.origin_ratio) <= 1:
            raise ValueError("panel ratios must exceed 1")

    def packed(self, lam: Optional[float] = None) -> np.ndarray:
        lam = self.lam_hint if lam is None else lam
        P = np.zeros(_NP)
        P[_NEAR] = self.near_radius_factor
        P[_RRAT] = self.radial_ratio
        P[_FAR] = self.far_factor
        P[_NR] = self.n_radial
        P[_TRAT] = self.time_ratio
        P[_NT] = self.n_time
        P[_SMIN] = lam ** (-2.0 * self.epochs(lam))
        P[_TCUT] = self.tau_cut
        P[_SPLIT] = self.split
        P[_ZRAT] = self.zone_ratio
        P[_ANG:_ANG + 8] = (*self.ang_near, *self.ang_mid, *self.ang_far, *self.ang_origin)
        P[_TSTAT] = self.tau_stat
        P[_NT0] = self.n_time0
        P[_NCLS] = self.near_class
        P[_ORAT] = self.origin_ratio
        P[_SPOW] = self.s_power
        P[_NS] = self.n_s
        P[_CORE] = self.origin_core
        return P

    def epochs(self, lam: float) -> int:
        """Number of lam^2-epochs of past time integrated."""
        if self.k_min_offset is not None:
            return self.k_min_offset
        return max(1, math.ceil(math.log(1.0 / self.past_tol) / (2.0 * math.log(lam))))

    def refined(self) -> "QuadratureSpec":
        """An independent, finer rule (different panel layout, more points)."""
        up = lambda p: (min(p[0] + 2, _MAXGL), min(p[1] + 4, _MAXGL))
        return replace(
            self, near_radius_factor=self.near_radius_factor / 4,
            k_min_offset=None if self.k_min_offset is None else self.k_min_offset + 4,
            past_tol=self.past_tol / 100, radial_ratio=math.sqrt(self.radial_ratio),
            far_factor=self.far_factor * 2, n_radial=self.n_radial + 1,
            n_time=self.n_time + 1, n_time0=self.n_time0 + 1,
            time_ratio=math.sqrt(self.time_ratio), ang_near=up(self.ang_near),
            ang_mid=up(self.ang_mid), ang_far=up(self.ang_far),
            ang_origin=up(self.ang_origin), heat_radial=self.heat_radial + 4,
            heat_mu=self.heat_mu + 4, heat_phi=self.heat_phi + 8, n_s=self.n_s + 4,
            origin_ratio=math.sqrt(self.origin_ratio), zone_ratio=math.sqrt(self.zone_ratio),
            tau_cut=self.tau_cut * 100)

    def as_dict(self) -> dict:
        return asdict(self)


# ------------------------------------------------------------ node builder

@njit(cache=True, nogil=True)
def _frames(x0, x1, x2):
    """Unit vectors (xh, e1, e2): xh = x/|x|, e1 in the meridional plane."""
    r = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    xh = np.array([x0 / r, x1 / r, x2 / r])
    m = np.array([-xh[2] * xh[0], -xh[2] * xh[1], 1.0 - xh[2] * xh[2]])
    nm = math.sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2])
    if nm < 1e-8:
        # on the axis every plane through it is meridional
        m = np.array([1.0 - xh[0] * xh[0], -xh[0] * xh[1], -xh[0] * xh[2]])
        nm = math.sqrt(m[0] * m[0] + m[1] * m[1] + m[2] * m[2])
    e1 = m / nm
    e2 = np.array([xh[1] * e1[2] - xh[2] * e1[1], xh[2] * e1[0] - xh[0] * e1[2],
                   xh[0] * e1[1] - xh[1] * e1[0]])
    return xh, e1, e2


@njit(cache=True, nogil=True)
def _time_nodes(t, tau_c, tau_top, with_s, P, GLX, GLW, TS, TT, TW):
    """Time nodes as (s, tau, weight) with s + tau = t; returns the count.

    [0, tau_c] is one panel linear in tau (kernel close to its stationary
    limit there), then geometric panels in log tau up to tau_top, then, if
    requested, one graded panel for s in [s_min, t/2].
    """
    Rt = P[_TRAT]
    nt = int(P[_NT])
    nt0 = int(P[_NT0])
    smin = t * P[_SMIN]
    c = 0
    h = 0.5 * tau_c
    for q in range(nt0):
        tau = h * (1.0 + GLX[nt0, q])
        TT[c] = tau
        TS[c] = t - tau
        TW[c] = h * GLW[nt0, q]
        c += 1
    lo = tau_c
    while lo < tau_top * (1.0 - 1e-12):
        hi = min(lo * Rt, tau_top)
        a = math.log(lo)
        hh = 0.5 * (math.log(hi) - a)
        for q in range(nt):
            tau = math.exp(a + hh * (1.0 + GLX[nt, q]))
            TT[c] = tau
            TS[c] = t - tau
            TW[c] = hh * GLW[nt, q] * tau
            c += 1
        lo = hi
    if with_s:
        # s = (t/2) z^p clusters nodes toward s = 0, where f may behave like a
        # fractional power of s
        pw = P[_SPOW]
        ns = int(P[_NS])
        z0 = (2.0 * smin / t) ** (1.0 / pw)
        hh = 0.5 * (1.0 - z0)
        for q in range(ns):
            z = z0 + hh * (1.0 + GLX[ns, q])
            s = 0.5 * t * z ** pw
            TS[c] = s
            TT[c] = t - s
            TW[c] = hh * GLW[ns, q] * 0.5 * t * pw * z ** (pw - 1.0)
            c += 1
    return c


@njit(cache=True, nogil=True)
def _sorted_unique(vals, n):
    a = np.sort(vals[:n])
    out = np.empty(n)
    m = 0
    for i in range(n):
        if m == 0 or a[i] > out[m - 1] * (1.0 + 1e-9):
            out[m] = a[i]
            m += 1
    return out[:m]


@njit(cache=True, nogil=True)
def _emit_ring(n, cap, cx0, cx1, cx2, pole, e1, e2, rho, wr, mu_a, mu_b, nmu, nph, GLX, GLW,
               TS, TT, TW, nt, Y, S, TAU, W):
    """Append nodes on the zone mu_a <= mu <= mu_b of the sphere |y - c| = rho."""
    hm = 0.5 * (mu_b - mu_a)
    for qm in range(nmu):
        mu = mu_a + hm * (1.0 + GLX[nmu, qm])
        wm = hm * GLW[nmu, qm]
        sm = math.sqrt(max(0.0, 1.0 - mu * mu))
        for qp in range(nph):
            ph = 2.0 * math.pi * qp / nph
            cp = math.cos(ph)
            sp = math.sin(ph)
            y0 = cx0 + rho * (mu * pole[0] + sm * (cp * e1[0] + sp * e2[0]))
            y1 = cx1 + rho * (mu * pole[1] + sm * (cp * e1[1] + sp * e2[1]))
            y2 = cx2 + rho * (mu * pole[2] + sm * (cp * e1[2] + sp * e2[2]))
            wa = wr * wm * (2.0 * math.pi / nph)
            for qt in range(nt):
                if n < cap:
                    Y[n, 0] = y0
                    Y[n, 1] = y1
                    Y[n, 2] = y2
                    S[n] = TS[qt]
                    TAU[n] = TT[qt]
                    W[n] = wa * TW[qt]
                n += 1
    return n


@njit(cache=True, nogil=True)
def phi_nodes(x0, x1, x2, t, P, GLX, GLW, Y, S, TAU, W):
    """Fill quadrature nodes (y, s, t - s, weight) for Phi at (x, t).

    Returns the node count; if it exceeds the buffer length the buffers
    are only partly filled and the caller retries with larger ones.
    """
    cap = W.shape[0]
    r = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    st = math.sqrt(t)
    ell = min(r, st)
    Lsc = max(r, st)
    a = P[_SPLIT]
    xh, e1, e2 = _frames(x0, x1, x2)
    mxh = -xh
    TS = np.empty(1024)
    TT = np.empty(1024)
    TW = np.empty(1024)
    n = 0
    nr = int(P[_NR])
    # ---------------- target-centred piece, |y| > a |x|
    rho0 = P[_NEAR] * ell
    Rfar = P[_FAR] * Lsc
    brk = np.empty(256)
    nb = 0
    v = rho0
    while v < Rfar and nb < 240:
        brk[nb] = v
        nb += 1
        v *= P[_RRAT]
    brk[nb] = Rfar
    nb += 1
    for fct in ((1.0 - a), 1.0, (1.0 + a)):
        b = fct * r
        if b > rho0 and b < Rfar:
            brk[nb] = b
            nb += 1
    if st > rho0 and st < Rfar:
        brk[nb] = st
        nb += 1
    rb = _sorted_unique(brk, nb)
    for ip in range(rb.shape[0] - 1):
        ra = rb[ip]
        rbb = rb[ip + 1]
        near = rbb <= min((1.0 - a) * r, P[_NCLS] * Lsc) * (1.0 + 1e-9)
        if near:
            nmu = int(P[_ANG])
            nph = int(P[_ANG + 1])
        elif ra < 1.5 * (1.0 + a) * r:
            nmu = int(P[_ANG + 2])
            nph = int(P[_ANG + 3])
        else:
            nmu = int(P[_ANG + 4])
            nph = int(P[_ANG + 5])
        tau_c = min(ra * ra / P[_TSTAT], 0.5 * t)
        tau_top = max(min(P[_TCUT] * rbb * rbb, 0.5 * t), tau_c)
        nt = _time_nodes(t, tau_c, tau_top, tau_top >= 0.5 * t, P, GLX, GLW, TS, TT, TW)
        hr = 0.5 * (rbb - ra)
        for qr in range(nr):
            rho = ra + hr * (1.0 + GLX[nr, qr])
            wr = hr * GLW[nr, qr] * rho * rho
            # pole toward the origin: |y|^2 = r^2 + rho^2 - 2 r rho mu, so the
            # split sphere |y| = a r is the cap mu > mu_a.  Small spheres get the
            # antipodally symmetric rule, which annihilates f frozen at x.
            mu_a = (r * r + rho * rho - a * a * r * r) / (2.0 * r * rho)
            if near:
                n = _emit_ring(n, cap, x0, x1, x2, mxh, e1, e2, rho, wr, -1.0, 1.0, nmu, nph,
                               GLX, GLW, TS, TT, TW, nt, Y, S, TAU, W)
                continue
            # zones geometric in |y|, starting where the sphere comes closest
            # to the origin (or at the split sphere, if it reaches inside)
            if mu_a >= 1.0:
                hi = 1.0
                ry = abs(rho - r)
            else:
                hi = max(mu_a, -1.0)
                ry = a * r
            while hi > -1.0:
                ry *= P[_ZRAT]
                lo = max((r * r + rho * rho - ry * ry) / (2.0 * r * rho), -1.0)
                n = _emit_ring(n, cap, x0, x1, x2, mxh, e1, e2, rho, wr, lo, hi, nmu, nph,
                               GLX, GLW, TS, TT, TW, nt, Y, S, TAU, W)
                hi = lo
    # ---------------- origin-centred piece, |y| < a |x|
    dmin = (1.0 - a) * r
    tau_c = min(dmin * dmin / P[_TSTAT], 0.5 * t)
    nt = _time_nodes(t, tau_c, 0.5 * t, True, P, GLX, GLW, TS, TT, TW)
    nmu = int(P[_ANG + 6])
    nph = int(P[_ANG + 7])
    # radial breaks geometric from the singular core of f at the earliest
    # time kept, so every later (wider) core is resolved as well
    smin = TS[0]
    for qt in range(nt):
        smin = min(smin, TS[qt])
    nb = 0
    brk[nb] = 0.0
    nb += 1
    v = P[_CORE] * math.sqrt(smin)
    while v < a * r and nb < 240:
        brk[nb] = v
        nb += 1
        v *= P[_ORAT]
    brk[nb] = a * r
    nb += 1
    for ip in range(nb - 1):
        ra = brk[ip]
        rbb = brk[ip + 1]
        hr = 0.5 * (rbb - ra)
        for qr in range(nr):
            rho = ra + hr * (1.0 + GLX[nr, qr])
            wr = hr * GLW[nr, qr] * rho * rho
            # the kernel peaks toward x: |x - y|^2 = (r - rho)^2 + 2 r rho w with
            # w = 1 - mu, so grade w geometrically from where |x - y|^2 doubles
            wc = (r - rho) ** 2 / (2.0 * r * rho)
            if wc >= 0.5:
                for pm in range(2):
                    n = _emit_ring(n, cap, 0.0, 0.0, 0.0, xh, e1, e2, rho, wr, pm - 1.0,
                                   pm * 1.0, nmu, nph, GLX, GLW, TS, TT, TW, nt, Y, S, TAU, W)
            else:
                wa = 0.0
                wb = wc
                while wa < 2.0:
                    n = _emit_ring(n, cap, 0.0, 0.0, 0.0, xh, e1, e2, rho, wr, 1.0 - wb,
                                   1.0 - wa, nmu, nph, GLX, GLW, TS, TT, TW, nt, Y, S, TAU, W)
                    wa = wb
                    wb = min(4.0 * wb, 2.0)
    return n


@njit(cache=True, nogil=True)
def _contract(x0, x1, x2, Y, TAU, W, F, n, out):
    """out_i = sum_n W_n d_k S_ij(x - y_n, tau_n) F_n[k, j]."""
    g = np.empty((3, 3, 3))
    o0 = 0.0
    o1 = 0.0
    o2 = 0.0
    for m in range(n):
        oseen_grad_point(x0 - Y[m, 0], x1 - Y[m, 1], x2 - Y[m, 2], TAU[m], g)
        w = W[m]
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for j in range(3):
            for k in range(3):
                fk = F[m, k, j]
                acc0 += g[0, j, k] * fk
                acc1 += g[1, j, k] * fk
                acc2 += g[2, j, k] * fk
        o0 += w * acc0
        o1 += w * acc1
        o2 += w * acc2
    out[0] = o0
    out[1] = o1
    out[2] = o2


@njit(cache=True, nogil=True)
def _phi_quadratic_one(x0, x1, x2, t, P, GLX, GLW, Y, S, TAU, W, sargs_f, sargs_i,
                       mu_nodes, bary, mu_scale, table, tail, u0_on, sigma, kinds, dirs,
                       vecs, ecoefs, gcos, gsin, kappa, poly, camp, cfreq, cphase, out):
    """Phi[-w (x) w] at one target with w read from a strip table (fused path)."""
    n = phi_nodes(x0, x1, x2, t, P, GLX, GLW, Y, S, TAU, W)
    if n > W.shape[0]:
        return n
    lam = sargs_f[0]
    rho_min = sargs_f[1]
    drho = sargs_f[2]
    gamma = sargs_f[3]
    n_rho = sargs_i[0]
    n_time = sargs_i[1]
    n_phi = sargs_i[2]
    scheme = sargs_i[3]
    Wang = np.empty((mu_nodes.shape[0], n_phi))
    w = np.empty(3)
    u = np.empty(3)
    gu = np.empty((3, 3))
    g = np.empty((3, 3, 3))
    o0 = 0.0
    o1 = 0.0
    o2 = 0.0
    for m in range(n):
        fw = strip_eval_point(Y[m, 0], Y[m, 1], Y[m, 2], S[m], lam, rho_min, drho, n_rho,
                              n_time, mu_nodes, bary, mu_scale, n_phi, scheme, table, tail,
                              gamma, Wang, w)
        if u0_on and fw != 0.0:
            u0_point(Y[m], kinds, dirs, vecs, ecoefs, gcos, gsin, kappa, poly, camp, cfreq,
                     cphase, u, gu)
            for c in range(3):
                w[c] += sigma * fw * u[c]
        oseen_grad_point(x0 - Y[m, 0], x1 - Y[m, 1], x2 - Y[m, 2], TAU[m], g)
        acc0 = 0.0
        acc1 = 0.0
        acc2 = 0.0
        for j in range(3):
            for k in range(3):
                fk = -w[k] * w[j]
                acc0 += g[0, j, k] * fk
                acc1 += g[1, j, k] * fk
                acc2 += g[2, j, k] * fk
        ww = W[m]
        o0 += ww * acc0
        o1 += ww * acc1
        o2 += ww * acc2
    out[0] = o0
    out[1] = o1
    out[2] = o2
    return n


@njit(cache=True, parallel=True)
def _phi_quadratic_many(X, T, P, GLX, GLW, cap, sargs_f, sargs_i, mu_nodes, bary, mu_scale,
                        table, tail, u0_on, sigma, kinds, dirs, vecs, ecoefs, gcos, gsin,
                        kappa, poly, camp, cfreq, cphase, out, counts):
    for i in prange(X.shape[0]):
        Y = np.empty((cap, 3))
        S = np.empty(cap)
        TAU = np.empty(cap)
        W = np.empty(cap)
        o = np.empty(3)
        counts[i] = _phi_quadratic_one(
            X[i, 0], X[i, 1], X[i, 2], T[i], P, GLX, GLW, Y, S, TAU, W, sargs_f, sargs_i,
            mu_nodes, bary, mu_scale, table, tail, u0_on, sigma, kinds, dirs, vecs, ecoefs,
            gcos, gsin, kappa, poly, camp, cfreq, cphase, o)
        out[i, 0] = o[0]
        out[i, 1] = o[1]
        out[i, 2] = o[2]


class _Buffers:
    def __init__(self, cap: int = 1 << 16):
        self.alloc(cap)

    def alloc(self, cap):
        self.cap = cap
        self.Y = np.empty((cap, 3))
        self.S = np.empty(cap)
        self.TAU = np.empty(cap)
        self.W = np.empty(cap)

    def nodes(self, x, t, P):
        while True:
            n = phi_nodes(x[0], x[1], x[2], t, P, _GLX, _GLW, self.Y, self.S, self.TAU, self.W)
            if n <= self.cap:
                return n
            self.alloc(int(n * 1.25) + 16)


def node_count(x, t, spec: QuadratureSpec, lam: float = 1.5) -> int:
    """Number of quadrature nodes Phi uses at one target."""
    x = np.asarray(x, dtype=float)
    return _Buffers(16).nodes(x, float(t), spec.packed(lam))


def _check_target(x, t):
    if t <= 0:
        raise ValueError("time must be positive")
    if not np.any(x):
        raise ValueError("Phi targets must avoid the origin")


def phi_at(f, points, times, spec: QuadratureSpec, lam: Optional[float] = None) -> np.ndarray:
    """Phi f at arbitrary (x, t).

    f is a QuadraticSource or TableSource (fast fused paths) or a callable
    f(y, s) -> (N, 3, 3) evaluated on batches of quadrature nodes.
    """
    X = np.ascontiguousarray(np.asarray(points, dtype=float).reshape(-1, 3))
    T = np.ascontiguousarray(np.broadcast_to(np.asarray(times, dtype=float),
                                             X.shape[:1])).copy()
    for x, t in zip(X, T):
        _check_target(x, t)
    out = np.zeros((X.shape[0], 3))
    if isinstance(f, (QuadraticSource, TableSource)):
        lam = f.lam if lam is None else lam
        return f.phi(X, T, spec.packed(lam))
    P = spec.packed(lam)
    if isinstance(f, ZeroSource):
        return out
    buf = _Buffers()
    o = np.empty(3)
    for i in range(X.shape[0]):
        n = buf.nodes(X[i], T[i], P)
        F = np.ascontiguousarray(np.asarray(f(buf.Y[:n], buf.S[:n]), dtype=float))
        _contract(X[i, 0], X[i, 1], X[i, 2], buf.Y, buf.TAU, buf.W, F, n, o)
        out[i] = o
    return out


class ZeroSource:
    """The zero forcing."""

    def __call__(self, y, s):
        return np.zeros(np.shape(s) + (3, 3))


class QuadraticSource:
    """f = -w (x) w with w = sigma U + E v read from strip tables.

    U is tabulated on the strip nodes (u_table, already multiplied by
    sigma); beyond the outermost shell U is replaced by u0 itself.
    """

    def __init__(self, v: StripField, u0: Optional[DssInitialData] = None, sigma: float = 0.0,
                 u_table: Optional[np.ndarray] = None):
        self.v = v
        self.lam = v.grid.lam
        self.sigma = float(sigma)
        extra = None
        if u_table is not None and sigma != 0.0:
            extra = self.sigma * u_table
        self.w = StripEvaluator(v, u0, sigma, extra)

    def velocity(self, y, s):
        return self.w(y, s)

    def __call__(self, y, s):
        w = self.w(y, s)
        return -w[..., :, None] * w[..., None, :]

    def phi(self, X, T, P):
        ev = self.w
        g = ev.grid
        sargs_f = np.array([g.lam, g.rho_min, g.drho, ev.gamma])
        sargs_i = np.array([g.n_rho, g.n_time, g.n_phi, ev.scheme], dtype=np.int64)
        out = np.zeros((X.shape[0], 3))
        counts = np.zeros(X.shape[0], dtype=np.int64)
        cap = 1 << 15
        todo = np.arange(X.shape[0])
        while todo.size:
            o = np.zeros((todo.size, 3))
            c = np.zeros(todo.size, dtype=np.int64)
            _phi_quadratic_many(np.ascontiguousarray(X[todo]), np.ascontiguousarray(T[todo]),
                                P, _GLX, _GLW, cap, sargs_f, sargs_i, ev.mu_nodes, ev.bary,
                                ev.mu_scale, ev.table, ev.tail, *ev.far_args(), o, c)
            ok = c <= cap
            out[todo[ok]] = o[ok]
            counts[todo[ok]] = c[ok]
            if not np.all(ok):
                cap = int(c.max() * 1.25) + 16
            todo = todo[~ok]
        self.last_counts = counts
        return out


@njit(cache=True, nogil=True)
def _phi_table_one(x0, x1, x2, t, P, GLX, GLW, Y, S, TAU, W, lam, rho_min, drho, n_rho,
                   n_time, mu_nodes, bary, mu_scale, n_phi, scheme, F, out):
    """Phi f at one target with f read from a (shell, time, angle, 6) table."""
    n = phi_nodes(x0, x1, x2, t, P, GLX, GLW, Y, S, TAU, W)
    if n > W.shape[0]:
        return n
    n_mu = mu_nodes.shape[0]
    Wang = np.empty((n_mu, n_phi))
    G = np.empty((n_rho, n_time, 6))
    done = np.zeros((n_rho, n_time), dtype=np.bool_)
    touched = np.empty((n_rho * n_time, 2), dtype=np.int64)
    shells = np.empty(16, dtype=np.int64)
    times = np.empty(16, dtype=np.int64)
    coefs = np.empty(16)
    g = np.empty((3, 3, 3))
    f = np.empty(6)
    o0 = 0.0
    o1 = 0.0
    o2 = 0.0
    m = 0
    while m < n:
        e = m + 1
        while e < n and Y[e, 0] == Y[m, 0] and Y[e, 1] == Y[m, 1] and Y[e, 2] == Y[m, 2]:
            e += 1
        r = math.sqrt(Y[m, 0] ** 2 + Y[m, 1] ** 2 + Y[m, 2] ** 2)
        if r > 0.0:
            mu = Y[m, 2] / r
            ph = math.atan2(Y[m, 1], Y[m, 0])
            if ph < 0.0:
                ph += 2.0 * math.pi
            rho = math.log(r)
        else:
            mu = 1.0
            ph = 0.0
            rho = -math.inf
        _angular_weights(mu, ph, mu_nodes, bary, mu_scale, n_phi, scheme, Wang)
        nt = 0
        for q in range(m, e):
            ns = _table_stencil(rho, S[q], lam, rho_min, drho, n_rho, n_time, shells, times,
                                coefs)
            for c in range(6):
                f[c] = 0.0
            for z in range(ns):
                ish = shells[z]
                jt = times[z]
                if not done[ish, jt]:
                    for c in range(6):
                        G[ish, jt, c] = 0.0
                    for a in range(n_mu):
                        for b in range(n_phi):
                            wab = Wang[a, b]
                            if wab != 0.0:
                                for c in range(6):
                                    G[ish, jt, c] += wab * F[ish, jt, a * n_phi + b, c]
                    done[ish, jt] = True
                    touched[nt, 0] = ish
                    touched[nt, 1] = jt
                    nt += 1
                for c in range(6):
                    f[c] += coefs[z] * G[ish, jt, c]
            oseen_grad_point(x0 - Y[q, 0], x1 - Y[q, 1], x2 - Y[q, 2], TAU[q], g)
            ww = W[q]
            acc = np.zeros(3)
            for i in range(3):
                acc[i] = (g[i, 0, 0] * f[0] + g[i, 1, 1] * f[1] + g[i, 2, 2] * f[2]
                          + (g[i, 0, 1] + g[i, 1, 0]) * f[3]
                          + (g[i, 0, 2] + g[i, 2, 0]) * f[4]
                          + (g[i, 1, 2] + g[i, 2, 1]) * f[5])
            o0 += ww * acc[0]
            o1 += ww * acc[1]
            o2 += ww * acc[2]
        for z in range(nt):
            done[touched[z, 0], touched[z, 1]] = False
        m = e
    out[0] = o0
    out[1] = o1
    out[2] = o2
    return n


@njit(cache=True, parallel=True)
def _phi_table_many(X, T, P, GLX, GLW, cap, lam, rho_min, drho, n_rho, n_time, mu_nodes, bary,
                    mu_scale, n_phi, scheme, F, out, counts):
    for i in prange(X.shape[0]):
        Y = np.empty((cap, 3))
        S = np.empty(cap)
        TAU = np.empty(cap)
        W = np.empty(cap)
        o = np.empty(3)
        counts[i] = _phi_table_one(X[i, 0], X[i, 1], X[i, 2], T[i], P, GLX, GLW, Y, S, TAU, W,
                                   lam, rho_min, drho, n_rho, n_time, mu_nodes, bary, mu_scale,
                                   n_phi, scheme, F, o)
        out[i, 0] = o[0]
        out[i, 1] = o[1]
        out[i, 2] = o[2]


class TableSource:
    """f given by its values at the nodes of a source grid.

    Between nodes f is interpolated exactly as in the assembled operator
    (cubic in log t and log|y|, angular rule of the grid, DSS wrap and
    static continuation beyond the outer shells), so phi_at on a
    TableSource recomputes the operator's output by pointwise quadrature.
    """

    def __init__(self, src: StripGrid, F: np.ndarray):
        if F.shape != src.shape + (3, 3):
            raise ValueError(f"table shape {F.shape} does not match grid {src.shape}")
        self.src = src
        self.lam = src.lam
        self.F = np.ascontiguousarray(full_to_sym(F).transpose(0, 2, 1, 3))

    def phi(self, X, T, P):
        g = self.src
        out = np.zeros((X.shape[0], 3))
        counts = np.zeros(X.shape[0], dtype=np.int64)
        cap = 1 << 15
        todo = np.arange(X.shape[0])
        while todo.size:
            o = np.zeros((todo.size, 3))
            c = np.zeros(todo.size, dtype=np.int64)
            _phi_table_many(np.ascontiguousarray(X[todo]), np.ascontiguousarray(T[todo]), P,
                            _GLX, _GLW, cap, g.lam, g.rho_min, g.drho, g.n_rho, g.n_time, g.mu,
                            g.bary_weights(), g.mu_scale(), g.n_phi,
                            ANGULAR_SCHEMES.index(g.angular), self.F, o, c)
            ok = c <= cap
            out[todo[ok]] = o[ok]
            counts[todo[ok]] = c[ok]
            if not np.all(ok):
                cap = int(c.max() * 1.25) + 16
            todo = todo[~ok]
        self.last_counts = counts
        return out


# ------------------------------------------------------------ heat semigroup

_GAUSS_CUT = 12.2  # exp(-12.2^2 / 4) ~ 1e-16


@njit(cache=True, nogil=True)
def heat_point(x0, x1, x2, t, lam, nr, nmu, nph, GLX, GLW, kinds, dirs, vecs, ecoefs, gcos,
               gsin, kappa, poly, camp, cfreq, cphase, out):
    """(e^{t Delta} u0)(x) in spherical coordinates about the origin.

    Radial panels follow the DSS annuli lam^j (refined to width
    min(1.5 sqrt t, 0.3 r)) inside the window where the Gaussian weight
    exceeds 1e-16; near the origin they are geometric.  Angular zones
    in w = 1 - mu are graded by kap = |x| r / (2t), the decay rate of the
    kernel away from x/|x|.
    """
    r = math.sqrt(x0 * x0 + x1 * x1 + x2 * x2)
    st = math.sqrt(t)
    if r > 0.0:
        xh, e1, e2 = _frames(x0, x1, x2)
    else:
        xh = np.array([0.0, 0.0, 1.0])
        e1 = np.array([1.0, 0.0, 0.0])
        e2 = np.array([0.0, 1.0, 0.0])
    lo = r - _GAUSS_CUT * st
    hi = r + _GAUSS_CUT * st
    brk = np.empty(4096)
    nb = 0
    if lo <= 0.0:
        # geometric panels toward the origin, where r^2 u0 ~ r
        v = 1e-7 * st
        while v < min(st, hi):
            brk[nb] = v
            nb += 1
            v *= 2.0
        lo = min(st, hi)
    lg = math.log(lam)
    j = math.ceil(math.log(lo) / lg - 1e-12)
    v = lo
    while v < hi and nb < 4000:
        brk[nb] = v
        nb += 1
        nxt = min(v + min(1.5 * st, 0.3 * v), hi)
        ann = math.exp(j * lg)
        if ann <= v * (1.0 + 1e-12):
            j += 1
            ann = math.exp(j * lg)
        v = min(nxt, ann)
    brk[nb] = hi
    nb += 1
    pref = (4.0 * math.pi * t) ** -1.5
    u = np.empty(3)
    y = np.empty(3)
    o0 = 0.0
    o1 = 0.0
    o2 = 0.0
    for ip in range(nb - 1):
        ra = brk[ip]
        rb = brk[ip + 1]
        hr = 0.5 * (rb - ra)
        for qr in range(nr):
            rho = ra + hr * (1.0 + GLX[nr, qr])
            g_rad = pref * math.exp(-(r - rho) ** 2 / (4.0 * t))
            wr = hr * GLW[nr, qr] * rho * rho * g_rad
            if wr == 0.0:
                continue
            kap = r * rho / (2.0 * t)
            wmax = 2.0
            if kap * 2.0 > 37.0:
                wmax = 37.0 / kap
            wa = 0.0
            wb = wmax if kap <= 1.0 else min(wmax, 1.0 / kap)
            while wa < wmax:
                hm = 0.5 * (wb - wa)
                for qm in range(nmu):
                    w = wa + hm * (1.0 + GLX[nmu, qm])
                    mu = 1.0 - w
                    sm = math.sqrt(max(0.0, 1.0 - mu * mu))
                    wk = wr * hm * GLW[nmu, qm] * math.exp(-kap * w) * (2.0 * math.pi / nph)
                    for qp in range(nph):
                        ph = 2.0 * math.pi * qp / nph
                        cp = math.cos(ph)
                        sp = math.sin(ph)
                        for c in range(3):
                            y[c] = rho * (mu * xh[c] + sm * (cp * e1[c] + sp * e2[c]))
                        u0_value(y, kinds, dirs, vecs, ecoefs, gcos, gsin, kappa, poly, camp,
                                 cfreq, cphase, u)
                        o0 += wk * u[0]
                        o1 += wk * u[1]
                        o2 += wk * u[2]
                wa = wb
                wb = min(4.0 * wb, wmax)
    out[0] = o0
    out[1] = o1
    out[2] = o2


@njit(cache=True, parallel=True)
def _heat_many(X, T, lam, nr, nmu, nph, GLX, GLW, kinds, dirs, vecs, ecoefs, gcos, gsin,
               kappa, poly, camp, cfreq, cphase, out):
    for i in prange(X.shape[0]):
        o = np.empty(3)
        heat_point(X[i, 0], X[i, 1], X[i, 2], T[i], lam, nr, nmu, nph, GLX, GLW, kinds, dirs,
                   vecs, ecoefs, gcos, gsin, kappa, poly, camp, cfreq, cphase, o)
        out[i, 0] = o[0]
        out[i, 1] = o[1]
        out[i, 2] = o[2]


def heat_semigroup(u0: DssInitialData, x, t, spec: Optional[QuadratureSpec] = None) -> np.ndarray:
    """U(x, t) = int Gamma(x - y, t) u0(y) dy at broadcast (x, t)."""
    spec = QuadratureSpec() if spec is None else spec
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    shape = np.broadcast_shapes(x.shape[:-1], t.shape)
    X = np.ascontiguousarray(np.broadcast_to(x, shape + (3,)).reshape(-1, 3))
    T = np.ascontiguousarray(np.broadcast_to(t, shape).reshape(-1))
    if np.any(T <= 0):
        raise ValueError("time must be positive")
    out = np.zeros((X.shape[0], 3))
    if not u0.is_zero:
        _heat_many(X, T, u0.lam, spec.heat_radial, spec.heat_mu, spec.heat_phi, _GLX, _GLW,
                   *u0.terms.arrays(), u0.kappa, *u0.terms.shape_arrays(), out)
    return out.reshape(shape + (3,))


# ------------------------------------------------------------ assembled operator
#
# In the solver f is only known through its values at strip nodes, so Phi
# restricted to the grid is a fixed linear map from those values to the
# output samples.  It is assembled once per (grid, rule).  The grid and the
# rule are both covariant under rotations about the z axis by multiples of
# 2 pi / n_phi, so only targets with phi = 0 are integrated; the rest follow
# by rotating inputs and outputs.

_SYM = np.array([[0, 0], [1, 1], [2, 2], [0, 1], [0, 2], [1, 2]], dtype=np.int64)


@njit(cache=True, nogil=True)
def _sym_kernel(g, w, K):
    """K[i, c] = w sum_{jk} g[i, j, k] f_kj for the unit symmetric tensor c."""
    for i in range(3):
        K[i, 0] = w * g[i, 0, 0]
        K[i, 1] = w * g[i, 1, 1]
        K[i, 2] = w * g[i, 2, 2]
        K[i, 3] = w * (g[i, 0, 1] + g[i, 1, 0])
        K[i, 4] = w * (g[i, 0, 2] + g[i, 2, 0])
        K[i, 5] = w * (g[i, 1, 2] + g[i, 2, 1])


@njit(cache=True, nogil=True)
def _table_stencil(rho, s, lam, rho_min, drho, n_rho, n_time, shells, times, coefs):
    """Radial-temporal stencil of a table of f with f(lam y, lam^2 s) = lam^-2 f(y, s).

    Returns the count m of (shell, time, coefficient) triples.  Times wrap
    through the DSS identity; beyond the outer shells the table is continued
    by the static scaling f(y) ~ lam^(-2p) f(lam^-p y) of a field ~ |y|^-2.
    """
    Llam = math.log(lam)
    k = -math.floor(math.log(s) / (2.0 * Llam))
    sr = s * lam ** (2.0 * k)
    if sr < 1.0:
        k += 1
        sr = s * lam ** (2.0 * k)
    if sr >= lam * lam:
        k -= 1
        sr = s * lam ** (2.0 * k)
    rr = rho + k * Llam
    sc = lam ** (2.0 * k)
    dtau = 2.0 * Llam / n_time
    u = math.log(sr) / dtau
    j0 = int(math.floor(u))
    if j0 > n_time - 1:
        j0 = n_time - 1
    wt = np.empty(4)
    wr = np.empty(4)
    _lagrange4(u - j0, wt)
    rlim = rho_min + drho * (n_rho - 2)
    m = 0
    for jt in range(4):
        jn = j0 - 1 + jt
        q = jn // n_time
        jj = jn - q * n_time
        fac = sc * wt[jt] * lam ** (-2.0 * q)
        rp = rr - q * Llam
        if rp > rlim:
            p = math.ceil((rp - rlim) / Llam)
            rp -= p * Llam
            fac *= lam ** (-2.0 * p)
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
            c = fac * wr[ir]
            if c != 0.0:
                shells[m] = i0 - 1 + ir
                times[m] = jj
                coefs[m] = c
                m += 1
    return m


@njit(cache=True, nogil=True)
def _assemble_one(x0, x1, x2, t, P, GLX, GLW, Y, S, TAU, W, lam, rho_min, drho, n_rho,
                  n_time, mu_nodes, bary, mu_scale, n_phi, scheme, row):
    """row[i, col] for one target; columns are (shell, time, angle, component)."""
    n = phi_nodes(x0, x1, x2, t, P, GLX, GLW, Y, S, TAU, W)
    if n > W.shape[0]:
        return n
    n_mu = mu_nodes.shape[0]
    n_ang = n_mu * n_phi
    g = np.empty((3, 3, 3))
    K = np.empty((3, 6))
    Wang = np.empty((n_mu, n_phi))
    acc = np.zeros((n_rho, n_time, 3, 6))
    hit = np.zeros((n_rho, n_time), dtype=np.bool_)
    shells = np.empty(16, dtype=np.int64)
    times = np.empty(16, dtype=np.int64)
    coefs = np.empty(16)
    m = 0
    while m < n:
        # a run of nodes sharing one spatial point shares its angular weights
        e = m + 1
        while e < n and Y[e, 0] == Y[m, 0] and Y[e, 1] == Y[m, 1] and Y[e, 2] == Y[m, 2]:
            e += 1
        r = math.sqrt(Y[m, 0] ** 2 + Y[m, 1] ** 2 + Y[m, 2] ** 2)
        if r > 0.0:
            mu = Y[m, 2] / r
            ph = math.atan2(Y[m, 1], Y[m, 0])
            if ph < 0.0:
                ph += 2.0 * math.pi
            rho = math.log(r)
        else:
            mu = 1.0
            ph = 0.0
            rho = -math.inf
        for q in range(m, e):
            oseen_grad_point(x0 - Y[q, 0], x1 - Y[q, 1], x2 - Y[q, 2], TAU[q], g)
            _sym_kernel(g, W[q], K)
            ns = _table_stencil(rho, S[q], lam, rho_min, drho, n_rho, n_time, shells, times,
                                coefs)
            for z in range(ns):
                ish = shells[z]
                jt = times[z]
                c = coefs[z]
                hit[ish, jt] = True
                for i in range(3):
                    for cc in range(6):
                        acc[ish, jt, i, cc] += c * K[i, cc]
        _angular_weights(mu, ph, mu_nodes, bary, mu_scale, n_phi, scheme, Wang)
        for ish in range(n_rho):
            for jt in range(n_time):
                if not hit[ish, jt]:
                    continue
                hit[ish, jt] = False
                base = (ish * n_time + jt) * n_ang
                for a in range(n_mu):
                    for b in range(n_phi):
                        wab = Wang[a, b]
                        if wab == 0.0:
                            continue
                        col = (base + a * n_phi + b) * 6
                        for i in range(3):
                            for cc in range(6):
                                row[i, col + cc] += wab * acc[ish, jt, i, cc]
                for i in range(3):
                    for cc in range(6):
                        acc[ish, jt, i, cc] = 0.0
        m = e
    return n


@njit(cache=True, parallel=True)
def _assemble_many(X, T, P, GLX, GLW, cap, lam, rho_min, drho, n_rho, n_time, mu_nodes, bary,
                   mu_scale, n_phi, scheme, A, counts):
    for i in prange(X.shape[0]):
        Y = np.empty((cap, 3))
        S = np.empty(cap)
        TAU = np.empty(cap)
        W = np.empty(cap)
        row = np.zeros((3, A.shape[2]))
        counts[i] = _assemble_one(X[i, 0], X[i, 1], X[i, 2], T[i], P, GLX, GLW, Y, S, TAU, W,
                                  lam, rho_min, drho, n_rho, n_time, mu_nodes, bary, mu_scale,
                                  n_phi, scheme, row)
        if counts[i] <= cap:
            A[i] = row


@njit(cache=True, parallel=True)
def _apply_rotated(A, F, out):
    """out[r, b] = A[r] . F[b] with a fixed summation order per entry."""
    R = A.shape[0]
    B = F.shape[0]
    for rb in prange(R * B):
        r = rb // B
        b = rb - r * B
        s = 0.0
        for c in range(A.shape[1]):
            s += A[r, c] * F[b, c]
        out[r, b] = s


def _rotation_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def source_grid(grid: StripGrid, pad: Optional[int] = None) -> StripGrid:
    """The target grid extended outward by pad shells (default: two lam-periods)."""
    if pad is None:
        pad = int(math.ceil(max(1.0, 2.0 * math.log(grid.lam)) / grid.drho)) + 1
    return replace(grid, n_rho=grid.n_rho + pad, rho_max=grid.rho_max + pad * grid.drho)


def sym_to_full(F: np.ndarray) -> np.ndarray:
    """(..., 6) symmetric components -> (..., 3, 3)."""
    out = np.empty(F.shape[:-1] + (3, 3))
    for c, (k, j) in enumerate(_SYM):
        out[..., k, j] = F[..., c]
        out[..., j, k] = F[..., c]
    return out


def full_to_sym(F: np.ndarray) -> np.ndarray:
    return np.stack([F[..., k, j] for k, j in _SYM], axis=-1)


class PhiOperator:
    """Phi restricted to strip nodes, acting on f tabulated at source nodes.

    The source grid is the target grid plus outer padding shells; f beyond
    it is continued by the static |y|^-2 scaling and below rho_min it is
    clamped.  apply() takes f as (n_src_rho, n_ang, n_time, 3, 3) in the
    StripField layout and returns samples (n_rho, n_ang, n_time, 3).
    """

    def __init__(self, grid: StripGrid, spec: QuadratureSpec, pad: Optional[int] = None):
        self.grid = grid
        self.spec = spec
        self.src = source_grid(grid, pad)
        g = grid
        mu = g.mu
        s = np.sqrt(1.0 - mu * mu)
        X = np.zeros((g.n_rho, g.n_theta, g.n_time, 3))
        X[..., 0] = g.radii[:, None, None] * s[None, :, None]
        X[..., 2] = g.radii[:, None, None] * mu[None, :, None]
        T = np.broadcast_to(g.times[None, None, :], X.shape[:-1])
        self.X0 = np.ascontiguousarray(X.reshape(-1, 3))
        self.T0 = np.ascontiguousarray(T.reshape(-1))
        src = self.src
        self.n_cols = src.n_rho * src.n_time * src.n_ang * 6
        P = spec.packed(g.lam)
        scheme = 0 if g.angular == "spectral" else 1
        A = np.zeros((self.X0.shape[0], 3, self.n_cols))
        counts = np.zeros(self.X0.shape[0], dtype=np.int64)
        cap = 1 << 17
        todo = np.arange(self.X0.shape[0])
        while todo.size:
            Ab = np.zeros((todo.size, 3, self.n_cols))
            c = np.zeros(todo.size, dtype=np.int64)
            _assemble_many(self.X0[todo], self.T0[todo], P, _GLX, _GLW, cap, g.lam,
                           src.rho_min, src.drho, src.n_rho, src.n_time, src.mu, src.bary_weights(),
                           src.mu_scale(), src.n_phi, scheme, Ab, c)
            ok = c <= cap
            A[todo[ok]] = Ab[ok]
            counts[todo[ok]] = c[ok]
            if not np.all(ok):
                cap = int(c.max() * 1.25) + 16
            todo = todo[~ok]
        self.A = A.reshape(-1, self.n_cols)
        self.node_counts = counts
        self._rot = [_rotation_z(2.0 * math.pi * b / g.n_phi) for b in range(g.n_phi)]

    def apply(self, F: np.ndarray) -> np.ndarray:
        g, src = self.grid, self.src
        F = np.asarray(F, dtype=float)
        if F.shape != (src.n_rho, src.n_ang, src.n_time, 3, 3):
            raise ValueError("f table does not match the source grid")
        # (shell, angle, time) -> (shell, time, mu, phi)
        Ft = F.reshape(src.n_rho, src.n_theta, src.n_phi, src.n_time, 3, 3)
        Ft = Ft.transpose(0, 3, 1, 2, 4, 5)
        stack = np.empty((g.n_phi, self.n_cols))
        for b, R in enumerate(self._rot):
            Fb = np.roll(Ft, -b, axis=3)
            Fb = np.einsum("ki,...kl,lj->...ij", R, Fb, R)
            stack[b] = full_to_sym(Fb).reshape(-1)
        out = np.empty((self.A.shape[0], g.n_phi))
        _apply_rotated(self.A, stack, out)
        out = out.reshape(g.n_rho, g.n_theta, g.n_time, 3, g.n_phi)
        res = np.einsum("bij,ratjb->rabti", np.array(self._rot), out)
        return np.ascontiguousarray(res.reshape(g.n_rho, g.n_ang, g.n_time, 3))


# ------------------------------------------------------------ public operators

class Semigroup:
    """U = e^{t Delta} u0, exact pointwise and tabulated on strip grids."""

    def __init__(self, u0: DssInitialData, spec: Optional[QuadratureSpec] = None):
        self.u0 = u0
        self.lam = u0.lam
        self.spec = QuadratureSpec() if spec is None else spec
        self._tables = {}

    def __call__(self, x, t) -> np.ndarray:
        return heat_semigroup(self.u0, x, t, self.spec)

    def table(self, grid: StripGrid) -> np.ndarray:
        """U at the nodes of grid, in the StripField sample layout."""
        key = tuple(sorted(grid.params().items()))
        if key not in self._tables:
            X, T = grid.node_arrays()
            self._tables[key] = heat_semigroup(self.u0, X, T, self.spec).reshape(
                grid.shape + (3,))
        return self._tables[key]


def nonlinearity(U: Optional[Semigroup], v: StripField, sigma: float) -> "QuadraticSource":
    """f = -(sigma U + E v) (x) (sigma U + E v) as a tensor-field evaluator."""
    if not 0.0 <= sigma <= 1.0:
        raise ValueError("sigma must lie in [0, 1]")
    if U is None or sigma == 0.0 or U.u0.is_zero:
        return QuadraticSource(v, None, 0.0)
    return QuadraticSource(v, U.u0, sigma, U.table(v.grid))


def source_table(src: StripGrid, v: StripField, sigma: float,
                 U_src: Optional[np.ndarray]) -> np.ndarray:
    """-(sigma U + E v) (x) (sigma U + E v) at the nodes of a source grid.

    The source grid starts with the shells of v.grid, where E v is just
    the samples; outer shells use the tail model of v.
    """
    n = v.grid.n_rho
    w = np.empty(src.shape + (3,))
    w[:n] = v.samples
    if src.n_rho > n:
        X, T = src.node_arrays()
        k = n * src.n_ang * src.n_time
        w[n:] = v(X[k:], T[k:]).reshape((src.n_rho - n,) + src.shape[1:] + (3,))
    if U_src is not None and sigma != 0.0:
        w = w + sigma * U_src
    return -w[..., :, None] * w[..., None, :]


_OPERATORS = {}


def phi_operator(grid: StripGrid, spec: QuadratureSpec) -> PhiOperator:
    """Assembled Phi for (grid, spec), memoised for the life of the process."""
    key = (tuple(sorted(grid.params().items())), tuple(sorted(spec.as_dict().items())))
    if key not in _OPERATORS:
        _OPERATORS[key] = PhiOperator(grid, spec)
    return _OPERATORS[key]


def check_decay_class(f, lam: float, factor: float = 20.0) -> float:
    """Probe sup |f| (|y|^2 + s) along rays; raise if it keeps growing.

    Returns the probed constant c in |f| <= c / (|y|^2 + s).
    """
    if isinstance(f, ZeroSource):
        return 0.0
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(6, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = 10.0 ** np.arange(-2, 4)
    s_vals = np.array([1.0, lam, lam * lam * 0.999])
    y = (radii[:, None, None, None] * dirs[None, :, None, :]) * np.ones((1, 1, 3, 1))
    s = np.broadcast_to(s_vals[None, None, :], y.shape[:-1])
    F = np.asarray(f(y.reshape(-1, 3), s.reshape(-1)), dtype=float).reshape(y.shape[:-1] + (9,))
    ratio = np.abs(F).max(-1) * ((y * y).sum(-1) + s)
    per_r = ratio.max(axis=(1, 2))
    base = max(per_r[:3].max(), 1e-300)
    if per_r[-1] > factor * base and per_r[-1] > per_r[-2]:
        raise ValueError("f decays slower than 1/(|y|^2 + s) at the probe points")
    return float(per_r.max())


def phi_apply(f, grid: StripGrid, spec: Optional[QuadratureSpec] = None,
              gamma: float = 0.5, method: str = "operator", n_check: int = 6) -> StripField:
    """Phi f on the nodes of grid, returned as a StripField.

    method="operator" tabulates f on the source grid and applies the
    assembled map; method="direct" integrates f pointwise at every node.
    The metadata carries an error estimate: the weighted sup difference to
    a direct recomputation with the refined rule at n_check fixed nodes,
    relative to the weighted sup of the result.
    """
    spec = QuadratureSpec() if spec is None else spec
    lam = grid.lam
    if isinstance(f, ZeroSource):
        return StripField.zeros(grid, gamma)
    c_decay = check_decay_class(f, lam)
    X, T = grid.node_arrays()
    if method == "operator":
        op = phi_operator(grid, spec)
        Xs, Ts = op.src.node_arrays()
        F = np.asarray(f(Xs, Ts), dtype=float).reshape(op.src.shape + (3, 3))
        samples = op.apply(F)
    elif method == "direct":
        samples = phi_at(f, X, T, spec, lam).reshape(grid.shape + (3,))
    else:
        raise ValueError("method must be 'operator' or 'direct'")
    meta = {"method": method, "decay_constant": c_decay}
    if n_check > 0:
        idx = np.linspace(0, X.shape[0] - 1, n_check).round().astype(int)
        fine = phi_at(f, X[idx], T[idx], spec.refined(), lam)
        wgt = bracket(X) ** (1.0 + gamma)
        scale = float(np.max(np.linalg.norm(samples.reshape(-1, 3), axis=1) * wgt))
        diff = np.linalg.norm(samples.reshape(-1, 3)[idx] - fine, axis=1) * wgt[idx]
        est = float(diff.max() / scale) if scale > 0 else 0.0
        meta["error_estimate"] = est
        meta["tolerance_warning"] = est > spec.target_tol
        if est > spec.target_tol:
            warnings.warn(f"Phi error estimate {est:.2e} exceeds target_tol {spec.target_tol:.2e}")
    return StripField(grid, samples, gamma, meta=meta)


def pressure_recover(u, x, n_radial: int = 8, n_mu: int = 12, n_phi: int = 24,
                     r_min: float = 1e-4, r_max: float = 1e4) -> float:
    """p(x) = (-Delta)^{-1} d_i d_j (u_i u_j) for a field at fixed time.

    p = -|u(x)|^2 / 3 + p.v. int K_ij(x - y) u_i u_j(y) dy with
    K_ij(z) = (3 z_i z_j - |z|^2 delta_ij) / (4 pi |z|^5).  Spheres about x
    use an antipodally symmetric rule, on which K integrates to zero, so
    the principal value needs no subtraction.  r_min, r_max are relative
    to max(|x|, 1); u must decay like 1/|y| or faster.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(u(x[None])[0])):
        warnings.warn("u is singular at the evaluation point; shifting it slightly")
        x = x + 1e-7 * max(1.0, float(np.linalg.norm(x)))
    L = max(float(np.linalg.norm(x)), 1.0)
    edges = np.geomspace(r_min * L, r_max * L, int(round(np.log2(r_max / r_min))) + 1)
    r = float(np.linalg.norm(x))
    if edges[0] < r < edges[-1]:
        # the sphere through the origin, where u may be singular
        edges = np.unique(np.concatenate([edges, [r]]))
    gx, gw = np.polynomial.legendre.leggauss(n_radial)
    rad = ((edges[1:, None] - edges[:-1, None]) * 0.5 * (gx[None] + 1) + edges[:-1, None]).ravel()
    wrad = ((edges[1:, None] - edges[:-1, None]) * 0.5 * gw[None]).ravel()
    mx, mw = np.polynomial.legendre.leggauss(n_mu)
    ph = 2 * np.pi * np.arange(n_phi) / n_phi
    s = np.sqrt(1 - mx * mx)
    om = np.stack([s[:, None] * np.cos(ph), s[:, None] * np.sin(ph),
                   np.repeat(mx[:, None], n_phi, 1)], -1).reshape(-1, 3)
    wom = np.repeat(mw, n_phi) * (2 * np.pi / n_phi)
    # kernel on the unit sphere times rho^2: (3 w_i w_j - delta_ij) / (4 pi rho)
    Kom = (3 * om[:, :, None] * om[:, None, :] - np.eye(3)) / (4 * np.pi)
    total = 0.0
    for rho, wr in zip(rad, wrad):
        y = x[None] - rho * om
        uy = u(y)
        T = uy[:, :, None] * uy[:, None, :]
        total += wr / rho * np.einsum("n,nij,nij->", wom, Kom, T)
    ux = u(x[None])[0]
    return float(total - ux @ ux / 3.0)
