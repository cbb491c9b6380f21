"""Constant-coefficient heat kernel, half-plane image kernels, and the
closed-form layer-potential quadrature primitives built on them.

Sign conventions: arguments are (z, t; xi, tau) with s = t - tau > 0,
d = z - xi the direct separation and sigma = z + xi the image separation.
All raw evaluators accept s = 0 with d != 0 and return exact 0 (the
exponential dominates every power of 1/s), which is what makes reflected
contributions safe on the diagonal of Volterra history sums.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc, erfcx

from .errors import DegenerateTime, SingularAtOrigin

_SQRT_PI = np.sqrt(np.pi)
_INV_SQRT_4PI = 1.0 / np.sqrt(4.0 * np.pi)


# ---------------------------------------------------------------------------
# raw guarded evaluators (vectorized, s >= 0)
# ---------------------------------------------------------------------------

def heat_kernel(d, s):
    """k(d, s) = (4 pi s)^(-1/2) exp(-d^2 / (4 s)); exact 0 at s = 0, d != 0."""
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    out = np.zeros(np.broadcast(d, s).shape)
    pos = s > 0.0
    if np.any(pos):
        db = np.broadcast_to(d, out.shape)[pos]
        sb = np.broadcast_to(s, out.shape)[pos]
        out[pos] = np.exp(-db * db / (4.0 * sb)) / np.sqrt(4.0 * np.pi * sb)
    return out if out.ndim else float(out)


def heat_kernel_dz(d, s):
    """d/dz of k(z - xi, s) at separation d; exact 0 at s = 0, d != 0."""
    d = np.asarray(d, dtype=float)
    s = np.asarray(s, dtype=float)
    out = np.zeros(np.broadcast(d, s).shape)
    pos = s > 0.0
    if np.any(pos):
        db = np.broadcast_to(d, out.shape)[pos]
        sb = np.broadcast_to(s, out.shape)[pos]
        out[pos] = -db / (2.0 * sb) * np.exp(-db * db / (4.0 * sb)) / np.sqrt(4.0 * np.pi * sb)
    return out if out.ndim else float(out)


def guarded_exp_ratio(x, delta, alpha, n):
    """exp(-x^2/(alpha*delta)) / delta^(n/2), with the delta -> 0 limit folded in.

    For x > 0 the value never exceeds (n*alpha/(2*e*x^2))^(n/2).
    """
    if alpha <= 0.0:
        raise ValueError("alpha must be positive")
    if n < 1:
        raise ValueError("n must be >= 1")
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    if delta == 0.0:
        if x == 0.0:
            raise SingularAtOrigin("exp ratio undefined at x = 0, delta = 0")
        return 0.0
    return float(np.exp(-x * x / (alpha * delta)) / delta ** (n / 2.0))


# ---------------------------------------------------------------------------
# point API
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KernelPoint:
    """Evaluation point (z, t) against source point (xi, tau); needs t > tau."""

    z: float
    t: float
    xi: float
    tau: float

    def lag(self):
        s = self.t - self.tau
        if s <= 0.0:
            raise DegenerateTime(f"t - tau = {s} must be positive")
        return s


def eval_K(p: KernelPoint) -> float:
    """Free-space heat kernel at p; symmetric under z <-> xi."""
    s = p.lag()
    return float(heat_kernel(p.z - p.xi, s))


_G_KINDS = {"G", "dirichlet", "dirichlet-g"}
_N_KINDS = {"N", "neumann", "neumann-n"}


def _image_sign(kind) -> float:
    k = str(kind).strip().lower() if not isinstance(kind, str) else kind.strip().lower()
    if k in {s.lower() for s in _G_KINDS}:
        return -1.0
    if k in {s.lower() for s in _N_KINDS}:
        return +1.0
    raise ValueError(f"unknown kernel kind {kind!r}")


def eval_image_kernel(kind, p: KernelPoint) -> float:
    """Half-plane image kernel: G = K(z) - K(-z), N = K(z) + K(-z)."""
    s = p.lag()
    sign = _image_sign(kind)
    return float(heat_kernel(p.z - p.xi, s) + sign * heat_kernel(p.z + p.xi, s))


def eval_kernel_derivative(kind, wrt, p: KernelPoint) -> float:
    """Analytic partial derivative of K, G or N with respect to z or xi."""
    s = p.lag()
    d = p.z - p.xi
    sig = p.z + p.xi
    kd = heat_kernel_dz(d, s)        # = -(d/2s) k(d,s)
    ks = heat_kernel_dz(sig, s)      # = -(sig/2s) k(sig,s)
    kind_l = str(kind).strip().upper()
    if wrt not in ("z", "xi"):
        raise ValueError(f"unknown derivative variable {wrt!r}")
    if kind_l == "K":
        return float(kd if wrt == "z" else -kd)
    sign = _image_sign(kind)
    if wrt == "z":
        # d/dz [k(z-xi) + sign*k(z+xi)]
        return float(kd + sign * ks)
    # d/dxi [k(z-xi) + sign*k(z+xi)]
    return float(-kd + sign * ks)


# ---------------------------------------------------------------------------
# exact spatial quadrature of data against Gaussians
# ---------------------------------------------------------------------------

def _node_tables(x, c, s):
    """erf and k tables at nodes x (shape (M,)) against broadcast (c, s)."""
    x = np.asarray(x, dtype=float)
    c = np.asarray(c, dtype=float)
    s = np.asarray(s, dtype=float)
    rs = np.sqrt(4.0 * s)
    d = x.reshape((-1,) + (1,) * max(c.ndim, s.ndim)) - c  # (M, ...)
    erfs = erf(d / rs)
    ks = np.exp(-d * d / (4.0 * s)) / np.sqrt(4.0 * np.pi * s)
    return d, erfs, ks


def pl_gauss_mass(x, f, c, s):
    """integral of the piecewise-linear data (x, f) times k(xi - c, s) over [x0, xM].

    c and s broadcast together; the result has their broadcast shape.
    Exact for the linear interpolant, any s > 0.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    d, erfs, ks = _node_tables(x, c, s)
    s = np.asarray(s, dtype=float)
    i0 = 0.5 * (erfs[1:] - erfs[:-1])                      # (M-1, ...)
    i1 = 2.0 * s * (ks[:-1] - ks[1:])                      # moment about c
    h = np.diff(x)
    slope = (f[1:] - f[:-1]) / h
    fm = f[:-1]
    off = -d[:-1]                                          # c - x_m
    shp = (-1,) + (1,) * (i0.ndim - 1)
    return np.sum(fm.reshape(shp) * i0 + slope.reshape(shp) * (off * i0 + i1), axis=0)


def pl_gauss_dz(x, f, c, s):
    """d/dc of the single-layer mass: integral of f_pl(xi) * d/dc[k(c - xi, s)] dxi.

    Integration by parts puts the derivative on the data, so the result is
    exact for the linear interpolant even when the Gaussian is much narrower
    than the node spacing:  -f_M k(x_M - c) + f_0 k(x_0 - c) + sum slope*I0.
    """
    x = np.asarray(x, dtype=float)
    f = np.asarray(f, dtype=float)
    d, erfs, ks = _node_tables(x, c, s)
    i0 = 0.5 * (erfs[1:] - erfs[:-1])
    h = np.diff(x)
    slope = (f[1:] - f[:-1]) / h
    shp = (-1,) + (1,) * (i0.ndim - 1)
    return -f[-1] * ks[-1] + f[0] * ks[0] + np.sum(slope.reshape(shp) * i0, axis=0)


def ppoly_gauss_mass(pp, c, s, lo=None, hi=None):
    """integral of pp(xi) * k(xi - c, s) over [lo, hi] (default the pp span), exact.

    Piecewise-cubic data; c, s broadcast arrays.
    """
    lo = pp.lo if lo is None else float(lo)
    hi = pp.hi if hi is None else float(hi)
    inner = pp.breaks[(pp.breaks > lo) & (pp.breaks < hi)]
    edges = np.concatenate([[lo], inner, [hi]])
    d, erfs, ks = _node_tables(edges, c, s)
    s_arr = np.asarray(s, dtype=float)
    i0 = 0.5 * (erfs[1:] - erfs[:-1])
    i1 = 2.0 * s_arr * (ks[:-1] - ks[1:])
    i2 = -2.0 * s_arr * (d[1:] * ks[1:] - d[:-1] * ks[:-1]) + 2.0 * s_arr * i0
    i3 = -2.0 * s_arr * (d[1:] ** 2 * ks[1:] - d[:-1] ** 2 * ks[:-1]) + 4.0 * s_arr * i1
    moments = (i0, i1, i2, i3)
    mids = 0.5 * (edges[1:] + edges[:-1])
    piece = pp.piece_index(mids)
    base = pp.breaks[piece]
    coeff = pp.coeffs[piece]                               # (M-1, 4)
    # expand (xi - base)^q in powers of (xi - c): binomial with offset (c - base)
    off_c = np.asarray(c, dtype=float) - base.reshape((-1,) + (1,) * (i0.ndim - 1))
    binom = ((1,), (1, 1), (1, 2, 1), (1, 3, 3, 1))
    shp = (-1,) + (1,) * (i0.ndim - 1)
    total = np.zeros(i0.shape)
    for q in range(4):
        if not np.any(coeff[:, q]):
            continue
        cq = coeff[:, q].reshape(shp)
        for i in range(q + 1):
            total = total + cq * binom[q][i] * off_c ** (q - i) * moments[i]
    return np.sum(total, axis=0)


# ---------------------------------------------------------------------------
# exact time quadrature of layer potentials with a linearly moving source
# ---------------------------------------------------------------------------

def _ladder0(p, s):
    """Antiderivatives at s of s^{-1/2}, s^{1/2}, s^{3/2}, s^{5/2} times exp(-p^2/s)."""
    s = np.asarray(s, dtype=float)
    p = np.asarray(p, dtype=float)
    out_shape = np.broadcast(p, s).shape
    E12 = np.zeros(out_shape)
    Ep = np.zeros(out_shape)
    E3p = np.zeros(out_shape)
    E5p = np.zeros(out_shape)
    pos = np.broadcast_to(s, out_shape) > 0.0
    if np.any(pos):
        sb = np.broadcast_to(s, out_shape)[pos]
        pb = np.broadcast_to(p, out_shape)[pos]
        e = np.exp(-pb * pb / sb)
        r = np.sqrt(sb)
        E12[pos] = 2.0 * r * e - 2.0 * pb * _SQRT_PI * erfc(pb / r)
        Ep[pos] = (2.0 / 3.0) * sb * r * e - (2.0 * pb ** 2 / 3.0) * E12[pos]
        E3p[pos] = (2.0 / 5.0) * sb ** 2 * r * e - (2.0 * pb ** 2 / 5.0) * Ep[pos]
        E5p[pos] = (2.0 / 7.0) * sb ** 3 * r * e - (2.0 * pb ** 2 / 7.0) * E3p[pos]
    return E12, Ep, E3p, E5p


def _f_plus(p, q, s):
    out = np.zeros(np.broadcast(p, q, s).shape)
    pos = np.broadcast_to(s, out.shape) > 0.0
    if np.any(pos):
        pb = np.broadcast_to(p, out.shape)[pos]
        qb = np.broadcast_to(q, out.shape)[pos]
        sb = np.broadcast_to(s, out.shape)[pos]
        r = np.sqrt(sb)
        out[pos] = np.exp(-pb * pb / sb - qb * qb * sb) * erfcx(pb / r + qb * r)
    return out


def _f_minus(p, q, s):
    out = np.zeros(np.broadcast(p, q, s).shape)
    pos = np.broadcast_to(s, out.shape) > 0.0
    if np.any(pos):
        pb = np.broadcast_to(p, out.shape)[pos]
        qb = np.broadcast_to(q, out.shape)[pos]
        sb = np.broadcast_to(s, out.shape)[pos]
        r = np.sqrt(sb)
        w = pb / r - qb * r
        core = np.exp(-pb * pb / sb - qb * qb * sb) * erfcx(np.abs(w))
        out[pos] = np.where(w >= 0.0, core, 2.0 * np.exp(-2.0 * pb * qb) - core)
    return out


def layer_time_moments(d0, v, a, b):
    """Exact integrals over s in [a, b] of the heat-layer kernels with a
    linearly moving separation d(s) = d0 + v*s:

        m0K = int k(d(s), s) ds            m1K = int s * k(d(s), s) ds
        m0D = int d(s)/(2s) * k(d(s), s)   m1D = int s * d(s)/(2s) * k(...)

    Requires d0 != 0 whenever a == 0 (the on-curve diagonal is handled by the
    jump relation, not by these moments).  All arguments broadcast.
    """
    d0 = np.asarray(d0, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast(d0, v, a, b).shape
    d0 = np.broadcast_to(d0, shape).astype(float)
    v = np.broadcast_to(v, shape).astype(float)
    a = np.broadcast_to(a, shape).astype(float)
    b = np.broadcast_to(b, shape).astype(float)

    p = np.abs(d0) / 2.0
    q = np.abs(v) / 2.0
    pref = np.exp(-d0 * v / 2.0) * _INV_SQRT_4PI
    sgn = np.sign(d0)

    dFsum = (_f_plus(p, q, b) + _f_minus(p, q, b)) - (_f_plus(p, q, a) + _f_minus(p, q, a))
    pE32 = 0.5 * _SQRT_PI * dFsum

    small = (q * q * np.maximum(b, 0.0)) < 1e-3
    E12 = np.zeros(shape)
    Ep = np.zeros(shape)

    if np.any(small):
        l_b = _ladder0(p, np.where(small, b, 1.0))
        l_a = _ladder0(p, np.where(small & (a > 0), a, 0.0))
        dl = [lb - la for lb, la in zip(l_b, l_a)]
        qq = q * q
        E12 = np.where(small, dl[0] - qq * dl[1] + 0.5 * qq * qq * dl[2], E12)
        Ep = np.where(small, dl[1] - qq * dl[2] + 0.5 * qq * qq * dl[3], Ep)
    big = ~small
    if np.any(big):
        qb = np.where(big, q, 1.0)
        dFdif = (_f_plus(p, q, b) - _f_minus(p, q, b)) - (_f_plus(p, q, a) - _f_minus(p, q, a))
        E12_big = -_SQRT_PI / (2.0 * qb) * dFdif
        rb = np.where(b > 0, np.sqrt(np.maximum(b, 0.0)) * np.exp(
            np.where(b > 0, -p * p / np.maximum(b, 1e-300) - q * q * b, 0.0)), 0.0)
        ra = np.where(a > 0, np.sqrt(np.maximum(a, 1e-300)) * np.exp(
            np.where(a > 0, -p * p / np.maximum(a, 1e-300) - q * q * a, 0.0)), 0.0)
        Ep_big = (-(rb - ra) + 0.5 * E12_big + p * pE32) / (qb * qb)
        E12 = np.where(big, E12_big, E12)
        Ep = np.where(big, Ep_big, Ep)

    # degenerate stationary point: d0 == 0 and v == 0 -> pure (4 pi s)^{-1/2}
    degen = (p == 0.0) & (q == 0.0)
    if np.any(degen):
        sqb = np.sqrt(np.maximum(b, 0.0))
        sqa = np.sqrt(np.maximum(a, 0.0))
        E12 = np.where(degen, 2.0 * (sqb - sqa), E12)
        Ep = np.where(degen, (2.0 / 3.0) * (sqb ** 3 - sqa ** 3), Ep)

    m0K = pref * E12
    m1K = pref * Ep
    m0D = pref * (sgn * pE32 + (v / 2.0) * E12)
    m1D = (d0 / 2.0) * m0K + (v / 2.0) * m1K
    if not shape:
        return float(m0K), float(m1K), float(m0D), float(m1D)
    return m0K, m1K, m0D, m1D
