"""Reaction terms: biomass growth, velocity source, substrate consumption.

The preset is Monod growth with optional linear decay,

    growth_i = mu_max_i * X_i * prod_j S_j / (K_S_ij + S_j)   (j in the
    species' substrate set), Htilde_i = growth_i - decay_i * X_i,

with the velocity source R = sum_i Htilde_i / rho_i and the advected-frame
growth H_i = Htilde_i - X_i * R.  Substrate sinks take only the growth part:
F_j = -sum_i growth_i / Y_ij.  All terms act on the rescaled substrate
variables; half-saturation constants are therefore in rescaled units.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Callable, Optional

import numpy as np

from .errors import NegativeState

NEG_TOL = -1e-12


@dataclass
class KineticsSpec:
    """Monod-with-decay reaction network for n species and m substrates."""

    n: int
    m: int
    rho: np.ndarray                  # (n,) biomass densities, > 0
    mu_max: np.ndarray               # (n,) max specific growth rates, >= 0
    K_S: np.ndarray                  # (n, m) half-saturation, > 0 where used
    decay: np.ndarray                # (n,) linear decay rates, >= 0
    yield_XS: np.ndarray             # (n, m) yields Y_ij, > 0 where used
    uses: np.ndarray = None          # (n, m) bool, substrate index sets
    custom_growth: Optional[Callable] = None   # (X, S) -> Htilde (n, ...)
    custom_sources: Optional[Callable] = None  # (X, S) -> F (m, ...)

    def __post_init__(self):
        self.rho = np.atleast_1d(np.asarray(self.rho, dtype=float))
        self.mu_max = np.atleast_1d(np.asarray(self.mu_max, dtype=float))
        self.K_S = np.asarray(self.K_S, dtype=float).reshape(self.n, self.m)
        self.decay = np.atleast_1d(np.asarray(self.decay, dtype=float))
        self.yield_XS = np.asarray(self.yield_XS, dtype=float).reshape(self.n, self.m)
        if self.uses is None:
            self.uses = np.ones((self.n, self.m), dtype=bool)
        else:
            self.uses = np.asarray(self.uses, dtype=bool).reshape(self.n, self.m)
        if np.any(self.rho <= 0):
            raise ValueError("rho must be positive")
        if np.any(self.mu_max < 0) or np.any(self.decay < 0):
            raise ValueError("rates must be nonnegative")
        if np.any(self.K_S[self.uses] <= 0):
            raise ValueError("K_S must be positive on used substrates")
        if np.any(self.yield_XS[self.uses] <= 0):
            raise ValueError("yields must be positive on used substrates")


def _clamp(name, arr):
    arr = np.asarray(arr, dtype=float)
    if np.any(arr < NEG_TOL):
        raise NegativeState(f"{name} below tolerance: min = {arr.min():.3e}")
    return np.maximum(arr, 0.0)


def _growth(spec: KineticsSpec, X, S):
    """Growth part of Htilde (no decay), shape (n, ...)."""
    monod = np.ones((spec.n,) + S.shape[1:])
    for i in range(spec.n):
        for j in range(spec.m):
            if spec.uses[i, j]:
                monod[i] = monod[i] * S[j] / (spec.K_S[i, j] + S[j])
    return spec.mu_max.reshape((-1,) + (1,) * (X.ndim - 1)) * X * monod


def eval_growth_terms(spec: KineticsSpec, X, S):
    """Return (Htilde, H, R) at the given state; trailing axes broadcast."""
    X = _clamp("X", _as_rows(X, spec.n))
    S = _clamp("S", _as_rows(S, spec.m))
    if spec.custom_growth is not None:
        Htilde = np.asarray(spec.custom_growth(X, S), dtype=float)
    else:
        shp = (-1,) + (1,) * (X.ndim - 1)
        Htilde = _growth(spec, X, S) - spec.decay.reshape(shp) * X
    shp = (-1,) + (1,) * (X.ndim - 1)
    R = np.sum(Htilde / spec.rho.reshape(shp), axis=0)
    H = Htilde - X * R
    return Htilde, H, R


def eval_substrate_sources(spec: KineticsSpec, X, S):
    """Return F_j (m, ...): consumption of each substrate by growth."""
    X = _as_rows(X, spec.n)
    X = _clamp("X", X)
    S = _as_rows(S, spec.m)
    S = _clamp("S", S)
    if spec.custom_sources is not None:
        return np.asarray(spec.custom_sources(X, S), dtype=float)
    g = _growth(spec, X, S)
    F = np.zeros((spec.m,) + X.shape[1:])
    for j in range(spec.m):
        for i in range(spec.n):
            if spec.uses[i, j]:
                F[j] = F[j] - g[i] / spec.yield_XS[i, j]
    return F


def _as_rows(arr, rows):
    arr = np.asarray(arr, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[0] != rows:
        raise ValueError(f"leading axis must have length {rows}")
    return arr


@dataclass
class LipschitzEstimate:
    raw: float
    reported: float          # raw * safety factor
    safety: float = 1.1


def estimate_lipschitz(spec: KineticsSpec, box, samples_per_axis: int = 5,
                       safety: float = 1.1) -> LipschitzEstimate:
    """Sup-norm Lipschitz constant of (Htilde, F) over the state box.

    box = (X_bounds, S_bounds) with rows (lo, hi) per component.  The
    constant is the lattice sup of the l1 gradient norm per output, computed
    by central differences; monotone nondecreasing in the box extents.
    """
    X_bounds = np.asarray(box[0], dtype=float).reshape(spec.n, 2)
    S_bounds = np.asarray(box[1], dtype=float).reshape(spec.m, 2)
    bounds = np.vstack([X_bounds, S_bounds])
    if not np.all(np.isfinite(bounds)) or np.any(bounds[:, 1] < bounds[:, 0]):
        raise ValueError("box must have finite ordered extents")
    axes = [np.linspace(lo, hi, samples_per_axis) for lo, hi in bounds]
    dim = spec.n + spec.m

    def terms(state):
        X, S = state[: spec.n], state[spec.n:]
        X = np.maximum(X, 0.0)
        S = np.maximum(S, 0.0)
        if spec.custom_growth is not None:
            Ht = np.asarray(spec.custom_growth(X, S), dtype=float)
        else:
            Ht = _growth(spec, X, S) - spec.decay * X
        if spec.custom_sources is not None:
            F = np.asarray(spec.custom_sources(X, S), dtype=float)
        else:
            g = _growth(spec, X, S)
            F = np.array([-np.sum(np.where(spec.uses[:, j], g / spec.yield_XS[:, j], 0.0))
                          for j in range(spec.m)])
        return np.concatenate([np.atleast_1d(Ht), np.atleast_1d(F)])

    raw = 0.0
    scale = np.maximum(bounds[:, 1] - bounds[:, 0], 1.0)
    h = 1e-6 * scale
    for point in product(*axes):
        state = np.array(point, dtype=float)
        grad_l1 = np.zeros(spec.n + spec.m)
        for ax in range(dim):
            up = state.copy(); up[ax] += h[ax]
            dn = state.copy(); dn[ax] -= h[ax]
            grad_l1 += np.abs(terms(up) - terms(dn)) / (2 * h[ax])
        raw = max(raw, float(np.max(grad_l1)))
    return LipschitzEstimate(raw=raw, reported=safety * raw, safety=safety)
