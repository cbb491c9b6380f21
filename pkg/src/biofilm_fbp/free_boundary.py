"""Biofilm thickness evolution and material-domain bookkeeping.

With sigma = 0 the boundary coincides with the top characteristic and is
copied from it exactly.  Detachment subtracts a rate sigma_d(L) and the
boundary falls inside the material domain (trim); attachment adds sigma_a(t)
and the domain is extended with fresh material.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .biomass_transport import BiomassState
from .errors import BoundaryOutsideDomain, ExtinctionReached, NonPhysicalState


@dataclass(frozen=True)
class SigmaSpec:
    """Attachment/detachment preset: none, detach (rate of L), attach (rate of t)."""

    mode: str = "none"                 # none | detach | attach
    form: str = "constant"             # constant | linear | quadratic (in L)
    coeff: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "detach", "attach"):
            raise ValueError(f"unknown sigma mode {self.mode!r}")
        if self.form not in ("constant", "linear", "quadratic"):
            raise ValueError(f"unknown sigma form {self.form!r}")

    def detach_rate(self, L):
        if self.form == "constant":
            return self.coeff
        if self.form == "linear":
            return self.coeff * L
        return self.coeff * L * L

    def attach_rate(self, t):
        if self.form == "constant":
            return self.coeff
        if self.form == "linear":
            return self.coeff * t
        return self.coeff * t * t


@dataclass
class FreeBoundaryState:
    L0: float
    sigma: SigmaSpec = field(default_factory=SigmaSpec)
    L_min_frac: float = 1e-6
    L: float = None
    Ldot: float = 0.0
    t_hist: list = field(default_factory=list)
    L_hist: list = field(default_factory=list)

    def __post_init__(self):
        if self.L is None:
            self.L = self.L0
        if not self.t_hist:
            self.t_hist = [0.0]
            self.L_hist = [self.L]

    def record(self, t, L, Ldot):
        if self.t_hist and t <= self.t_hist[-1]:
            raise NonPhysicalState("history timestamps must increase")
        self.t = t
        self.L = L
        self.Ldot = Ldot
        self.t_hist.append(t)
        self.L_hist.append(L)
        if L <= self.L_min_frac * self.L0:
            raise ExtinctionReached(f"L = {L:.3e} at t = {t:.6f}")


def sigma_term(state: FreeBoundaryState, L, t):
    if state.sigma.mode == "none":
        return 0.0
    if state.sigma.mode == "detach":
        return -state.sigma.detach_rate(L)
    return state.sigma.attach_rate(t)


def step_boundary(state: FreeBoundaryState, u_at_L, dt: float, t=None,
                  eta_top: float = None) -> FreeBoundaryState:
    """Advance L by one Heun step of dL/dt = u(L, t) + sigma.

    u_at_L is a callable z -> u (a constant value is also accepted).  For
    sigma mode "none" the boundary is instead copied from the top
    characteristic, which requires eta_top.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    t0 = state.t_hist[-1] if t is None else t
    if state.sigma.mode == "none":
        if eta_top is None:
            raise ValueError("sigma mode 'none' needs the top characteristic position")
        u_fn = u_at_L if callable(u_at_L) else (lambda _z: u_at_L)
        state.record(t0 + dt, float(eta_top), float(u_fn(eta_top)))
        return state
    u_fn = u_at_L if callable(u_at_L) else (lambda _z: u_at_L)
    L = state.L
    k1 = u_fn(L) + sigma_term(state, L, t0)
    L_pred = L + dt * k1
    k2 = u_fn(L_pred) + sigma_term(state, L_pred, t0 + dt)
    L_new = L + 0.5 * dt * (k1 + k2)
    state.record(t0 + dt, float(L_new), float(u_fn(L_new) + sigma_term(state, L_new, t0 + dt)))
    return state


def trim_domain(state: FreeBoundaryState, biomass: BiomassState,
                attach_fractions=None, tol: float = 1e-13):
    """Locate the material coordinate z0* with eta(z0*) = L.

    Detachment: returns (z0_star, biomass) with the active range implied by
    z0_star; raises if L left the material domain.  Attachment: appends one
    material node at the boundary carrying the configured composition and
    returns (new top z0, extended biomass state).
    """
    z0 = biomass.grid.z0
    eta = biomass.eta
    L = state.L
    if state.sigma.mode in ("none",):
        return z0[-1], biomass
    if state.sigma.mode == "detach":
        if L > eta[-1] * (1.0 + 1e-12) + tol:
            raise BoundaryOutsideDomain(f"L = {L} above top characteristic {eta[-1]}")
        L = min(L, eta[-1])
        # eta is strictly increasing: bisection on the node index
        k = int(np.searchsorted(eta, L, side="right")) - 1
        k = min(max(k, 0), len(z0) - 2)
        w = (L - eta[k]) / (eta[k + 1] - eta[k])
        z0_star = z0[k] + w * (z0[k + 1] - z0[k])
        return float(z0_star), biomass
    # attachment: extend the grid when the boundary outruns the top node
    if L <= eta[-1] + tol:
        return z0[-1], biomass
    if attach_fractions is None:
        raise ValueError("attachment needs a species composition for new material")
    fr = np.asarray(attach_fractions, dtype=float)
    if abs(fr.sum() - 1.0) > 1e-9:
        raise NonPhysicalState("attached composition must sum to 1")
    jac_top = biomass.jac[-1]
    new_z0 = z0[-1] + (L - eta[-1]) / jac_top
    new_eta = np.append(eta, L)
    new_jac = np.append(biomass.jac, jac_top)
    new_u = np.append(biomass.u, biomass.u[-1])
    new_X = np.hstack([biomass.X, (biomass.rho * fr)[:, None]])
    extended = ExtendedGrid(L0=biomass.grid.L0, N_z=biomass.grid.N_z,
                            extra=np.append(getattr(biomass.grid, "extra", np.empty(0)), new_z0))
    new_state = BiomassState(grid=extended, t=biomass.t, eta=new_eta, jac=new_jac,
                             u=new_u, X=new_X, rho=biomass.rho)
    return float(new_z0), new_state


@dataclass(frozen=True)
class ExtendedGrid:
    """Material grid extended beyond L0 by attachment events."""

    L0: float
    N_z: int
    extra: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def z0(self):
        base = np.linspace(0.0, self.L0, self.N_z + 1)
        return np.concatenate([base, np.asarray(self.extra, dtype=float)])


def check_window_bounds(t_hist, L_hist, M: float, lam: float, L0: float):
    """Certified-window diagnostics on a computed trajectory.

    Checks the Lipschitz bound |L(t) - L(tau)| <= M (t - tau) and the
    enclosure L0/2 <= L <= 3 L0/2 for all samples with t <= lam.
    """
    t = np.asarray(t_hist, dtype=float)
    L = np.asarray(L_hist, dtype=float)
    sel = t <= lam + 1e-15
    t, L = t[sel], L[sel]
    if t.size < 2:
        return {"lipschitz_ok": True, "enclosure_ok": True,
                "max_rate": 0.0, "max_excursion": 0.0}
    rates = np.abs(np.diff(L) / np.diff(t))
    max_rate = float(rates.max())
    max_exc = float(np.abs(L - L0).max())
    return {
        "lipschitz_ok": bool(max_rate <= M * (1 + 1e-9)),
        "enclosure_ok": bool(np.all(L >= L0 / 2) and np.all(L <= 1.5 * L0)),
        "max_rate": max_rate,
        "max_excursion": max_exc,
    }
