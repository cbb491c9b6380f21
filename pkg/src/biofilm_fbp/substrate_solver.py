"""Substrate diffusion on the moving domain via boundary-density Volterra
integral equations.

The unknown at each time node is the boundary flux theta_j = S_jz(L(t), t)
(or the boundary trace rho_j in Robin mode); substrate profiles are
reconstructed from the layer-potential representation.  Two representation
modes exist:

* ``image-corrected`` (default): every z = 0 interaction uses the even-image
  kernel, so the substratum flux condition holds by construction, the trace
  at 0 is evaluated a posteriori, and the moving-boundary advection term
  (density Ldot * psi) is kept in the representation.
* ``paper-literal``: odd-image kernels, the trace at 0 given by the
  degenerate printed formula (identically zero), no advection term.  Kept as
  a fidelity diagnostic, never mixed with the default path.

Quadrature policy: boundary-target history sums use product integration
exact for piecewise-linear densities against the (t - tau)^(-1/2) factor;
reflected-image terms are smooth and use the trapezoid rule on guarded
kernels; interior-target layer potentials use the exact moving-source
moments from ``kernels``; area sources are integrated exactly in space
(piecewise-linear data) and by trapezoid in time with a sqrt-refined tail.

A kernel diffusivity ``diff`` threads through every formula (single layers
and dipoles carry a diffusivity weight, diagonal constants pick up
1/sqrt(diff)); the rescaled constant-coefficient problem runs at diff = 1
and the constant-coefficient parametrix reduction runs the same code at
diff = a.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DiagonalDegeneracy, HistoryGap, NonPhysicalRobin
from .kernels import (heat_kernel, layer_time_moments, pl_gauss_dz,
                      pl_gauss_mass, ppoly_gauss_mass)
from .profiles import PiecewisePoly

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)
_GL_X01 = 0.5 * (_GL_X + 1.0)
_GL_W01 = 0.5 * _GL_W


def quad_weights_singular(grid, target=None):
    """Weights with sum_k w_k g(t_k) = int g(tau) (target - tau)^(-1/2) dtau,
    exact for piecewise-linear g on the (possibly nonuniform) grid."""
    ts = np.asarray(grid, dtype=float)
    if ts.ndim != 1 or ts.size < 1 or (ts.size > 1 and np.any(np.diff(ts) <= 0)):
        raise ValueError("grid must be strictly increasing")
    tn = ts[-1] if target is None else float(target)
    w = np.zeros(ts.size)
    if ts.size == 1:
        return w
    a = tn - ts[1:]
    b = tn - ts[:-1]
    h = ts[1:] - ts[:-1]
    sb, sa = np.sqrt(b), np.sqrt(np.maximum(a, 0.0))
    tb, ta = b * sb, a * sa
    w[:-1] += ((2.0 / 3.0) * (tb - ta) - 2.0 * a * (sb - sa)) / h
    w[1:] += (2.0 * b * (sb - sa) - (2.0 / 3.0) * (tb - ta)) / h
    return w


def trapezoid_weights(ts):
    ts = np.asarray(ts, dtype=float)
    w = np.zeros(ts.size)
    if ts.size > 1:
        h = np.diff(ts)
        w[:-1] += 0.5 * h
        w[1:] += 0.5 * h
    return w


@dataclass(frozen=True)
class RepresentationMode:
    mode: str = "image-corrected"

    def __post_init__(self):
        if self.mode not in ("image-corrected", "paper-literal"):
            raise ValueError(f"unknown representation mode {self.mode!r}")

    @property
    def image_sign(self):
        # N-family kernels by default, G-family in the literal mode
        return +1.0 if self.mode == "image-corrected" else -1.0

    @property
    def is_literal(self):
        return self.mode == "paper-literal"


@dataclass
class BoundarySpec:
    """Top-boundary condition for the substrate system."""

    kind: str = "dirichlet-neumann"          # or "neumann-robin"
    h: float = 0.0                           # boundary-layer thickness
    k: float = 1.0                           # transfer coefficient
    Dstar: Optional[np.ndarray] = None       # (m,) bulk diffusivities

    def __post_init__(self):
        if self.kind not in ("dirichlet-neumann", "neumann-robin"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if self.h < 0:
            raise ValueError("h must be nonnegative")
        if self.kind == "neumann-robin":
            if self.k <= 0:
                raise NonPhysicalRobin(f"k = {self.k} must be positive")
            if self.Dstar is None:
                raise ValueError("Robin boundary needs Dstar")
            self.Dstar = np.atleast_1d(np.asarray(self.Dstar, dtype=float))

    @property
    def is_robin(self):
        # h = 0 short-circuits to the Dirichlet sections with psi / k
        return self.kind == "neumann-robin" and self.h > 0.0

    def alphas(self, j, D_j):
        alpha1 = self.Dstar[j] / (self.h * D_j)
        alpha2 = self.k * self.Dstar[j] / (self.h * D_j)
        return alpha1, alpha2


class GeometryHistory:
    """Committed time grid with boundary and material-node trajectories."""

    def __init__(self, t0, L0, positions0, jac_top0=1.0, Ldot0=0.0):
        self.t0 = float(t0)
        self.L0w = float(L0)             # boundary position at the window origin
        self.ts = [float(t0)]
        self.Ls = [float(L0)]
        self.Ldots = [float(Ldot0)]
        self.jacL = [float(jac_top0)]
        self.positions = [np.asarray(positions0, dtype=float).copy()]

    def append(self, t, L, Ldot, positions, jac_top=1.0):
        if t <= self.ts[-1]:
            raise HistoryGap("geometry history must advance in time")
        self.ts.append(float(t))
        self.Ls.append(float(L))
        self.Ldots.append(float(Ldot))
        self.jacL.append(float(jac_top))
        self.positions.append(np.asarray(positions, dtype=float).copy())

    def __len__(self):
        return len(self.ts)


@dataclass
class SubstrateState:
    """Volterra state for one substrate on the current solution window."""

    D: float
    phi: PiecewisePoly                    # initial profile, rescaled units
    psi: PiecewisePoly                    # boundary signal, rescaled units
    diff: float = 1.0                     # kernel diffusivity (1 after rescaling)
    theta_hist: list = field(default_factory=list)
    trace0_hist: list = field(default_factory=list)   # S_j(0, t)
    traceL_hist: list = field(default_factory=list)   # S_j(L(t), t)
    F_hist: list = field(default_factory=list)        # node values per time
    S_nodes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.phi_prime = self.phi.derivative()
        self.psi_prime = self.psi.derivative()

    def seed(self, literal: bool, F0):
        self.theta_hist = [float(self.phi_prime(self.phi.hi))]
        self.trace0_hist = [0.0 if literal else float(self.phi(0.0))]
        self.traceL_hist = [float(self.phi(self.phi.hi))]
        self.F_hist = [np.asarray(F0, dtype=float).copy()]
        self.S_nodes = None

    def reset_window(self, phi_new, F0, literal: bool):
        self.phi = phi_new
        self.phi_prime = phi_new.derivative()
        self.seed(literal, F0)


def _interval_geometry(zt, ts, Ls, t_new):
    """Per-interval linear source motion: (d0, vd, sig0, vs, a, b).

    zt (T,) targets; ts/Ls (n+1,) include the candidate node.  d(s) =
    d0 + vd*s is the direct separation, sig(s) the image separation, with
    s = t_new - tau on [a_k, b_k] per interval.
    """
    ts = np.asarray(ts, dtype=float)
    Ls = np.asarray(Ls, dtype=float)
    a = t_new - ts[1:]
    b = t_new - ts[:-1]
    h = ts[1:] - ts[:-1]
    vL = (Ls[:-1] - Ls[1:]) / h          # dL/ds (s runs backwards in tau)
    zt = np.asarray(zt, dtype=float)[:, None]
    vd = -vL[None, :]
    d0 = (zt - Ls[1:][None, :]) - vd * a[None, :]
    vs = vL[None, :]
    sig0 = (zt + Ls[1:][None, :]) - vs * a[None, :]
    return d0, vd, sig0, vs, a, b


def _interval_density(vals, a, b):
    """Linear-in-s density coefficients (g0, gv) per interval from node values."""
    vals = np.asarray(vals, dtype=float)
    gv = (vals[:-1] - vals[1:]) / (b - a)
    g0 = vals[1:] - gv * a
    return g0, gv


def _moment_sum(kind, d0, v, a, b, g0, gv, diff):
    """sum_k int g(s) kernel(d(s), diff*s) ds with g(s) = g0 + gv s, exact.

    kind "K": k(d, diff*s); kind "D": (d/(2s)) k(d, diff*s).
    """
    m0K, m1K, m0D, m1D = layer_time_moments(d0, v / diff, a * diff, b * diff)
    if kind == "K":
        m0, m1 = m0K / diff, m1K / (diff * diff)
    else:
        m0, m1 = m0D, m1D / diff
    return np.sum(g0 * m0 + gv * m1, axis=-1)


class SubstrateSolver:
    """Per-step Volterra solves and profile reconstruction for all substrates."""

    def __init__(self, states, geometry: GeometryHistory,
                 boundary: BoundarySpec = None, mode: RepresentationMode = None):
        self.states = list(states)
        self.geometry = geometry
        self.boundary = boundary or BoundarySpec()
        self.mode = mode or RepresentationMode()
        self._frame = None

    # -- step protocol -------------------------------------------------------

    def begin_step(self, t_new: float, targets):
        """Open a candidate step; targets are the node positions used for
        profile evaluation (last entry is treated as the moving boundary)."""
        self._frame = _StepFrame(self, float(t_new), np.asarray(targets, dtype=float))
        return self._frame

    def committed_frame(self, targets):
        """Frame anchored at the last committed node (post-step evaluation)."""
        return _StepFrame(self, self.geometry.ts[-1],
                          np.asarray(targets, dtype=float), committed=True)

    def solve_theta_step(self, j, L_new, Ldot_new, F_new):
        """Advance the flux Volterra equation one node; returns theta_j(t_n)."""
        self._need_frame()
        return self._frame.solve_theta(j, float(L_new), float(Ldot_new),
                                       np.asarray(F_new, dtype=float))

    def solve_robin_step(self, j, L_new, Ldot_new, F_new):
        """Advance the coupled (rho_j, Phi_j) pair one node."""
        self._need_frame()
        return self._frame.solve_robin(j, float(L_new), float(Ldot_new),
                                       np.asarray(F_new, dtype=float))

    def profile_at_targets(self, j, L_new, Ldot_new, dens_new, F_new):
        self._need_frame()
        return self._frame.profile(j, float(L_new), float(Ldot_new), float(dens_new),
                                   np.asarray(F_new, dtype=float), top_is_boundary=True)

    def eval_phi(self, j, L_new=None, Ldot_new=None, dens_new=None, F_new=None):
        """Trace at the substratum.  Image-corrected mode evaluates the
        representation at z = 0; literal mode returns the printed value 0."""
        if self.mode.is_literal:
            return 0.0
        if self._frame is None or dens_new is None:
            frame = self.committed_frame(np.array([0.0]))
            st = self.states[j]
            dens = st.traceL_hist[-1] if self.boundary.is_robin else st.theta_hist[-1]
            return float(frame.profile(j, self.geometry.Ls[-1], self.geometry.Ldots[-1],
                                       dens, st.F_hist[-1], top_is_boundary=False)[0])
        vals = self._frame.profile(j, float(L_new), float(Ldot_new), float(dens_new),
                                   np.asarray(F_new, dtype=float),
                                   targets=np.array([0.0]), top_is_boundary=False)
        return float(vals[0])

    def eval_substrate_profile(self, j, targets=None):
        """S_j at targets on the committed history (t = t0 returns phi exactly)."""
        geom = self.geometry
        st = self.states[j]
        if targets is None:
            targets = geom.positions[-1]
        targets = np.asarray(targets, dtype=float)
        if len(geom) == 1:
            return st.phi(targets)
        frame = self.committed_frame(targets)
        dens = st.traceL_hist[-1] if self.boundary.is_robin else st.theta_hist[-1]
        top = bool(np.isclose(targets[-1], geom.Ls[-1]))
        return frame.profile(j, geom.Ls[-1], geom.Ldots[-1], dens, st.F_hist[-1],
                             top_is_boundary=top)

    def gradient_profile(self, j, targets=None):
        """S_jz at targets on the committed history (restart support)."""
        geom = self.geometry
        st = self.states[j]
        if targets is None:
            targets = geom.positions[-1]
        targets = np.asarray(targets, dtype=float)
        if len(geom) == 1:
            return st.phi_prime(targets)
        frame = self.committed_frame(targets)
        dens = st.traceL_hist[-1] if self.boundary.is_robin else st.theta_hist[-1]
        top = bool(np.isclose(targets[-1], geom.Ls[-1]))
        return frame.gradient(j, geom.Ls[-1], geom.Ldots[-1], dens, st.F_hist[-1],
                              top_is_boundary=top)

    def boundary_value(self, j, L_new, Ldot_new, dens_new, F_new):
        self._need_frame()
        return self._frame.boundary_value(j, float(L_new), float(Ldot_new),
                                          float(dens_new), np.asarray(F_new, dtype=float))

    def boundary_residual(self, j, L_new, Ldot_new, dens_new, F_new):
        """Dirichlet: |S(L-,t) - psi(t)|.  Robin: residual of the flux law."""
        st = self.states[j]
        t = self._frame.t_new
        sval = self.boundary_value(j, L_new, Ldot_new, dens_new, F_new)
        if self.boundary.is_robin:
            alpha1, alpha2 = self.boundary.alphas(j, st.D)
            flux = alpha1 * st.psi(t) - alpha2 * dens_new
            # by construction the solve substitutes the flux law; report the
            # trace mismatch against the reconstructed boundary value instead
            return float(abs(sval - dens_new))
        return float(abs(sval - st.psi(t)))

    def verify_flux_zero(self, j, positions=None, values=None):
        """|S_z(0,t)| by a one-sided 3-point difference at the substratum."""
        st = self.states[j]
        x = np.asarray(self.geometry.positions[-1] if positions is None else positions,
                       dtype=float)
        v = st.S_nodes if values is None else np.asarray(values, dtype=float)
        if v is None or x.size < 3:
            return float("nan")
        x1, x2 = x[1] - x[0], x[2] - x[0]
        c0 = -(x1 + x2) / (x1 * x2)
        c1 = x2 / (x1 * (x2 - x1))
        c2 = -x1 / (x2 * (x2 - x1))
        return float(abs(c0 * v[0] + c1 * v[1] + c2 * v[2]))

    def commit_step(self, j, dens_new, F_new, S_nodes, trace0):
        st = self.states[j]
        if self.boundary.is_robin:
            st.traceL_hist.append(float(dens_new))
            alpha1, alpha2 = self.boundary.alphas(j, st.D)
            st.theta_hist.append(float(alpha1 * st.psi(self._frame.t_new)
                                       - alpha2 * dens_new))
        else:
            st.theta_hist.append(float(dens_new))
            st.traceL_hist.append(float(S_nodes[-1]))
        st.trace0_hist.append(float(trace0))
        st.F_hist.append(np.asarray(F_new, dtype=float).copy())
        st.S_nodes = np.asarray(S_nodes, dtype=float).copy()

    def _need_frame(self):
        if self._frame is None:
            raise HistoryGap("begin_step must be called first")


class _StepFrame:
    """Quadrature state for one evaluation time t_new.

    With committed=False the frame represents a candidate step beyond the
    history; the per-iterate values (L_new, Ldot_new, dens_new, F_new) are
    passed into each call.  With committed=True the last history node is the
    evaluation time itself and the "candidate" arguments must repeat the
    committed values.
    """

    def __init__(self, solver: SubstrateSolver, t_new, targets, committed=False):
        self.solver = solver
        self.geom = solver.geometry
        self.mode = solver.mode
        self.t_new = float(t_new)
        self.targets = targets
        self.cand_positions = targets      # candidate-node geometry for sources
        self.committed = committed
        ts = np.asarray(self.geom.ts, dtype=float)
        if not committed and t_new <= ts[-1]:
            raise HistoryGap("candidate time must advance the grid")
        self.ts_full = ts if committed else np.append(ts, t_new)
        self.n = self.ts_full.size - 1
        self.w_sing = quad_weights_singular(self.ts_full)
        self.w_trap = trapezoid_weights(self.ts_full)
        self.s_full = self.t_new - self.ts_full

    # ----- shared per-call geometry -----------------------------------------

    def _hist_arrays(self, L_new, Ldot_new):
        if self.committed:
            Ls = np.asarray(self.geom.Ls, dtype=float)
            Ldots = np.asarray(self.geom.Ldots, dtype=float)
        else:
            Ls = np.append(np.asarray(self.geom.Ls, dtype=float), L_new)
            Ldots = np.append(np.asarray(self.geom.Ldots, dtype=float), Ldot_new)
        return Ls, Ldots

    def _dens_full(self, st, dens_new):
        base = st.traceL_hist if self.solver.boundary.is_robin else st.theta_hist
        if self.committed:
            return np.asarray(base, dtype=float)
        return np.append(np.asarray(base, dtype=float), dens_new)

    def _positions_at(self, k):
        if k < len(self.geom.positions):
            return self.geom.positions[k]
        return self.cand_positions

    def _F_at(self, st, k, F_new):
        if k < len(st.F_hist):
            return st.F_hist[k]
        return F_new

    # ----- boundary-target flux equation -------------------------------------

    def solve_theta(self, j, L_new, Ldot_new, F_new):
        rhs, diag = self._theta_assembly(j, L_new, Ldot_new, F_new)
        coeff = 1.0 - diag
        if abs(coeff) < 1e-12:
            raise DiagonalDegeneracy(f"flux-solve coefficient {coeff:.3e}")
        return rhs / coeff

    def _theta_assembly(self, j, L_new, Ldot_new, F_new):
        sv = self.solver
        st = sv.states[j]
        mode = self.mode
        geom = self.geom
        D = st.diff
        n = self.n
        ts, s = self.ts_full, self.s_full
        w, tw = self.w_sing, self.w_trap
        Ls, _ = self._hist_arrays(L_new, Ldot_new)
        dL, sigL = L_new - Ls, L_new + Ls
        sqrt_s = np.sqrt(np.maximum(s, 0.0))
        sD = np.maximum(s, 0.0) * D
        kdir = heat_kernel(dL, sD)
        kimg = heat_kernel(sigL, sD)
        pos = s > 0

        # data terms carry G-family kernels in the default mode (from the
        # by-parts of the even-image representation), N-family in literal mode
        img_data = +1.0 if mode.is_literal else -1.0
        T = self.t_new - geom.t0
        j_phi = float(ppoly_gauss_mass(st.phi_prime, np.array(L_new), np.array(T * D))
                      + img_data * ppoly_gauss_mass(st.phi_prime, np.array(-L_new), np.array(T * D)))
        L0w = geom.L0w
        kernL0 = float(heat_kernel(L_new - L0w, T * D)
                       + img_data * heat_kernel(L_new + L0w, T * D))
        psi0 = st.psi(geom.t0)
        if mode.is_literal:
            corner = (2.0 * float(heat_kernel(L_new, T * D))
                      * (st.phi(0.0) - st.trace0_hist[0])) - psi0 * kernL0
        else:
            corner = (psi0 - st.phi(st.phi.hi)) * kernL0

        psid = st.psi_prime(ts)
        g_psid = sqrt_s * kdir * psid
        g_psid[n] = psid[n] / (2.0 * np.sqrt(np.pi * D))
        j_psid = float(np.sum(w * g_psid) + np.sum(tw * img_data * kimg * psid))

        # flux-history kernel: diffusivity-weighted d/dz of the single layer
        # (net integrand -(dL/2s) k(dL, D s) -/+ (sigL/2s) k(sigL, D s))
        img_theta = -1.0 if mode.is_literal else +1.0
        dker_dir = np.zeros(n + 1)
        dker_dir[pos] = -dL[pos] / (2.0 * s[pos]) * kdir[pos]
        dker_img = np.zeros(n + 1)
        dker_img[pos] = -sigL[pos] / (2.0 * s[pos]) * kimg[pos]
        g_th = sqrt_s * dker_dir
        diag_g = -Ldot_new / (4.0 * np.sqrt(np.pi * D))
        thetas = np.asarray(st.theta_hist, dtype=float)
        hist_th = float(np.sum(w[:n] * g_th[:n] * thetas)
                        + np.sum(tw[:n] * img_theta * dker_img[:n] * thetas))
        diag_th = w[n] * diag_g

        if mode.is_literal:
            j_F = self._literal_F_boundary(st, L_new, F_new)
            diag_F = 0.0
        else:
            j_F, diag_F = self._area_flux_boundary(st, L_new, F_new)

        j_traced = self._literal_traced(st, L_new) if mode.is_literal else 0.0
        rhs = 2.0 * (j_phi + corner + j_psid + hist_th + j_F + j_traced)
        diag = 2.0 * (diag_th + diag_F)
        return rhs, diag

    def _area_flux_boundary(self, st, L_new, F_new):
        """Area source against the flux kernel at the boundary target."""
        geom = self.geom
        D = st.diff
        n = self.n
        w = self.w_sing
        s = self.s_full
        total = 0.0
        for k in range(n):
            x = geom.positions[k]
            f = st.F_hist[k]
            sk = s[k] * D
            inner = float(pl_gauss_dz(x, f, np.array(L_new), np.array(sk))
                          - pl_gauss_dz(x, f, np.array(-L_new), np.array(sk)))
            total += w[k] * np.sqrt(s[k]) * inner
        # diagonal: the boundary-adjacent half Gaussian of the source
        F_top = float(np.asarray(F_new).reshape(-1)[-1])
        total += self.w_sing[n] * (-F_top / (2.0 * np.sqrt(np.pi * D)))
        return total, 0.0

    def _literal_F_boundary(self, st, L_new, F_new):
        """Printed source structure: boundary traces of F with mass kernels."""
        n = self.n
        s = self.s_full
        D = st.diff
        w, tw = self.w_sing, self.w_trap
        Ls, _ = self._hist_arrays(L_new, 0.0)
        F_top = np.array([self._F_at(st, k, F_new).reshape(-1)[-1] for k in range(n + 1)])
        F_bot = np.array([self._F_at(st, k, F_new).reshape(-1)[0] for k in range(n + 1)])
        sD = np.maximum(s, 0.0) * D
        kdir = heat_kernel(L_new - Ls, sD)
        kimg = heat_kernel(L_new + Ls, sD)
        g = np.sqrt(np.maximum(s, 0.0)) * kdir * F_top
        g[n] = F_top[n] / (2.0 * np.sqrt(np.pi * D))
        term_L = -(np.sum(w * g) + np.sum(tw * kimg * F_top))
        kern0 = 2.0 * heat_kernel(np.full(n + 1, L_new), sD)
        term_0 = np.sum(tw * kern0 * F_bot)
        return float(term_L + term_0)

    def _literal_traced(self, st, L_new):
        """Literal trace-derivative history term (zero by construction)."""
        tr = np.asarray(st.trace0_hist, dtype=float)
        if not np.any(tr):
            return 0.0
        ts = self.ts_full[: tr.size]
        trd = np.gradient(tr, ts) if tr.size > 1 else np.zeros(1)
        sD = np.maximum(self.t_new - ts, 0.0) * st.diff
        kern0 = 2.0 * heat_kernel(np.full(tr.size, L_new), sD)
        return -float(np.sum(trapezoid_weights(ts) * kern0 * trd))

    # ----- boundary-target trace equation (Robin) -----------------------------

    def solve_robin(self, j, L_new, Ldot_new, F_new):
        rhs, coeff = self._robin_assembly(j, L_new, Ldot_new, F_new)
        if abs(coeff) < 1e-12:
            raise DiagonalDegeneracy(f"trace-solve coefficient {coeff:.3e}")
        # 2x2 closure: the substratum trace responds to rho_n through the
        # final-interval moments; assemble and solve the pair explicitly.
        phi_at_0 = self.profile(j, L_new, Ldot_new, 0.0, F_new,
                                targets=np.array([0.0]), top_is_boundary=False)[0]
        phi_at_1 = self.profile(j, L_new, Ldot_new, 1.0, F_new,
                                targets=np.array([0.0]), top_is_boundary=False)[0]
        c_phi_rho = phi_at_1 - phi_at_0
        mat = np.array([[coeff, 0.0], [-c_phi_rho, 1.0]])
        vec = np.array([rhs, phi_at_0])
        rho_n, phi_n = np.linalg.solve(mat, vec)
        return float(rho_n), float(phi_n)

    def _robin_assembly(self, j, L_new, Ldot_new, F_new):
        sv = self.solver
        st = sv.states[j]
        mode = self.mode
        D = st.diff
        n = self.n
        ts, s = self.ts_full, self.s_full
        w, tw = self.w_sing, self.w_trap
        Ls, Ldots = self._hist_arrays(L_new, Ldot_new)
        alpha1, alpha2 = sv.boundary.alphas(j, st.D)
        dL, sigL = L_new - Ls, L_new + Ls
        sqrt_s = np.sqrt(np.maximum(s, 0.0))
        sD = np.maximum(s, 0.0) * D
        kdir = heat_kernel(dL, sD)
        kimg = heat_kernel(sigL, sD)
        pos = s > 0
        img = mode.image_sign
        T = self.t_new - self.geom.t0
        a_phi = float(ppoly_gauss_mass(st.phi, np.array(L_new), np.array(T * D))
                      + img * ppoly_gauss_mass(st.phi, np.array(-L_new), np.array(T * D)))
        rhos = np.asarray(st.traceL_hist, dtype=float)
        psis = st.psi(ts)
        dens_weight = D if not mode.is_literal else 1.0

        g_sl = sqrt_s * kdir
        diag_k = 1.0 / (2.0 * np.sqrt(np.pi * D))
        sl_kernel_hist = w[:n] * g_sl[:n] + tw[:n] * img * kimg[:n]
        sl_hist = float(np.sum(sl_kernel_hist * dens_weight
                               * (alpha1 * psis[:n] - alpha2 * rhos)))
        sl_diag_rhs = w[n] * diag_k * dens_weight * alpha1 * psis[n]
        sl_diag_coef = -w[n] * diag_k * dens_weight * alpha2

        dip_dir = np.zeros(n + 1)
        dip_dir[pos] = dL[pos] / (2.0 * s[pos]) * kdir[pos] / D
        dip_img = np.zeros(n + 1)
        dip_img[pos] = sigL[pos] / (2.0 * s[pos]) * kimg[pos] / D
        g_dip = sqrt_s * dip_dir
        diag_dip = Ldot_new / (4.0 * np.sqrt(np.pi) * D ** 1.5)
        dip_hist = -float(np.sum((w[:n] * g_dip[:n] - tw[:n] * img * dip_img[:n])
                                 * dens_weight * rhos))
        dip_diag_coef = -w[n] * diag_dip * dens_weight

        mov_hist = 0.0
        mov_diag_coef = 0.0
        if not mode.is_literal:
            mov_hist = float(np.sum(sl_kernel_hist * Ldots[:n] * rhos))
            mov_diag_coef = w[n] * diag_k * Ldot_new

        a_F = float(self._area_mass(st, np.array([L_new]), L_new, F_new)[0])
        rhs = a_phi + sl_hist + sl_diag_rhs + dip_hist + mov_hist + a_F
        coeff = 1.0 - 0.5 - sl_diag_coef - dip_diag_coef - mov_diag_coef
        return rhs, coeff

    # ----- representation at targets ------------------------------------------

    def profile(self, j, L_new, Ldot_new, dens_new, F_new, targets=None,
                top_is_boundary=True):
        sv = self.solver
        st = sv.states[j]
        geom = self.geom
        D = st.diff
        tgts = self.targets if targets is None else np.asarray(targets, dtype=float)
        T = self.t_new - geom.t0
        img = self.mode.image_sign
        a_phi = (ppoly_gauss_mass(st.phi, tgts[:, None], np.array(T * D)).reshape(-1)
                 + img * ppoly_gauss_mass(st.phi, -tgts[:, None], np.array(T * D)).reshape(-1))
        out = np.empty(tgts.size)
        interior = np.ones(tgts.size, dtype=bool)
        if top_is_boundary:
            interior[-1] = False
        if np.any(interior):
            single, dip, mov = self._layer_terms(j, st, tgts[interior], L_new,
                                                 Ldot_new, dens_new)
            extra = (self._literal_trace_term(st, tgts[interior])
                     if self.mode.is_literal else 0.0)
            out[interior] = a_phi[interior] + single + dip + mov + extra
        if top_is_boundary:
            out[-1] = self._boundary_value_no_area(j, L_new, Ldot_new, dens_new)
        out = out + self._area_mass(st, tgts, L_new, F_new,
                                    boundary_last=top_is_boundary)
        return out

    def boundary_value(self, j, L_new, Ldot_new, dens_new, F_new):
        st = self.solver.states[j]
        val = self._boundary_value_no_area(j, L_new, Ldot_new, dens_new)
        area = float(self._area_mass(st, np.array([L_new]), L_new, F_new,
                                     boundary_last=True)[0])
        return float(val + area)

    def _boundary_value_no_area(self, j, L_new, Ldot_new, dens_new):
        """One-sided limit of the layer terms at z -> L(t)- (dipole jump included)."""
        sv = self.solver
        st = sv.states[j]
        mode = self.mode
        D = st.diff
        n = self.n
        ts, s = self.ts_full, self.s_full
        w, tw = self.w_sing, self.w_trap
        Ls, Ldots = self._hist_arrays(L_new, Ldot_new)
        dL, sigL = L_new - Ls, L_new + Ls
        sqrt_s = np.sqrt(np.maximum(s, 0.0))
        sD = np.maximum(s, 0.0) * D
        kdir = heat_kernel(dL, sD)
        kimg = heat_kernel(sigL, sD)
        pos = s > 0
        img = mode.image_sign
        T = self.t_new - self.geom.t0
        a_phi = float(ppoly_gauss_mass(st.phi, np.array(L_new), np.array(T * D))
                      + img * ppoly_gauss_mass(st.phi, np.array(-L_new), np.array(T * D)))
        sl_dens, dip_dens, mov_dens, jump_dens = self._densities(j, st, ts, Ldots,
                                                                 dens_new)
        g_sl = sqrt_s * kdir
        diag_k = 1.0 / (2.0 * np.sqrt(np.pi * D))
        sl_weights = w * np.where(pos, g_sl, 0.0) + tw * img * kimg
        sl_weights[n] = w[n] * diag_k + tw[n] * img * kimg[n]
        single = float(np.sum(sl_weights * sl_dens))

        dip_dir = np.zeros(n + 1)
        dip_dir[pos] = dL[pos] / (2.0 * s[pos]) * kdir[pos] / D
        dip_img = np.zeros(n + 1)
        dip_img[pos] = sigL[pos] / (2.0 * s[pos]) * kimg[pos] / D
        dip_weights = w * (sqrt_s * dip_dir) - tw * img * dip_img
        dip_weights[n] = w[n] * (Ldot_new / (4.0 * np.sqrt(np.pi) * D ** 1.5))
        dip = -float(np.sum(dip_weights * dip_dens)) + 0.5 * jump_dens

        mov = float(np.sum(sl_weights * mov_dens))
        return a_phi + single + dip + mov

    def _densities(self, j, st, ts, Ldots, dens_new):
        """Layer densities over the full grid for the current mode/boundary."""
        sv = self.solver
        mode = self.mode
        D = st.diff
        psis = st.psi(ts)
        if sv.boundary.is_robin:
            rhos = self._dens_full(st, dens_new)
            alpha1, alpha2 = sv.boundary.alphas(j, st.D)
            dens_weight = D if not mode.is_literal else 1.0
            sl = dens_weight * (alpha1 * psis - alpha2 * rhos)
            dip = dens_weight * rhos
            mov = (Ldots * rhos) if not mode.is_literal else np.zeros_like(rhos)
            return sl, dip, mov, rhos[-1]
        thetas = self._dens_full(st, dens_new)
        if mode.is_literal:
            jac = np.asarray(self.geom.jacL, dtype=float)
            jac = jac if self.committed else np.append(jac, jac[-1])
            return thetas, psis * jac, np.zeros_like(psis), psis[-1] * jac[-1]
        return D * thetas, D * psis, Ldots * psis, psis[-1]

    def _layer_terms(self, j, st, tgts, L_new, Ldot_new, dens_new):
        """Single-layer, dipole and advection potentials at interior targets
        via exact moving-source moments."""
        n = self.n
        if n == 0:
            z = np.zeros(tgts.size)
            return z, z.copy(), z.copy()
        ts = self.ts_full
        Ls, Ldots = self._hist_arrays(L_new, Ldot_new)
        D = st.diff
        img = self.mode.image_sign
        d0, vd, sig0, vs, a, b = _interval_geometry(tgts, ts, Ls, self.t_new)
        sl_dens, dip_dens, mov_dens, _ = self._densities(j, st, ts, Ldots, dens_new)

        g0, gv = _interval_density(sl_dens, a, b)
        single = (_moment_sum("K", d0, vd, a, b, g0, gv, D)
                  + img * _moment_sum("K", sig0, vs, a, b, g0, gv, D))
        g0, gv = _interval_density(dip_dens, a, b)
        dip = -(_moment_sum("D", d0, vd, a, b, g0, gv, D) / D
                - img * _moment_sum("D", sig0, vs, a, b, g0, gv, D) / D)
        if np.any(mov_dens):
            g0, gv = _interval_density(mov_dens, a, b)
            mov = (_moment_sum("K", d0, vd, a, b, g0, gv, D)
                   + img * _moment_sum("K", sig0, vs, a, b, g0, gv, D))
        else:
            mov = np.zeros(tgts.size)
        return single, dip, mov

    def _literal_trace_term(self, st, tgts):
        """Literal-mode z = 0 dipole with the printed (zero) trace density."""
        tr = np.asarray(st.trace0_hist, dtype=float)
        if not np.any(tr):
            return 0.0
        ts = self.ts_full[: tr.size]
        s = self.t_new - ts
        D = st.diff
        tw = trapezoid_weights(ts)
        pos = s > 0
        kern = np.zeros((tgts.size, ts.size))
        zz = tgts[:, None]
        kern[:, pos] = zz / (s[pos] * D) * heat_kernel(zz, s[pos] * D)
        return kern @ (tw * tr)

    def _area_mass(self, st, tgts, L_new, F_new, boundary_last=False):
        """Area potential of the source history at targets (mass kernel)."""
        geom = self.geom
        D = st.diff
        img = self.mode.image_sign
        n = self.n
        ts = self.ts_full
        if n == 0 or all(not np.any(fh) for fh in st.F_hist) and not np.any(F_new):
            return np.zeros(tgts.size)
        col = tgts[:, None]

        def inner(x, f, s_val):
            if s_val <= 0.0:
                vals = np.interp(tgts, x, f)
                mass = np.ones(tgts.size)
                if boundary_last:
                    mass[-1] = 0.5
                return vals * mass
            sD = s_val * D
            return (pl_gauss_mass(x, f, col, np.array(sD)).reshape(-1)
                    + img * pl_gauss_mass(x, f, -col, np.array(sD)).reshape(-1))

        total = np.zeros(tgts.size)
        refine_from = max(0, n - 2)
        if refine_from > 0:
            tw = trapezoid_weights(ts[: refine_from + 1])
            for k in range(refine_from + 1):
                total += tw[k] * inner(geom.positions[k], st.F_hist[k],
                                       self.t_new - ts[k])
        for k in range(refine_from, n):
            x_lo = self._positions_at(k)
            x_hi = self._positions_at(k + 1)
            f_lo = self._F_at(st, k, F_new)
            f_hi = self._F_at(st, k + 1, F_new)
            a = self.t_new - ts[k + 1]
            b = self.t_new - ts[k]
            va, vb = np.sqrt(max(a, 0.0)), np.sqrt(b)
            vg = va + (vb - va) * _GL_X01
            wg = (vb - va) * _GL_W01 * 2.0 * vg
            same_shape = x_lo.size == x_hi.size
            for v_node, w_node in zip(vg, wg):
                s_val = v_node * v_node
                alpha = (self.t_new - s_val - ts[k]) / (ts[k + 1] - ts[k])
                if same_shape:
                    x = x_lo * (1 - alpha) + x_hi * alpha
                    f = f_lo * (1 - alpha) + f_hi * alpha
                else:
                    x, f = (x_lo, f_lo) if alpha < 0.5 else (x_hi, f_hi)
                total += w_node * inner(x, f, s_val)
        return total

    # ----- gradient at targets -------------------------------------------------

    def gradient(self, j, L_new, Ldot_new, dens_new, F_new, top_is_boundary=True):
        """S_jz at the frame targets: the flux-equation assembly evaluated at
        interior points (no jump); the boundary row is the flux itself."""
        sv = self.solver
        st = sv.states[j]
        geom = self.geom
        D = st.diff
        mode = self.mode
        tgts = self.targets
        n = self.n
        ts = self.ts_full
        if sv.boundary.is_robin:
            # central differences of the representation; the Robin restart
            # path only needs smoke-level gradients
            hstep = 1e-6 * max(L_new, 1.0)
            up = self.profile(j, L_new, Ldot_new, dens_new, F_new,
                              targets=np.minimum(tgts + hstep, L_new), top_is_boundary=False)
            dn = self.profile(j, L_new, Ldot_new, dens_new, F_new,
                              targets=np.maximum(tgts - hstep, 0.0), top_is_boundary=False)
            out = (up - dn) / (np.minimum(tgts + hstep, L_new) - np.maximum(tgts - hstep, 0.0))
        else:
            Ls, _ = self._hist_arrays(L_new, Ldot_new)
            T = self.t_new - geom.t0
            img_data = +1.0 if mode.is_literal else -1.0
            g_phi = (ppoly_gauss_mass(st.phi_prime, tgts[:, None], np.array(T * D)).reshape(-1)
                     + img_data * ppoly_gauss_mass(st.phi_prime, -tgts[:, None],
                                                   np.array(T * D)).reshape(-1))
            L0w = geom.L0w
            kernL0 = (heat_kernel(tgts - L0w, T * D)
                      + img_data * heat_kernel(tgts + L0w, T * D))
            corner = (st.psi(geom.t0) - st.phi(st.phi.hi)) * kernL0
            out = g_phi + corner
            if n > 0:
                d0, vd, sig0, vs, a, b = _interval_geometry(tgts, ts, Ls, self.t_new)
                psid = st.psi_prime(ts)
                g0, gv = _interval_density(psid, a, b)
                out += (_moment_sum("K", d0, vd, a, b, g0, gv, D)
                        + img_data * _moment_sum("K", sig0, vs, a, b, g0, gv, D))
                # diffusivity-weighted flux-history kernel, interior form
                img_theta = -1.0 if mode.is_literal else +1.0
                thetas = self._dens_full(st, dens_new)
                g0, gv = _interval_density(thetas, a, b)
                out += -(_moment_sum("D", d0, vd, a, b, g0, gv, D)
                         + img_theta * _moment_sum("D", sig0, vs, a, b, g0, gv, D))
                out += self._area_flux_targets(st, tgts, F_new)
        if top_is_boundary:
            if sv.boundary.is_robin:
                alpha1, alpha2 = sv.boundary.alphas(j, st.D)
                out[-1] = alpha1 * st.psi(self.t_new) - alpha2 * dens_new
            else:
                out[-1] = dens_new
        return out

    def _area_flux_targets(self, st, tgts, F_new):
        D = st.diff
        sgn = +1.0 if self.mode.is_literal else -1.0
        ts = self.ts_full
        tw = trapezoid_weights(ts)
        total = np.zeros(tgts.size)
        col = tgts[:, None]
        for k in range(self.n + 1):
            s_val = self.t_new - ts[k]
            if s_val <= 0.0:
                continue
            x = self._positions_at(k)
            f = self._F_at(st, k, F_new)
            sD = s_val * D
            inner = (pl_gauss_dz(x, f, col, np.array(sD)).reshape(-1)
                     + sgn * pl_gauss_dz(x, f, -col, np.array(sD)).reshape(-1))
            total += tw[k] * inner
        return total
