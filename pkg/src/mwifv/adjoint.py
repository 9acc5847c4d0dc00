"""Continuous-adjoint companion of the SIMPLE solver with adjoint MWI modes.

The adjoint system is solved on a frozen primal state. Adjoint convection
runs against the primal mass flux while diffusion is shared with the primal.
Every coupling term, such as transposed convection or the scalar coupling,
is treated explicitly. The adjoint face velocities use the same MWI core
as the primal, with the adjoint momentum sources included according to the
selected mode:

* ``E1``: sources ignored inside the face interpolation,
* ``E2``: sources included with plain linear levers,
* ``E3``: sources included with reversed levers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .case import Case, ConfigError, source_volume_average
from .fields import green_gauss_gradient, interp_linear, interp_reversed
from .mesh import Mesh
from .mwi import RelaxationTerms, interpolated_velocity, mwi_correction, mwi_face_velocity
from .primal import (
    PrimalState,
    SolveResult,
    _assemble_momentum_common,
    _nonsym,
    check_divergence,
    face_beta,
    mwi_faces,
    pressure_correction,
    pressure_gradient,
    scalar_bc,
    solve_momentum,
    velocity_boundary_values,
)
from .linalg import solve
from .transport import FaceBC, assemble_transport

MWI_MODES = ("E1", "E2", "E3")
VOLUME_KINDS = ("pressure", "kinetic", "scalar", "unit")
BOUNDARY_KINDS = ("area", "force")


@dataclass
class Objective:
    """Objective ``J = sum_F j^Gamma dGamma + sum_P j^Omega dOmega``.

    Volume densities: ``pressure`` (``p``), ``kinetic`` (``v.v/2``),
    ``scalar`` (``(phi - target)^2``) and ``unit`` (``1``), restricted to the
    cells flagged in ``region`` (all cells when ``None``). Boundary
    densities: ``area`` (``1``) and ``force`` (``(p n - mu dv/dn) . direction``)
    on ``patches``.
    """

    volume: str | None = "kinetic"
    region: np.ndarray | None = None
    target: float = 0.0
    boundary: str | None = None
    patches: tuple = ()
    direction: tuple = (1.0, 0.0)

    def __post_init__(self):
        if self.volume is not None and self.volume not in VOLUME_KINDS:
            raise ConfigError(f"volume objective must be one of {VOLUME_KINDS}, got {self.volume!r}")
        if self.boundary is not None and self.boundary not in BOUNDARY_KINDS:
            raise ConfigError(f"boundary objective must be one of {BOUNDARY_KINDS}, got {self.boundary!r}")
        if self.volume is None and self.boundary is None:
            raise ConfigError("objective needs a volume or a boundary contribution")
        if self.boundary is not None and not self.patches:
            raise ConfigError("boundary objective needs at least one patch")
        if self.region is not None:
            self.region = np.asarray(self.region, dtype=bool)
            if not self.region.any():
                raise ConfigError("objective region is empty")

    def mask(self, mesh: Mesh) -> np.ndarray:
        if self.region is None:
            return np.ones(mesh.n_cells, bool)
        if self.region.shape != (mesh.n_cells,):
            raise ConfigError("objective region does not match the mesh")
        return self.region

    def boundary_faces(self, mesh: Mesh) -> np.ndarray:
        faces = []
        for name in self.patches:
            if name not in mesh.patches:
                raise ConfigError(f"objective patch {name!r} not in mesh")
            faces.append(mesh.patches[name].faces)
        return np.concatenate(faces) if faces else np.zeros(0, int)

    # derivatives of the volume density
    def d_dv(self, mesh: Mesh, state: PrimalState) -> np.ndarray:
        out = np.zeros((mesh.n_cells, 2))
        if self.volume == "kinetic":
            m = self.mask(mesh)
            out[m] = state.v[m]
        return out

    def d_dp(self, mesh: Mesh, state: PrimalState) -> np.ndarray:
        out = np.zeros(mesh.n_cells)
        if self.volume == "pressure":
            out[self.mask(mesh)] = 1.0
        return out

    def d_dphi(self, mesh: Mesh, state: PrimalState) -> np.ndarray:
        out = np.zeros(mesh.n_cells)
        if self.volume == "scalar":
            m = self.mask(mesh)
            out[m] = 2.0 * (state.phi[m] - self.target)
        return out


@dataclass
class AdjointState:
    v: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    vf: np.ndarray
    flux: np.ndarray
    grad_p: np.ndarray
    v_prev: np.ndarray | None = None
    iteration: int = 0

    @classmethod
    def zeros(cls, mesh: Mesh) -> "AdjointState":
        nc, nf = mesh.n_cells, mesh.n_faces
        return cls(np.zeros((nc, 2)), np.zeros(nc), np.zeros(nc), np.zeros((nf, 2)), np.zeros(nf), np.zeros((nc, 2)))

    def copy(self) -> "AdjointState":
        return AdjointState(
            self.v.copy(), self.p.copy(), self.phi.copy(), self.vf.copy(), self.flux.copy(),
            self.grad_p.copy(), None if self.v_prev is None else self.v_prev.copy(), self.iteration,
        )


@dataclass
class AdjointSourceModel:
    """Explicit adjoint source evaluators on a frozen primal state.

    Everything that depends only on the primal is evaluated once at
    construction: the primal scalar gradient, the primal velocity gradient
    (for the transposed-convection term) and the objective derivatives.
    """

    case: Case
    primal: PrimalState
    objective: Objective
    grad_phi: np.ndarray = field(init=False)
    grad_v: np.ndarray = field(init=False)
    dj_dv: np.ndarray = field(init=False)
    dj_dp: np.ndarray = field(init=False)
    dj_dphi: np.ndarray = field(init=False)

    def __post_init__(self):
        mesh = self.case.mesh
        st = self.primal
        bc = scalar_bc(self.case)
        self.grad_phi = green_gauss_gradient(st.phi, mesh, bc.values(mesh, st.phi))
        self.grad_v = green_gauss_gradient(st.v, mesh, velocity_boundary_values(self.case, st.v))
        self.dj_dv = self.objective.d_dv(mesh, st)
        self.dj_dp = self.objective.d_dp(mesh, st)
        self.dj_dphi = self.objective.d_dphi(mesh, st)

    @property
    def scalar_coupled(self) -> bool:
        return bool(self.case.config.solve_scalar)

    def q_hat(self, adj: AdjointState) -> np.ndarray:
        """Adjoint momentum source ``phi_hat ds/dv - phi_hat grad(phi) - dj/dv``.

        The scalar sources of the built-in catalog do not depend on the
        velocity, so the first term is zero.
        """
        q = -self.dj_dv
        if self.scalar_coupled:
            q = q - adj.phi[:, None] * self.grad_phi
        return q

    def transposed_convection(self, adj: AdjointState) -> np.ndarray:
        """``rho v_hat_k dv_k/dx_i`` per cell."""
        return self.case.config.rho * np.einsum("ck,cki->ci", adj.v, self.grad_v)

    def continuity_rhs(self, adj: AdjointState) -> np.ndarray:
        """Target of ``sum_F v_hat^F . dGamma`` per cell."""
        mesh = self.case.mesh
        dq_dp = self.case.body_force.d_dp(mesh)
        ds_dp = self.case.scalar_source.pressure
        rhs = -np.einsum("ci,ci->c", adj.v, dq_dp) - ds_dp * adj.phi + self.dj_dp
        return rhs * mesh.cell_volume

    def scalar_rhs(self, adj: AdjointState) -> np.ndarray:
        mesh = self.case.mesh
        dq_dphi = self.case.body_force.d_dphi(mesh)
        return (np.einsum("ci,ci->c", adj.v, dq_dphi) - self.dj_dphi) * mesh.cell_volume


def adjoint_source_reconstruct(q_hat: np.ndarray, mesh: Mesh, mode: str = "E3"):
    """Face and cell reconstructions of the adjoint momentum source.

    Returns ``(q1_face, q2_face, Q_cell)`` where ``q1_face`` is the face
    reconstruction of the raw cell values, ``Q_cell`` the Gauss-lever cell
    average and ``q2_face`` its linear interpolation. ``E3`` uses reversed
    levers, ``E2`` linear levers throughout; ``E1`` returns ``None`` faces.
    """
    if mode not in MWI_MODES:
        raise ConfigError(f"mode must be one of {MWI_MODES}, got {mode!r}")
    if mode == "E1":
        return None, None, source_volume_average(q_hat, mesh, "C2", "reversed")
    levers = "reversed" if mode == "E3" else "linear"
    q1 = interp_reversed(q_hat, mesh) if mode == "E3" else interp_linear(q_hat, mesh)
    Q = source_volume_average(q_hat, mesh, "C2", levers)
    return q1, interp_linear(Q, mesh), Q


# -- boundary handling --------------------------------------------------------


def adjoint_wall_velocity(case: Case, objective: Objective | None) -> np.ndarray:
    """Prescribed adjoint velocity on wall and inlet faces."""
    mesh = case.mesh
    out = np.zeros((mesh.n_boundary, 2))
    if objective is not None and objective.boundary == "force":
        faces = objective.boundary_faces(mesh) - mesh.n_interior
        out[faces] = -np.asarray(objective.direction, float)
    return out


def adjoint_velocity_boundary_values(case: Case, v_hat: np.ndarray, wall_velocity: np.ndarray) -> np.ndarray:
    mesh, bd = case.mesh, case.boundary
    vp = v_hat[mesh.owner[mesh.n_interior :]]
    vb = vp.copy()
    pres = bd.prescribed_velocity
    vb[pres] = wall_velocity[pres]
    slip = bd.slip
    if slip.any():
        n = mesh.face_normal[mesh.n_interior :][slip]
        vn = np.einsum("fi,fi->f", vp[slip], n)
        vb[slip] = vp[slip] - vn[:, None] * n
    return vb


def adjoint_momentum_bc(case: Case, v_hat: np.ndarray, comp: int, wall_velocity: np.ndarray) -> FaceBC:
    mesh, bd = case.mesh, case.boundary
    nb = mesh.n_boundary
    coef = np.ones(nb)
    value = np.zeros(nb)
    pres = bd.prescribed_velocity
    coef[pres] = 0.0
    value[pres] = wall_velocity[pres, comp]
    slip = bd.slip
    if slip.any():
        n = mesh.face_normal[mesh.n_interior :][slip]
        other = 1 - comp
        vp = v_hat[mesh.owner[mesh.n_interior :]][slip]
        coef[slip] = 1.0 - n[:, comp] ** 2
        value[slip] = -n[:, comp] * n[:, other] * vp[:, other]
    # zero total adjoint momentum flux through the primal outlet
    return FaceBC(coef, value, ~bd.outlet)


def adjoint_scalar_bc(case: Case) -> FaceBC:
    bd = case.boundary
    coef = np.where(bd.phi_fixed, 0.0, 1.0)
    return FaceBC(coef, np.zeros(case.mesh.n_boundary), ~bd.outlet)


# -- sweeps -------------------------------------------------------------------


@dataclass
class AdjointSolver:
    """Adjoint sweeps on a frozen primal state for one MWI mode."""

    case: Case
    primal: PrimalState
    objective: Objective
    mode: str = "E3"
    sources: AdjointSourceModel = field(init=False)

    def __post_init__(self):
        if self.mode not in MWI_MODES:
            raise ConfigError(f"mode must be one of {MWI_MODES}, got {self.mode!r}")
        self.sources = AdjointSourceModel(self.case, self.primal, self.objective)
        self.wall_velocity = adjoint_wall_velocity(self.case, self.objective)
        self._primal_checksum = self.primal.checksum()

    def velocity_boundary_values(self, v_hat):
        return adjoint_velocity_boundary_values(self.case, v_hat, self.wall_velocity)

    def assemble_adjoint_momentum(self, adj: AdjointState, grad_p: np.ndarray):
        case, cfg, mesh = self.case, self.case.config, self.case.mesh
        flux = -self.primal.flux if cfg.convection else np.zeros(mesh.n_faces)
        q_hat = self.sources.q_hat(adj)
        q1, q2, Q = adjoint_source_reconstruct(q_hat, mesh, self.mode)
        extra = -self.sources.transposed_convection(adj) * mesh.cell_volume[:, None] if cfg.convection else None
        bcs = [adjoint_momentum_bc(case, adj.v, i, self.wall_velocity) for i in range(2)]
        grad_v = None
        if cfg.nonorth:
            grad_v = green_gauss_gradient(adj.v, mesh, self.velocity_boundary_values(adj.v))
        system = _assemble_momentum_common(case, flux, adj.v, adj.v, grad_p, Q, bcs, extra, grad_v)
        return system, q1, q2

    def _vbar(self, v):
        mesh = self.case.mesh
        v_b = self.velocity_boundary_values(v)
        gv = green_gauss_gradient(v, mesh, v_b) if self.case.config.nonorth else None
        return interpolated_velocity(mesh, v, v_b, gv), v_b

    def adjoint_mwi_face_velocity(self, adj, v_star, p_b, grad_p, q1, q2, beta_eff, beta_gamma=None):
        mesh, cfg = self.case.mesh, self.case.config
        vbar, v_b = self._vbar(v_star)
        bracket = mwi_correction(mesh, adj.p, p_b, grad_p, q1, q2)
        relax = None
        if beta_gamma is not None:
            # one outer iteration per pseudo time step: old and previous copies coincide
            vbar_prev, _ = self._vbar(adj.v_prev)
            relax = RelaxationTerms(cfg.omega_v, beta_gamma, adj.vf, vbar_prev, adj.vf, vbar_prev)
        vf = mwi_face_velocity(vbar, bracket, beta_eff, relax)
        mask = mwi_faces(mesh, self.case.boundary.p_fixed)
        ni = mesh.n_interior
        out = vf.copy()
        out[ni:][~mask[ni:]] = v_b[~mask[ni:]]
        return out

    def adjoint_scalar_step(self, adj: AdjointState):
        case, cfg, mesh = self.case, self.case.config, self.case.mesh
        vol_flux = -self.primal.flux / cfg.rho if cfg.convection else np.zeros(mesh.n_faces)
        st = assemble_transport(mesh, vol_flux, cfg.mu_phi, cfg.blend, adjoint_scalar_bc(case))
        st.diag = st.diag - case.scalar_source.linear * mesh.cell_volume
        st.rhs = st.rhs + self.sources.scalar_rhs(adj)
        res = float(np.mean(np.abs(st.residual(adj.phi))))
        w = cfg.omega_phi
        st.rhs += (1.0 - w) / w * st.diag * adj.phi
        st.diag = st.diag / w
        phi = solve(st.matrix(), st.rhs, x0=adj.phi, method=_nonsym(cfg.linear_solver), rtol=cfg.linear_rtol)
        return phi, res

    def adjoint_outer_iteration(self, adj: AdjointState):
        case, cfg, mesh, bd = self.case, self.case.config, self.case.mesh, self.case.boundary
        new = adj.copy()
        new.v_prev = adj.v.copy()
        # the adjoint sweep runs the primal sequence backwards: the scalar
        # first, so that its momentum coupling is current
        if self.sources.scalar_coupled:
            new.phi, res_phi = self.adjoint_scalar_step(new)
        p_zero = np.zeros(mesh.n_boundary)
        grad_p, p_b = pressure_gradient(mesh, new.p, new.grad_p, bd.p_fixed, p_zero)
        system, q1, q2 = self.assemble_adjoint_momentum(new, grad_p)
        v_star = solve_momentum(case, system, new.v)
        variant = "consistent" if cfg.mwi == "consistent" else "body-force"
        beta_eff, beta_cell, bg = face_beta(case, system.A_bare, system.D_relax, variant)
        vf_star = self.adjoint_mwi_face_velocity(new, v_star, p_b, grad_p, q1, q2, beta_eff, bg)
        mask = mwi_faces(mesh, bd.p_fixed)
        target = self.sources.continuity_rhs(new)
        corr = pressure_correction(mesh, vf_star, beta_eff, mask, bd.p_fixed, 1.0, target, cfg.linear_solver, cfg.linear_rtol)
        new.v = v_star - beta_cell[:, None] * corr.grad_corr
        new.vf = corr.vf
        new.flux = corr.flux
        new.p = new.p + cfg.omega_p * corr.p_corr
        new.grad_p = grad_p
        residuals = {"v": system.residual, "p": float(np.mean(np.abs(corr.imbalance)))}
        if self.sources.scalar_coupled:
            residuals["phi"] = res_phi
        new.iteration = adj.iteration + 1
        return new, residuals

    def solve(self, state: AdjointState | None = None, tol: float | None = None, max_iter: int | None = None,
              callback=None, criterion: str = "all") -> SolveResult:
        """Iterate adjoint sweeps until converged.

        ``criterion="all"`` requires every residual below ``tol``;
        ``criterion="v"`` stops on the adjoint velocity residual alone.
        """
        cfg = self.case.config
        tol = cfg.tol if tol is None else tol
        max_iter = cfg.max_iter if max_iter is None else max_iter
        adj = AdjointState.zeros(self.case.mesh) if state is None else state
        history = []
        converged = False
        for _ in range(max_iter):
            adj, res = self.adjoint_outer_iteration(adj)
            history.append(res)
            if callback is not None:
                callback(adj, res)
            check_divergence(history, cfg.divergence_factor)
            done = res["v"] <= tol if criterion == "v" else all(r <= tol for r in res.values())
            if done:
                converged = True
                break
        if self.primal.checksum() != self._primal_checksum:
            raise RuntimeError("frozen primal state was modified during the adjoint solve")
        return SolveResult(adj, history, converged, len(history))


def solve_adjoint(case: Case, primal: PrimalState, objective: Objective, mode: str = "E3", **kwargs) -> SolveResult:
    return AdjointSolver(case, primal, objective, mode).solve(**kwargs)


def adjoint_continuity_rhs(case: Case, primal: PrimalState, objective: Objective, adjoint: AdjointState) -> np.ndarray:
    """Per-cell target of the adjoint face-flux balance."""
    return AdjointSourceModel(case, primal, objective).continuity_rhs(adjoint)
