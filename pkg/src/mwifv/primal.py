"""SIMPLE-type pressure-correction solver on a collocated arrangement."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .case import Case, source_volume_average
from .fields import face_flux, green_gauss_gradient, interp_linear, interp_reversed
from .linalg import solve, solve_columns
from .mesh import Mesh
from .mwi import RelaxationTerms, interpolated_velocity, mwi_correction, mwi_face_velocity
from .transport import FaceBC, assemble_transport, nonorthogonal_source


INITIAL_GRADIENT_SWEEPS = 60


class SolverDivergence(RuntimeError):
    """Residuals grew beyond the divergence factor."""


@dataclass
class PrimalState:
    v: np.ndarray
    p: np.ndarray
    phi: np.ndarray
    vf: np.ndarray
    flux: np.ndarray
    grad_p: np.ndarray
    v_prev: np.ndarray | None = None
    vf_prev: np.ndarray | None = None
    v_old: np.ndarray | None = None
    vf_old: np.ndarray | None = None
    iteration: int = 0

    @classmethod
    def initial(cls, case: Case, v0=None, p0=None, phi0=None) -> "PrimalState":
        """Zero (or given) fields; boundary faces carry their prescribed fluxes."""
        mesh = case.mesh
        nc = mesh.n_cells
        v = np.zeros((nc, 2)) if v0 is None else np.broadcast_to(np.asarray(v0, float), (nc, 2)).copy()
        p = np.zeros(nc) if p0 is None else np.broadcast_to(np.asarray(p0, float), (nc,)).copy()
        phi = np.zeros(nc) if phi0 is None else np.broadcast_to(np.asarray(phi0, float), (nc,)).copy()
        vb = velocity_boundary_values(case, v)
        vf = interp_linear(v, mesh, vb)
        flux = case.config.rho * face_flux(vf, mesh)
        grad_p = np.zeros((nc, 2))
        if p0 is not None:
            # settle the lagged boundary extrapolation for the given pressure
            bd = case.boundary
            grad_p, _ = pressure_gradient(mesh, p, grad_p, bd.p_fixed, bd.p_value, sweeps=INITIAL_GRADIENT_SWEEPS)
        return cls(v=v, p=p, phi=phi, vf=vf, flux=flux, grad_p=grad_p)

    def copy(self) -> "PrimalState":
        def c(a):
            return None if a is None else a.copy()

        return PrimalState(
            c(self.v), c(self.p), c(self.phi), c(self.vf), c(self.flux), c(self.grad_p),
            c(self.v_prev), c(self.vf_prev), c(self.v_old), c(self.vf_old), self.iteration,
        )

    def checksum(self) -> str:
        h = hashlib.sha256()
        for a in (self.v, self.p, self.phi, self.vf, self.flux):
            h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
        return h.hexdigest()


@dataclass
class MomentumSystem:
    stencils: list  # one Stencil per velocity component
    A_bare: np.ndarray  # mean convection-diffusion diagonal
    D_relax: np.ndarray  # diagonal including relaxation and transient terms
    residual: float  # summed over both components
    components: tuple = ()


@dataclass
class SolveResult:
    state: object
    history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def final(self) -> dict:
        return self.history[-1] if self.history else {}


# -- boundary helpers -------------------------------------------------------


def velocity_boundary_values(case: Case, v: np.ndarray) -> np.ndarray:
    mesh, bd = case.mesh, case.boundary
    vp = v[mesh.owner[mesh.n_interior :]]
    vb = vp.copy()
    pres = bd.prescribed_velocity
    vb[pres] = bd.velocity[pres]
    slip = bd.slip
    if slip.any():
        n = mesh.face_normal[mesh.n_interior :][slip]
        vn = np.einsum("fi,fi->f", vp[slip], n)
        vb[slip] = vp[slip] - vn[:, None] * n
    return vb


def momentum_bc(case: Case, v: np.ndarray, comp: int) -> FaceBC:
    mesh, bd = case.mesh, case.boundary
    nb = mesh.n_boundary
    coef = np.ones(nb)
    value = np.zeros(nb)
    pres = bd.prescribed_velocity
    coef[pres] = 0.0
    value[pres] = bd.velocity[pres, comp]
    slip = bd.slip
    if slip.any():
        n = mesh.face_normal[mesh.n_interior :][slip]
        other = 1 - comp
        vp = v[mesh.owner[mesh.n_interior :]][slip]
        coef[slip] = 1.0 - n[:, comp] ** 2
        value[slip] = -n[:, comp] * n[:, other] * vp[:, other]
    return FaceBC(coef, value, np.ones(nb, bool))


def pressure_boundary_values(mesh: Mesh, p: np.ndarray, grad_p: np.ndarray, fixed: np.ndarray, fixed_value: np.ndarray) -> np.ndarray:
    """Fixed values where prescribed, gradient extrapolation elsewhere."""
    ni = mesh.n_interior
    own = mesh.owner[ni:]
    extrap = p[own] + np.einsum("fi,fi->f", mesh.face_centroid[ni:] - mesh.cell_centroid[own], grad_p[own])
    return np.where(fixed, fixed_value, extrap)


def pressure_gradient(mesh: Mesh, p, grad_prev, fixed, fixed_value, sweeps: int = 2):
    """Green-Gauss pressure gradient with lagged boundary extrapolation."""
    grad = grad_prev
    for _ in range(sweeps):
        p_b = pressure_boundary_values(mesh, p, grad, fixed, fixed_value)
        grad = green_gauss_gradient(p, mesh, p_b)
    p_b = pressure_boundary_values(mesh, p, grad, fixed, fixed_value)
    return grad, p_b


def mwi_faces(mesh: Mesh, p_fixed: np.ndarray) -> np.ndarray:
    """Faces whose velocity comes from the momentum-weighted interpolation."""
    mask = np.zeros(mesh.n_faces, bool)
    mask[: mesh.n_interior] = True
    mask[mesh.n_interior :] = p_fixed
    return mask


# -- coefficient helpers ----------------------------------------------------


def face_beta(case: Case, A_bare: np.ndarray, D_relax: np.ndarray, variant: str):
    """Face coefficients of the momentum-weighted interpolation.

    Returns ``(beta_eff_face, beta_eff_cell, beta_gamma_face)``; the last is
    ``None`` unless the consistent variant is selected.
    """
    mesh, cfg = case.mesh, case.config
    vol = mesh.cell_volume
    if variant == "consistent":
        if cfg.beta_form == "volume":
            beta = interp_linear(vol / A_bare, mesh)
        else:
            beta = _area_beta(mesh, A_bare)
        gamma = cfg.rho / cfg.dt
        bg = beta * gamma
        beta_eff = (cfg.omega_v / (1.0 + bg)) * beta
        return beta_eff, vol / D_relax, bg
    if cfg.beta_form == "volume":
        beta_eff = interp_linear(vol / D_relax, mesh)
    else:
        beta_eff = _area_beta(mesh, D_relax)
    return beta_eff, vol / D_relax, None


def _area_beta(mesh: Mesh, diag: np.ndarray) -> np.ndarray:
    return np.einsum("fi,fi->f", mesh.d, mesh.face_area) / interp_linear(diag, mesh)


# -- momentum ---------------------------------------------------------------


def assemble_momentum(case: Case, state: PrimalState, grad_p: np.ndarray, Q: np.ndarray, extra_rhs=None) -> MomentumSystem:
    """Relaxed, pseudo-transient momentum systems for both components.

    Diagonal ``(A + rho dOmega/dt) / omega``; right-hand side with
    ``(Q - grad p) dOmega``, the old-time term ``rho dOmega/dt v^{t-1}`` and
    the deferred relaxation term ``(1 - omega) (A + rho dOmega/dt)/omega v^{m-1}``.
    """
    mesh, cfg = case.mesh, case.config
    flux = state.flux if cfg.convection else np.zeros(mesh.n_faces)
    v_prev = state.v if state.v_prev is None else state.v_prev
    v_old = state.v if state.v_old is None else state.v_old
    return _assemble_momentum_common(
        case, flux, v_prev, v_old, grad_p, Q, [momentum_bc(case, v_prev, i) for i in range(2)], extra_rhs
    )


def _assemble_momentum_common(case, flux, v_prev, v_old, grad_p, Q, bcs, extra_rhs=None, grad_v=None) -> MomentumSystem:
    mesh, cfg = case.mesh, case.config
    vol = mesh.cell_volume
    w = cfg.omega_v
    tr = cfg.rho * vol / cfg.dt
    stencils = []
    diags = []
    for i in range(2):
        st = assemble_transport(mesh, flux, cfg.mu, cfg.blend, bcs[i])
        diags.append(st.diag.copy())
        if cfg.nonorth and grad_v is not None:
            st.rhs += nonorthogonal_source(mesh, cfg.mu, interp_linear(grad_v[:, i, :], mesh), bcs[i])
        st.rhs += (Q[:, i] - grad_p[:, i]) * vol
        if extra_rhs is not None:
            st.rhs += extra_rhs[:, i]
        D = (st.diag + tr) / w
        st.rhs += tr * v_old[:, i] + (1.0 - w) * D * v_prev[:, i]
        st.diag = D
        stencils.append(st)
    A_bare = 0.5 * (diags[0] + diags[1])
    if np.any(A_bare <= 0.0):
        bad = int(np.flatnonzero(A_bare <= 0.0)[0])
        raise SolverDivergence(f"non-positive momentum diagonal in cell {bad}; check fluxes and boundary conditions")
    D_relax = (A_bare + tr) / w
    comps = tuple(float(np.mean(np.abs(st.residual(v_prev[:, i])))) for i, st in enumerate(stencils))
    return MomentumSystem(stencils, A_bare, D_relax, sum(comps), comps)


def solve_momentum(case: Case, system: MomentumSystem, v0: np.ndarray) -> np.ndarray:
    cfg = case.config
    s0, s1 = system.stencils
    if np.array_equal(s0.diag, s1.diag) and np.array_equal(s0.a_pn, s1.a_pn) and np.array_equal(s0.a_np, s1.a_np):
        rhs = np.column_stack([s0.rhs, s1.rhs])
        return solve_columns(s0.matrix(), rhs, v0, _nonsym(cfg.linear_solver), cfg.linear_rtol)
    out = np.empty_like(v0)
    for i, st in enumerate(system.stencils):
        out[:, i] = solve(st.matrix(), st.rhs, x0=v0[:, i], method=_nonsym(cfg.linear_solver), rtol=cfg.linear_rtol)
    return out


def _nonsym(method: str) -> str:
    return "bicgstab" if method in ("cg", "bicgstab") else method


def _sym(method: str) -> str:
    return "cg" if method in ("cg", "bicgstab") else method


# -- pressure correction ----------------------------------------------------


@dataclass
class Correction:
    p_corr: np.ndarray
    vf: np.ndarray
    flux: np.ndarray
    imbalance: np.ndarray
    grad_corr: np.ndarray


def pressure_correction(
    mesh: Mesh,
    vf_star: np.ndarray,
    beta_eff: np.ndarray,
    mask: np.ndarray,
    p_fixed: np.ndarray,
    flux_scale: float,
    target: np.ndarray | None = None,
    method: str = "direct",
    rtol: float = 1e-8,
) -> Correction:
    """Solve the pressure-correction system and correct the face velocities.

    The corrected face fluxes satisfy ``sum_F flux = target`` per cell (zero
    by default). Without any fixed-pressure face the correction is pinned to
    zero in cell 0.
    """
    ni, nc = mesh.n_interior, mesh.n_cells
    flux_star = flux_scale * face_flux(vf_star, mesh)
    imbalance = mesh.cell_sum(flux_star)
    if target is not None:
        imbalance = imbalance - target
    dd = np.einsum("ij,ij->i", mesh.d, mesh.d)
    k = np.where(mask, flux_scale * beta_eff * np.einsum("ij,ij->i", mesh.d, mesh.face_area) / dd, 0.0)
    own, nb = mesh.owner, mesh.neighbor[:ni]
    diag = np.bincount(own, k, minlength=nc) + np.bincount(nb, k[:ni], minlength=nc)
    rhs = -imbalance.copy()
    pinned = not p_fixed.any()
    rows = np.concatenate([np.arange(nc), own[:ni], nb])
    cols = np.concatenate([np.arange(nc), nb, own[:ni]])
    vals = np.concatenate([diag, -k[:ni], -k[:ni]])
    K = sp.csr_matrix((vals, (rows, cols)), shape=(nc, nc))
    if pinned:
        keep = np.ones(nc)
        keep[0] = 0.0
        S = sp.diags(keep)
        K = S @ K @ S + sp.diags(1.0 - keep)
        rhs[0] = 0.0
    p_corr = solve(K, rhs, method=_sym(method), rtol=rtol)
    if pinned:
        p_corr[0] = 0.0

    pc_b = np.where(p_fixed, 0.0, p_corr[mesh.owner[ni:]])
    jump = np.empty(mesh.n_faces)
    jump[:ni] = p_corr[nb] - p_corr[own[:ni]]
    jump[ni:] = pc_b - p_corr[own[ni:]]
    jump = np.where(mask, jump, 0.0)
    vf = vf_star - (beta_eff * jump / dd)[:, None] * mesh.d
    flux = flux_star - k * jump
    grad_corr = green_gauss_gradient(p_corr, mesh, pc_b)
    return Correction(p_corr, vf, flux, imbalance, grad_corr)


# -- scalar transport -------------------------------------------------------


def scalar_bc(case: Case) -> FaceBC:
    bd = case.boundary
    nb = case.mesh.n_boundary
    coef = np.where(bd.phi_fixed, 0.0, 1.0)
    value = np.where(bd.phi_fixed, bd.phi_value, 0.0)
    return FaceBC(coef, value, np.ones(nb, bool))


def scalar_transport_step(case: Case, state: PrimalState, omega: float | None = None):
    """Convection-diffusion update of the auxiliary scalar.

    Returns ``(phi_new, residual)`` with the residual evaluated for the
    incoming ``phi``.
    """
    mesh, cfg = case.mesh, case.config
    src = case.scalar_source
    w = cfg.omega_phi if omega is None else omega
    vol_flux = state.flux / cfg.rho if cfg.convection else np.zeros(mesh.n_faces)
    st = assemble_transport(mesh, vol_flux, cfg.mu_phi, cfg.blend, scalar_bc(case))
    st.rhs += (src.constant_field(mesh) + src.pressure * state.p) * mesh.cell_volume
    st.diag = st.diag - src.linear * mesh.cell_volume
    res = float(np.mean(np.abs(st.residual(state.phi))))
    st.rhs += (1.0 - w) / w * st.diag * state.phi
    st.diag = st.diag / w
    phi = solve(st.matrix(), st.rhs, x0=state.phi, method=_nonsym(cfg.linear_solver), rtol=cfg.linear_rtol)
    return phi, res


# -- outer iteration --------------------------------------------------------


def momentum_source(case: Case, phi: np.ndarray):
    """Raw cell source ``q`` and its volume average per the selected concept."""
    bf = case.body_force
    q = bf.evaluate(case.mesh, phi)
    return q, source_volume_average(q, case.mesh, bf.concept)


def mwi_face_velocity_primal(case: Case, state: PrimalState, v_star, p_b, grad_p, q, Q, beta_eff, beta_gamma, grad_v=None):
    """Face velocities for the current predictor, per the configured variant."""
    mesh, cfg = case.mesh, case.config
    v_b = velocity_boundary_values(case, v_star)
    vbar = interpolated_velocity(mesh, v_star, v_b, grad_v if cfg.nonorth else None)
    variant = cfg.mwi
    if variant == "none":
        vf = vbar
    else:
        if variant == "rhie-chow" or not case.body_force.active:
            q1 = q2 = None
        else:
            q1 = interp_reversed(q, mesh)
            q2 = interp_linear(Q, mesh)
        bracket = mwi_correction(mesh, state.p, p_b, grad_p, q1, q2)
        relax = None
        if variant == "consistent":
            v_prev = state.v if state.v_prev is None else state.v_prev
            v_old = state.v if state.v_old is None else state.v_old
            vf_prev = state.vf if state.vf_prev is None else state.vf_prev
            vf_old = state.vf if state.vf_old is None else state.vf_old
            gv_prev = green_gauss_gradient(v_prev, mesh, velocity_boundary_values(case, v_prev)) if cfg.nonorth else None
            gv_old = green_gauss_gradient(v_old, mesh, velocity_boundary_values(case, v_old)) if cfg.nonorth else None
            relax = RelaxationTerms(
                omega=cfg.omega_v,
                beta_gamma=beta_gamma,
                vf_prev=vf_prev,
                vbar_prev=interpolated_velocity(mesh, v_prev, velocity_boundary_values(case, v_prev), gv_prev),
                vf_old=vf_old,
                vbar_old=interpolated_velocity(mesh, v_old, velocity_boundary_values(case, v_old), gv_old),
            )
        vf = mwi_face_velocity(vbar, bracket, beta_eff, relax)
    mask = mwi_faces(mesh, case.boundary.p_fixed)
    out = np.where(mask[:, None], vf, 0.0)
    ni = mesh.n_interior
    out[ni:][~mask[ni:]] = v_b[~mask[ni:]]
    return out


def pressure_correction_step(case: Case, state: PrimalState, v_star, vf_star, beta_eff, beta_cell) -> Correction:
    """Correct ``state`` in place from the predictor and its face velocities.

    Pressure is under-relaxed by ``omega_p``; cell velocities, face
    velocities and mass fluxes take the full correction, so the new fluxes
    are conservative to the linear-solver tolerance.
    """
    mesh, cfg, bd = case.mesh, case.config, case.boundary
    mask = mwi_faces(mesh, bd.p_fixed)
    corr = pressure_correction(mesh, vf_star, beta_eff, mask, bd.p_fixed, cfg.rho, None, cfg.linear_solver, cfg.linear_rtol)
    state.v = v_star - beta_cell[:, None] * corr.grad_corr
    state.vf = corr.vf
    state.flux = corr.flux
    state.p = state.p + cfg.omega_p * corr.p_corr
    return corr


def simple_outer_iteration(case: Case, state: PrimalState) -> tuple[PrimalState, dict]:
    """One sweep: momentum predictor, face velocities, pressure correction, scalar.

    Returns the new state and the global residuals of the sweep.
    """
    mesh, cfg, bd = case.mesh, case.config, case.boundary
    st = state.copy()
    st.v_prev = state.v.copy()
    st.vf_prev = state.vf.copy()
    # one outer iteration per pseudo time step
    st.v_old = state.v.copy()
    st.vf_old = state.vf.copy()

    grad_p, p_b = pressure_gradient(mesh, st.p, st.grad_p, bd.p_fixed, bd.p_value)
    q, Q = momentum_source(case, st.phi)
    grad_v = None
    if cfg.nonorth:
        grad_v = green_gauss_gradient(st.v, mesh, velocity_boundary_values(case, st.v))
    flux = st.flux if cfg.convection else np.zeros(mesh.n_faces)
    system = _assemble_momentum_common(
        case, flux, st.v_prev, st.v_old, grad_p, Q, [momentum_bc(case, st.v_prev, i) for i in range(2)], None, grad_v
    )
    v_star = solve_momentum(case, system, st.v)

    variant = cfg.mwi
    beta_eff, beta_cell, bg = face_beta(case, system.A_bare, system.D_relax, variant)
    gv_star = None
    if cfg.nonorth:
        gv_star = green_gauss_gradient(v_star, mesh, velocity_boundary_values(case, v_star))
    vf_star = mwi_face_velocity_primal(case, st, v_star, p_b, grad_p, q, Q, beta_eff, bg, gv_star)

    corr = pressure_correction_step(case, st, v_star, vf_star, beta_eff, beta_cell)
    st.grad_p = grad_p

    r1, r2 = system.components
    residuals = {"v": system.residual, "v1": r1, "v2": r2, "p": float(np.mean(np.abs(corr.imbalance)))}
    if cfg.solve_scalar:
        st.phi, residuals["phi"] = scalar_transport_step(case, st)
    st.iteration = state.iteration + 1
    return st, residuals


def check_divergence(history: list, factor: float) -> None:
    """Abort on non-finite residuals or growth beyond ``factor`` times the first non-zero value.

    The reference is never below the largest first-iteration residual, so a
    component that starts near zero (a restart from a nearby converged state)
    may grow up to the scale of the others without being flagged.
    """
    last = history[-1]
    floor = max((v for v in history[0].values() if math.isfinite(v)), default=0.0)
    for key, val in last.items():
        if not math.isfinite(val):
            raise SolverDivergence(f"non-finite {key} residual at iteration {len(history)}")
        ref = next((h[key] for h in history if h.get(key, 0.0) > 0.0), None)
        if ref is not None:
            ref = max(ref, floor)
        if ref is not None and val > factor * ref:
            raise SolverDivergence(f"{key} residual grew from {ref:.3e} to {val:.3e} by iteration {len(history)}")


def solve_primal(case: Case, state: PrimalState | None = None, tol: float | None = None, max_iter: int | None = None, callback=None) -> SolveResult:
    """Iterate :func:`simple_outer_iteration` until every residual is below ``tol``."""
    cfg = case.config
    tol = cfg.tol if tol is None else tol
    max_iter = cfg.max_iter if max_iter is None else max_iter
    state = PrimalState.initial(case) if state is None else state
    history = []
    converged = False
    for _ in range(max_iter):
        state, res = simple_outer_iteration(case, state)
        history.append(res)
        if callback is not None:
            callback(state, res)
        check_divergence(history, cfg.divergence_factor)
        if all(r <= tol for r in res.values()):
            converged = True
            break
    return SolveResult(state, history, converged, len(history))
