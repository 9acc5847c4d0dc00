"""Objective evaluation and the tools for checking sensitivities against finite differences."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .adjoint import AdjointState, Objective
from .case import BodyForceModel, Case, ConfigError, source_volume_average
from .mesh import Mesh
from .primal import PrimalState, pressure_boundary_values, solve_primal, velocity_boundary_values


@dataclass
class ResidualRecord:
    equation: str
    iteration: int
    value: float

    def __post_init__(self):
        if not self.value >= 0.0:
            raise ValueError("residual norms are non-negative")


def records_from_history(history: list) -> list[ResidualRecord]:
    return [ResidualRecord(eq, m + 1, val) for m, res in enumerate(history) for eq, val in res.items()]


def residual_norm(local_residuals) -> float:
    """L1 mean ``(1/N) sum |r_i|`` of local residuals.

    The sum is correctly rounded, so the result does not depend on the order
    of the entries.
    """
    r = np.asarray(local_residuals, dtype=float).ravel()
    if r.size == 0:
        return 0.0
    return math.fsum(np.abs(r).tolist()) / r.size


# -- objectives -----------------------------------------------------------------


def wall_normal_gradient(case: Case, state: PrimalState, faces: np.ndarray, v=None, v_b=None) -> np.ndarray:
    """One-sided ``dv/dn`` at boundary faces from the first cell layer."""
    mesh = case.mesh
    v = state.v if v is None else v
    if v_b is None:
        v_b = velocity_boundary_values(case, v)
    ni = mesh.n_interior
    own = mesh.owner[faces]
    n = mesh.face_normal[faces]
    dist = np.einsum("fi,fi->f", mesh.face_centroid[faces] - mesh.cell_centroid[own], n)
    return (v_b[faces - ni] - v[own]) / dist[:, None]


def evaluate_objective(case: Case, state: PrimalState, objective: Objective) -> float:
    """Mid-point quadrature of the boundary and volume densities."""
    mesh = case.mesh
    J = 0.0
    if objective.volume is not None:
        m = objective.mask(mesh)
        vol = mesh.cell_volume[m]
        if objective.volume == "unit":
            dens = np.ones(m.sum())
        elif objective.volume == "pressure":
            dens = state.p[m]
        elif objective.volume == "kinetic":
            dens = 0.5 * np.einsum("ci,ci->c", state.v[m], state.v[m])
        else:
            dens = (state.phi[m] - objective.target) ** 2
        J += float(dens @ vol)
    if objective.boundary is not None:
        faces = objective.boundary_faces(mesh)
        if faces.size == 0:
            raise ConfigError("objective patch set is empty")
        area = mesh.face_magnitude[faces]
        if objective.boundary == "area":
            J += float(area.sum())
        else:
            bd = case.boundary
            p_b = pressure_boundary_values(mesh, state.p, state.grad_p, bd.p_fixed, bd.p_value)[faces - mesh.n_interior]
            dvdn = wall_normal_gradient(case, state, faces)
            traction = p_b[:, None] * mesh.face_normal[faces] - case.config.mu * dvdn
            J += float(np.einsum("fi,i,f->", traction, np.asarray(objective.direction, float), area))
    return J


# -- sensitivities ----------------------------------------------------------------


def sensitivity_density(mu: float, dv_dn, dvhat_dn) -> np.ndarray:
    """``s = -mu dv_i/dn dvhat_i/dn`` per face."""
    return -mu * np.einsum("fi,fi->f", np.atleast_2d(dv_dn), np.atleast_2d(dvhat_dn))


def boundary_sensitivity(case: Case, primal: PrimalState, adjoint: AdjointState, patch: str, adjoint_wall=None):
    """Shape sensitivity density along a wall patch and its integral."""
    mesh = case.mesh
    if patch not in mesh.patches:
        raise ConfigError(f"unknown patch {patch!r}")
    if mesh.patches[patch].kind != "wall":
        raise ConfigError(f"patch {patch!r} is not a wall")
    faces = mesh.patches[patch].faces
    dv = wall_normal_gradient(case, primal, faces)
    vb_hat = np.zeros((mesh.n_boundary, 2)) if adjoint_wall is None else adjoint_wall
    dvh = wall_normal_gradient(case, primal, faces, v=adjoint.v, v_b=vb_hat)
    s = sensitivity_density(case.config.mu, dv, dvh)
    return s, float(s @ mesh.face_magnitude[faces])


@dataclass
class VolumeControl:
    """Body-force control ``q <- q + theta e`` on the cells of ``region``."""

    region: np.ndarray
    direction: tuple = (1.0, 0.0)

    def __post_init__(self):
        self.region = np.asarray(self.region, dtype=bool)
        if not self.region.any():
            raise ConfigError("control region is empty")

    def field(self, n_cells: int) -> np.ndarray:
        out = np.zeros((n_cells, 2))
        out[self.region] = np.asarray(self.direction, float)
        return out

    def apply(self, case: Case, theta: float) -> Case:
        bf = case.body_force
        base = np.zeros((case.mesh.n_cells, 2)) if bf.base is None else bf.base
        new = BodyForceModel(base + theta * self.field(case.mesh.n_cells), bf.gravity, bf.buoyancy, bf.concept)
        return case.with_body_force(new)

    @classmethod
    def cell(cls, index: int, n_cells: int, direction=(1.0, 0.0)) -> "VolumeControl":
        region = np.zeros(n_cells, bool)
        region[index] = True
        return cls(region, direction)


def volumetric_sensitivity(mesh: Mesh, v_hat: np.ndarray, region, direction, concept: str | None = None) -> float:
    """Adjoint derivative of ``J`` with respect to a body-force control.

    ``dJ/dtheta = -sum_P v_hat . E^P dOmega^P`` where ``E`` is the control
    direction on the region cells, volume averaged per ``concept`` when given
    (the momentum balance sees the averaged source).
    """
    region = np.asarray(region, dtype=bool)
    if not region.any():
        raise ConfigError("control region is empty")
    e = np.zeros((mesh.n_cells, 2))
    e[region] = np.asarray(direction, float)
    if concept is not None:
        e = source_volume_average(e, mesh, concept)
    return float(-np.einsum("ci,ci,c->", np.asarray(v_hat, float), e, mesh.cell_volume))


# -- finite differences --------------------------------------------------------------


def central_difference(J, theta: float, eps: float) -> float:
    return (J(theta + eps) - J(theta - eps)) / (2.0 * eps)


def linearity_spread(values) -> float:
    """Largest pairwise relative difference among FD samples."""
    vals = np.asarray(values, dtype=float)
    scale = np.max(np.abs(vals))
    if scale == 0.0:
        return 0.0
    return float((vals.max() - vals.min()) / scale)


@dataclass
class SensitivityReport:
    control: str
    adjoint: float
    fd: dict = field(default_factory=dict)  # eps -> value

    @property
    def spread(self) -> float:
        return linearity_spread(list(self.fd.values()))

    @property
    def fd_reference(self) -> float:
        """FD value at the middle perturbation magnitude."""
        keys = sorted(self.fd)
        return self.fd[keys[len(keys) // 2]]

    @property
    def deviation(self) -> float:
        ref = self.fd_reference
        return abs(self.adjoint - ref) / abs(ref) if ref != 0.0 else abs(self.adjoint)

    def valid(self) -> bool:
        return len(self.fd) >= 3


class FDSampleError(RuntimeError):
    """A perturbed primal solve failed to converge."""


def fd_oracle(case: Case, control: VolumeControl, objective: Objective, eps_list, base: PrimalState | None = None,
              tol: float = 1e-10, max_iter: int | None = None) -> dict:
    """Central finite differences of ``J`` in the control parameter per ``eps``.

    Perturbed solves start from ``base`` (the converged unperturbed state) and
    must reach ``tol``; otherwise the sample is rejected.
    """

    def J(theta):
        c = control.apply(case, theta)
        start = None if base is None else base.copy()
        if start is not None:
            start.v_prev = start.vf_prev = start.v_old = start.vf_old = None
        res = solve_primal(c, start, tol=tol, max_iter=max_iter)
        if not res.converged:
            raise FDSampleError(f"perturbed solve (theta={theta:g}) stopped at {res.final()}")
        return evaluate_objective(c, res.state, objective)

    return {float(eps): central_difference(J, 0.0, float(eps)) for eps in eps_list}


# -- convergence comparison -----------------------------------------------------------


def first_crossing(values, threshold: float) -> int | None:
    """1-based index of the first value at or below ``threshold``; ``None`` if censored."""
    for m, val in enumerate(values, start=1):
        if val <= threshold:
            return m
    return None


def relative_change(m_new: int, m_ref: int) -> float:
    """``(m_new - m_ref) / m_ref`` in percent."""
    return 100.0 * (m_new - m_ref) / m_ref


def convergence_compare(histories: dict, threshold: float, key: str = "v") -> dict:
    """First-crossing iterations per mode and pairwise percentage differences.

    ``histories`` maps a mode name to either a residual sequence or a list of
    per-iteration residual dictionaries. Runs that never reach the threshold
    are reported as ``None`` and excluded from the percentages.
    """
    counts = {}
    for mode, hist in histories.items():
        seq = [h[key] if isinstance(h, dict) else h for h in hist]
        counts[mode] = first_crossing(seq, threshold)
    pairs = {}
    for a in counts:
        for b in counts:
            if a != b and counts[a] is not None and counts[b] is not None:
                pairs[(a, b)] = relative_change(counts[a], counts[b])
    return {"iterations": counts, "relative": pairs, "censored": sorted(k for k, v in counts.items() if v is None)}


def observed_order(errors, refinement: float = 2.0) -> list:
    return [math.log(e0 / e1) / math.log(refinement) for e0, e1 in zip(errors[:-1], errors[1:])]
