"""Case definition: physical parameters, scheme selectors, boundary conditions."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping

import numpy as np

from .fields import interp_linear, interp_reversed
from .mesh import Mesh

MWI_VARIANTS = ("none", "rhie-chow", "body-force", "consistent")
CONCEPTS = ("C1", "C2")
BETA_FORMS = ("volume", "area")


class ConfigError(ValueError):
    pass


@dataclass
class SolverConfig:
    rho: float = 1.0
    mu: float = 1e-2
    mu_phi: float = 1e-2
    omega_v: float = 0.7
    omega_p: float = 0.3
    omega_phi: float = 1.0
    dt: float = math.inf
    convection: bool = True
    blend: float = 0.9
    mwi: str = "body-force"
    beta_form: str = "volume"
    nonorth: bool = False
    solve_scalar: bool = False
    tol: float = 1e-8
    max_iter: int = 1000
    linear_solver: str = "direct"
    linear_rtol: float = 1e-8
    divergence_factor: float = 1e6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("omega_v", "omega_p", "omega_phi"):
            w = getattr(self, name)
            if not 0.0 < w <= 1.0:
                raise ConfigError(f"{name} must lie in (0, 1], got {w}")
        if not self.dt > 0.0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if not (self.rho > 0.0 and self.mu > 0.0):
            raise ConfigError("rho and mu must be positive")
        if self.mu_phi < 0.0:
            raise ConfigError("mu_phi must be non-negative")
        if not 0.0 <= self.blend <= 1.0:
            raise ConfigError(f"blend must lie in [0, 1], got {self.blend}")
        if self.mwi not in MWI_VARIANTS:
            raise ConfigError(f"mwi must be one of {MWI_VARIANTS}, got {self.mwi!r}")
        if self.beta_form not in BETA_FORMS:
            raise ConfigError(f"beta_form must be one of {BETA_FORMS}, got {self.beta_form!r}")
        if self.max_iter < 1:
            raise ConfigError("max_iter must be at least 1")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


Profile = Callable[[np.ndarray], np.ndarray]


@dataclass
class PatchBC:
    """Boundary data for one patch.

    ``velocity`` is the wall or inlet velocity, either a 2-vector or a
    callable of face centroids returning ``(n, 2)``. ``pressure`` is used on
    outlets. ``phi`` set to ``None`` means zero gradient, otherwise a
    Dirichlet value (number or callable).
    """

    velocity: object = (0.0, 0.0)
    pressure: float = 0.0
    phi: object = None


def _evaluate(value, xy: np.ndarray, width: int | None) -> np.ndarray:
    if callable(value):
        out = np.asarray(value(xy), dtype=float)
    else:
        out = np.asarray(value, dtype=float)
    shape = (len(xy),) if width is None else (len(xy), width)
    return np.broadcast_to(out, shape).copy()


@dataclass
class BoundaryData:
    """Per-boundary-face arrays compiled from the patch table."""

    kind: np.ndarray  # kind string per boundary face
    velocity: np.ndarray  # (nb, 2) prescribed velocity (wall / inlet)
    p_fixed: np.ndarray  # (nb,) bool
    p_value: np.ndarray
    phi_fixed: np.ndarray
    phi_value: np.ndarray

    @property
    def prescribed_velocity(self) -> np.ndarray:
        return np.isin(self.kind, ("wall", "inlet"))

    @property
    def slip(self) -> np.ndarray:
        return np.isin(self.kind, ("slip", "symmetry"))

    @property
    def outlet(self) -> np.ndarray:
        return self.kind == "outlet"


def compile_boundaries(mesh: Mesh, bcs: Mapping[str, PatchBC]) -> BoundaryData:
    nb, ni = mesh.n_boundary, mesh.n_interior
    kind = np.empty(nb, dtype=object)
    vel = np.zeros((nb, 2))
    p_fixed = np.zeros(nb, bool)
    p_val = np.zeros(nb)
    phi_fixed = np.zeros(nb, bool)
    phi_val = np.zeros(nb)
    unknown = set(bcs) - set(mesh.patches)
    if unknown:
        raise ConfigError(f"boundary conditions given for unknown patches {sorted(unknown)}")
    for name, patch in mesh.patches.items():
        bc = bcs.get(name, PatchBC())
        idx = patch.faces - ni
        xy = mesh.face_centroid[patch.faces]
        kind[idx] = patch.kind
        if patch.kind in ("wall", "inlet"):
            vel[idx] = _evaluate(bc.velocity, xy, 2)
        if patch.kind == "outlet":
            p_fixed[idx] = True
            p_val[idx] = float(bc.pressure)
        if bc.phi is not None:
            phi_fixed[idx] = True
            phi_val[idx] = _evaluate(bc.phi, xy, None)
        elif patch.kind == "inlet":
            raise ConfigError(f"inlet patch {name!r} needs a scalar value")
    return BoundaryData(kind, vel, p_fixed, p_val, phi_fixed, phi_val)


@dataclass
class BodyForceModel:
    """Momentum source ``q = base + buoyancy * phi * g`` with a C1/C2 treatment.

    ``base`` is a fixed per-cell field (force per unit volume). The buoyancy
    part couples the momentum source to the auxiliary scalar.
    """

    base: np.ndarray | None = None
    gravity: tuple = (0.0, 0.0)
    buoyancy: float = 0.0
    concept: str = "C2"

    def __post_init__(self):
        if self.concept not in CONCEPTS:
            raise ConfigError(f"body-force concept must be C1 or C2, got {self.concept!r}")

    def evaluate(self, mesh: Mesh, phi: np.ndarray | None = None) -> np.ndarray:
        q = np.zeros((mesh.n_cells, 2))
        if self.base is not None:
            q = q + self.base
        if self.buoyancy != 0.0 and phi is not None:
            q = q + self.buoyancy * phi[:, None] * np.asarray(self.gravity, float)[None, :]
        return q

    def d_dphi(self, mesh: Mesh) -> np.ndarray:
        g = np.asarray(self.gravity, float)
        return np.broadcast_to(self.buoyancy * g, (mesh.n_cells, 2)).copy()

    def d_dp(self, mesh: Mesh) -> np.ndarray:
        return np.zeros((mesh.n_cells, 2))

    @property
    def active(self) -> bool:
        return self.base is not None or self.buoyancy != 0.0


def source_volume_average(q: np.ndarray, mesh: Mesh, concept: str, levers: str = "reversed") -> np.ndarray:
    """Volume-averaged momentum source per cell.

    ``C1`` returns the cell value. ``C2`` evaluates
    ``(1/dOmega) sum_F (x^F - x^P)_k q_k^F dGamma_i^F`` with face values from
    reversed levers (or plain linear interpolation when ``levers="linear"``).
    """
    q = np.asarray(q, dtype=float)
    if concept == "C1":
        return q.copy()
    if concept != "C2":
        raise ConfigError(f"unknown concept {concept!r}")
    if levers == "reversed":
        qf = interp_reversed(q, mesh)
    elif levers == "linear":
        qf = interp_linear(q, mesh)
    else:
        raise ValueError(f"unknown levers {levers!r}")
    ni, n = mesh.n_interior, mesh.n_cells
    own, nb = mesh.owner, mesh.neighbor[:ni]
    r_own = mesh.face_centroid - mesh.cell_centroid[own]
    s_own = np.einsum("fk,fk->f", r_own, qf)[:, None] * mesh.face_area
    r_nb = mesh.face_centroid[:ni] - mesh.cell_centroid[nb]
    s_nb = np.einsum("fk,fk->f", r_nb, qf[:ni])[:, None] * mesh.face_area[:ni]
    total = np.empty((n, 2))
    for i in range(2):
        total[:, i] = np.bincount(own, s_own[:, i], minlength=n) - np.bincount(nb, s_nb[:, i], minlength=n)
    return total / mesh.cell_volume[:, None]


@dataclass
class ScalarSource:
    """Linear scalar source ``s = constant + linear * phi + pressure * p``."""

    constant: object = 0.0
    linear: float = 0.0
    pressure: float = 0.0

    def constant_field(self, mesh: Mesh) -> np.ndarray:
        return _evaluate(self.constant, mesh.cell_centroid, None)


@dataclass
class Case:
    mesh: Mesh
    config: SolverConfig
    bcs: Mapping[str, PatchBC] = field(default_factory=dict)
    body_force: BodyForceModel = field(default_factory=BodyForceModel)
    scalar_source: ScalarSource = field(default_factory=ScalarSource)
    name: str = "case"

    def __post_init__(self):
        self.boundary = compile_boundaries(self.mesh, self.bcs)

    def with_config(self, **changes) -> "Case":
        return Case(self.mesh, self.config.with_(**changes), self.bcs, self.body_force, self.scalar_source, self.name)

    def with_body_force(self, body_force: BodyForceModel) -> "Case":
        return Case(self.mesh, self.config, self.bcs, body_force, self.scalar_source, self.name)

    @property
    def has_pressure_reference(self) -> bool:
        return bool(self.boundary.p_fixed.any())
