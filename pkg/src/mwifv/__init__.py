"""Collocated finite-volume flow solver with momentum-weighted interpolation and its adjoint."""

from .adjoint import (
    AdjointSolver,
    AdjointSourceModel,
    AdjointState,
    Objective,
    adjoint_continuity_rhs,
    adjoint_source_reconstruct,
    solve_adjoint,
)
from .case import BodyForceModel, Case, ConfigError, PatchBC, ScalarSource, SolverConfig, source_volume_average
from .fields import divergence_from_face_flux, face_normal_gradient, green_gauss_gradient, interp_linear, interp_reversed
from .mesh import Mesh, MeshError, build_structured_mesh, compute_geometry, read_mesh, write_mesh
from .mwi import mwi_face_velocity
from .primal import (
    PrimalState,
    SolverDivergence,
    assemble_momentum,
    pressure_correction_step,
    scalar_transport_step,
    simple_outer_iteration,
    solve_primal,
)
from .sensitivity import (
    VolumeControl,
    boundary_sensitivity,
    convergence_compare,
    evaluate_objective,
    fd_oracle,
    residual_norm,
    volumetric_sensitivity,
)

__version__ = "0.1.0"

__all__ = [
    "AdjointSolver",
    "AdjointSourceModel",
    "AdjointState",
    "Objective",
    "adjoint_continuity_rhs",
    "adjoint_source_reconstruct",
    "solve_adjoint",
    "BodyForceModel",
    "Case",
    "ConfigError",
    "PatchBC",
    "ScalarSource",
    "SolverConfig",
    "source_volume_average",
    "divergence_from_face_flux",
    "face_normal_gradient",
    "green_gauss_gradient",
    "interp_linear",
    "interp_reversed",
    "Mesh",
    "MeshError",
    "build_structured_mesh",
    "compute_geometry",
    "read_mesh",
    "write_mesh",
    "mwi_face_velocity",
    "PrimalState",
    "SolverDivergence",
    "assemble_momentum",
    "pressure_correction_step",
    "scalar_transport_step",
    "simple_outer_iteration",
    "solve_primal",
    "VolumeControl",
    "boundary_sensitivity",
    "convergence_compare",
    "evaluate_objective",
    "fd_oracle",
    "residual_norm",
    "volumetric_sensitivity",
]
