"""Canned verification scenarios shared by the CLI and the test-suite."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adjoint import Objective
from .case import BodyForceModel, Case, PatchBC, SolverConfig
from .mesh import build_structured_mesh

CHANNEL_PATCHES = {"left": "inlet", "right": "outlet", "bottom": "wall", "top": "wall"}


def parabolic_inlet(height: float = 1.0, mean: float = 1.0):
    """Fully developed channel profile with the given bulk velocity."""

    def profile(xy):
        y = xy[:, 1]
        return np.stack([6.0 * mean * y * (height - y) / height**2, np.zeros_like(y)], axis=1)

    return profile


def poiseuille(nx: int = 30, ny: int = 16, length: float = 3.0, height: float = 1.0, **config) -> Case:
    """Plane channel with a parabolic inlet and a zero-pressure outlet (Re 20 by default)."""
    mesh = build_structured_mesh(nx, ny, domain=((0.0, length), (0.0, height)), patch_kinds=CHANNEL_PATCHES)
    settings = dict(mu=0.05, omega_v=0.7, omega_p=0.1, max_iter=3000, tol=1e-10)
    settings.update(config)
    bcs = {"left": PatchBC(velocity=parabolic_inlet(height), phi=0.0)}
    return Case(mesh, SolverConfig(**settings), bcs=bcs, name="poiseuille")


def poiseuille_exact(case: Case, height: float = 1.0) -> np.ndarray:
    return parabolic_inlet(height)(case.mesh.cell_centroid)


GRAVITY = 9.81


def hydrostatic(nx: int = 32, ny: int = 64, width: float = 1.0, height: float = 2.0,
                densities=(10.0, 1.0), concept: str = "C2", **config) -> Case:
    """Closed tank at rest with a sharp two-layer density jump at mid height."""
    mesh = build_structured_mesh(nx, ny, domain=((0.0, width), (0.0, height)))
    y = mesh.cell_centroid[:, 1]
    rho = np.where(y < 0.5 * height, densities[0], densities[1])
    base = np.zeros((mesh.n_cells, 2))
    base[:, 1] = -rho * GRAVITY
    settings = dict(mu=0.1, omega_v=0.9, omega_p=0.1, max_iter=200, tol=0.0)
    settings.update(config)
    return Case(mesh, SolverConfig(**settings), body_force=BodyForceModel(base=base, concept=concept), name="hydrostatic")


def hydrostatic_velocity_scale(height: float = 2.0) -> float:
    return math.sqrt(GRAVITY * height)


def checkerboard(n: int = 32, **config) -> tuple[Case, np.ndarray]:
    """Source-free Stokes box and the odd-even pressure mode used to seed it."""
    mesh = build_structured_mesh(n, n)
    i = np.arange(mesh.n_cells) % n
    j = np.arange(mesh.n_cells) // n
    mode = (-1.0) ** (i + j)
    settings = dict(mu=1.0, convection=False, omega_v=0.7, omega_p=0.3, max_iter=200, tol=0.0)
    settings.update(config)
    return Case(mesh, SolverConfig(**settings), name="checkerboard"), mode


def odd_even_amplitude(p: np.ndarray, mode: np.ndarray) -> float:
    return abs(float(p @ mode)) / len(mode)


def taylor_green(xy: np.ndarray) -> np.ndarray:
    return np.stack([np.sin(xy[:, 0]) * np.cos(xy[:, 1]), -np.cos(xy[:, 0]) * np.sin(xy[:, 1])], axis=1)


def manufactured(n: int, mu: float = 0.1, stretching: float = 1.0, skew: float = 0.0, **config) -> Case:
    """Steady Taylor-Green vortex on ``[0, pi]^2`` driven by ``q = 2 mu v``.

    The convective term is a pure gradient for this field, so it is absorbed
    by the pressure and the velocity stays exact.
    """
    mesh = build_structured_mesh(n, n, domain=((0.0, math.pi), (0.0, math.pi)),
                                 stretching=(stretching, stretching), skew=skew)
    bcs = {name: PatchBC(velocity=taylor_green) for name in mesh.patches}
    q = 2.0 * mu * taylor_green(mesh.cell_centroid)
    settings = dict(mu=mu, blend=1.0, omega_v=0.8, omega_p=0.2, max_iter=5000, tol=1e-10, nonorth=skew != 0.0)
    settings.update(config)
    return Case(mesh, SolverConfig(**settings), bcs=bcs, body_force=BodyForceModel(base=q), name="manufactured")


def velocity_l2_error(case: Case, v: np.ndarray, exact) -> float:
    e = v - exact(case.mesh.cell_centroid)
    vol = case.mesh.cell_volume
    return math.sqrt(float(np.einsum("ci,ci->c", e, e) @ vol / vol.sum()))


@dataclass(frozen=True)
class ChannelLayout:
    nx: int = 48
    ny: int = 24
    length: float = 4.0
    height: float = 1.0
    x_ratio: float = 1.02
    y_ratio: float = 1.1  # growth ratio away from the centreline
    front_width: float = 0.02
    buoyancy: float = 35.0
    objective_x: tuple = (2.5, 3.5)


def centre_clustered_nodes(n: int, height: float, ratio: float) -> np.ndarray:
    """Node heights whose cell sizes grow geometrically from mid height towards both walls."""
    half = n // 2
    widths = ratio ** np.arange(half)
    upper = np.concatenate([widths, [widths[-1] * ratio]]) if n % 2 else widths
    sizes = np.concatenate([widths[::-1], upper])
    nodes = np.concatenate([[0.0], np.cumsum(sizes)])
    return height * nodes / nodes[-1]


def adjoint_channel(layout: ChannelLayout = ChannelLayout(), **config) -> tuple[Case, Objective]:
    """Buoyant channel with a steep scalar front entering at the inlet.

    A heavy lower layer (``phi = 1``) enters below a light upper layer through
    a ``tanh`` front; gravity couples the scalar back into the momentum
    balance. The objective is ``(phi)^2`` integrated over a downstream window,
    so the adjoint momentum source ``phi_hat grad(phi)`` is concentrated on
    the front.
    """
    L, H = layout.length, layout.height
    mesh = build_structured_mesh(layout.nx, layout.ny, domain=((0.0, L), (0.0, H)), stretching=(layout.x_ratio, 1.0),
                                 y_nodes=centre_clustered_nodes(layout.ny, H, layout.y_ratio), patch_kinds=CHANNEL_PATCHES)

    def front(xy):
        return 0.5 * (1.0 - np.tanh((xy[:, 1] - 0.5 * H) / layout.front_width))

    settings = dict(mu=0.05, mu_phi=0.002, omega_v=0.8, omega_p=0.2, max_iter=5000, tol=1e-12, solve_scalar=True)
    settings.update(config)
    bcs = {"left": PatchBC(velocity=parabolic_inlet(H), phi=front)}
    body = BodyForceModel(gravity=(0.0, -1.0), buoyancy=layout.buoyancy)
    case = Case(mesh, SolverConfig(**settings), bcs=bcs, body_force=body, name="adjoint-channel")
    x = mesh.cell_centroid[:, 0]
    lo, hi = layout.objective_x
    objective = Objective(volume="scalar", region=(x > lo) & (x < hi), target=0.0)
    return case, objective


CATALOG = {
    "poiseuille": poiseuille,
    "hydrostatic": hydrostatic,
    "checkerboard": checkerboard,
    "manufactured": manufactured,
    "adjoint-channel": adjoint_channel,
}
