"""Discrete field operators on a :class:`~mwifv.mesh.Mesh`.

Cell fields are numpy arrays of shape ``(n_cells,)`` for scalars or
``(n_cells, 2)`` for vectors; face fields likewise with ``n_faces`` rows.
Boundary faces carry ``lam = 1``: linear interpolation returns the supplied
boundary value there, reversed-lever interpolation returns the owner value.
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def check_cell_field(values, mesh: Mesh, name: str = "field") -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.shape[0] != mesh.n_cells:
        raise ValueError(f"{name} has {arr.shape[0]} rows, mesh has {mesh.n_cells} cells")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _lam(mesh: Mesh, arr: np.ndarray) -> np.ndarray:
    lam = mesh.lam[: mesh.n_interior]
    return lam.reshape((-1,) + (1,) * (arr.ndim - 1))


def _boundary(values: np.ndarray, mesh: Mesh, boundary_values) -> np.ndarray:
    if boundary_values is None:
        return values[mesh.owner[mesh.n_interior :]]
    bv = np.asarray(boundary_values, dtype=float)
    return np.broadcast_to(bv, (mesh.n_boundary,) + values.shape[1:])


def interp_linear(values, mesh: Mesh, boundary_values=None) -> np.ndarray:
    """``lam * value(NB) + (1 - lam) * value(P)`` on every face.

    Boundary faces take ``boundary_values`` (default: the owner value).
    """
    values = np.asarray(values, dtype=float)
    ni = mesh.n_interior
    out = np.empty((mesh.n_faces,) + values.shape[1:])
    lam = _lam(mesh, values)
    out[:ni] = lam * values[mesh.neighbor[:ni]] + (1.0 - lam) * values[mesh.owner[:ni]]
    out[ni:] = _boundary(values, mesh, boundary_values)
    return out


def interp_reversed(values, mesh: Mesh) -> np.ndarray:
    """Reversed levers: ``(1 - lam) * value(NB) + lam * value(P)``.

    With ``lam = 1`` on boundary faces this yields the owner value.
    """
    values = np.asarray(values, dtype=float)
    ni = mesh.n_interior
    out = np.empty((mesh.n_faces,) + values.shape[1:])
    lam = _lam(mesh, values)
    out[:ni] = (1.0 - lam) * values[mesh.neighbor[:ni]] + lam * values[mesh.owner[:ni]]
    out[ni:] = values[mesh.owner[ni:]]
    return out


def face_normal_gradient(values, mesh: Mesh, boundary_values=None) -> np.ndarray:
    """Compact two-point gradient ``(f_NB - f_P) / |d| * d / |d|``.

    Returns an ``(n_faces, 2)`` array for scalar input. On boundary faces the
    boundary value replaces ``f_NB`` and ``d`` runs from the owner centroid to
    the face centroid; without boundary values those rows are zero.
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("face_normal_gradient expects a scalar cell field")
    dd = np.einsum("ij,ij->i", mesh.d, mesh.d)
    if np.any(dd[: mesh.n_interior] == 0.0):
        raise ValueError("zero-length centroid distance")
    ni = mesh.n_interior
    jump = np.zeros(mesh.n_faces)
    jump[:ni] = values[mesh.neighbor[:ni]] - values[mesh.owner[:ni]]
    if boundary_values is not None:
        jump[ni:] = _boundary(values, mesh, boundary_values) - values[mesh.owner[ni:]]
    return (jump / dd)[:, None] * mesh.d


def green_gauss_gradient(values, mesh: Mesh, boundary_values=None) -> np.ndarray:
    """Cell gradient ``(1/dOmega) sum_F f^F dGamma^F`` with linear face values.

    For a vector field of shape ``(n, 2)`` the result has shape ``(n, 2, 2)``
    with ``grad[c, i, k] = d f_i / d x_k``.
    """
    values = np.asarray(values, dtype=float)
    face = interp_linear(values, mesh, boundary_values)
    if values.ndim == 1:
        contrib = face[:, None] * mesh.face_area
    else:
        contrib = np.einsum("fi,fk->fik", face, mesh.face_area)
    total = mesh.cell_sum(contrib)
    return total / mesh.cell_volume.reshape((-1,) + (1,) * (total.ndim - 1))


def divergence_from_face_flux(flux, mesh: Mesh, per_volume: bool = False) -> np.ndarray:
    """Signed sum of owner-oriented face fluxes per cell (owner +, neighbor -)."""
    total = mesh.cell_sum(np.asarray(flux, dtype=float))
    if per_volume:
        total = total / mesh.cell_volume
    return total


def face_flux(face_vectors, mesh: Mesh) -> np.ndarray:
    """Dot product of face vectors with the face area vectors."""
    return np.einsum("fi,fi->f", np.asarray(face_vectors, dtype=float), mesh.face_area)
