"""Assembly of convection-diffusion stencils on the face-based mesh.

Every equation is written as ``A^P x^P + sum_NB a^NB x^NB = b^P``. Boundary
faces relate the boundary value linearly to the owner value,
``x_b = coef * x_P + value``; faces flagged inactive carry no flux at all.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh


@dataclass
class FaceBC:
    coef: np.ndarray
    value: np.ndarray
    active: np.ndarray

    @classmethod
    def dirichlet(cls, mesh: Mesh, value=0.0) -> "FaceBC":
        nb = mesh.n_boundary
        return cls(np.zeros(nb), np.broadcast_to(np.asarray(value, float), (nb,)).copy(), np.ones(nb, bool))

    @classmethod
    def neumann(cls, mesh: Mesh) -> "FaceBC":
        nb = mesh.n_boundary
        return cls(np.ones(nb), np.zeros(nb), np.ones(nb, bool))

    def values(self, mesh: Mesh, x: np.ndarray) -> np.ndarray:
        return self.coef * x[mesh.owner[mesh.n_interior :]] + self.value


@dataclass
class Stencil:
    """Assembled system with interior off-diagonals kept per face."""

    mesh: Mesh
    diag: np.ndarray
    a_pn: np.ndarray  # owner row, neighbor column
    a_np: np.ndarray  # neighbor row, owner column
    rhs: np.ndarray

    def copy(self) -> "Stencil":
        return Stencil(self.mesh, self.diag.copy(), self.a_pn.copy(), self.a_np.copy(), self.rhs.copy())

    def matvec(self, x: np.ndarray) -> np.ndarray:
        m = self.mesh
        ni = m.n_interior
        own, nb = m.owner[:ni], m.neighbor[:ni]
        out = self.diag * x
        out += np.bincount(own, self.a_pn * x[nb], minlength=m.n_cells)
        out += np.bincount(nb, self.a_np * x[own], minlength=m.n_cells)
        return out

    def residual(self, x: np.ndarray) -> np.ndarray:
        """Local residuals ``A x - b``."""
        return self.matvec(x) - self.rhs

    def matrix(self) -> sp.csr_matrix:
        m = self.mesh
        ni, n = m.n_interior, m.n_cells
        own, nb = m.owner[:ni], m.neighbor[:ni]
        rows = np.concatenate([np.arange(n), own, nb])
        cols = np.concatenate([np.arange(n), nb, own])
        vals = np.concatenate([self.diag, self.a_pn, self.a_np])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def diffusion_coefficients(mesh: Mesh) -> np.ndarray:
    """Orthogonal-part geometric factor ``(d . dGamma) / |d|^2`` per face."""
    return np.einsum("ij,ij->i", mesh.d, mesh.face_area) / np.einsum("ij,ij->i", mesh.d, mesh.d)


def assemble_transport(mesh: Mesh, flux: np.ndarray, diffusivity: float, blend: float, bc: FaceBC) -> Stencil:
    """Convection-diffusion stencil for ``div(F x) - div(k grad x)``.

    ``flux`` is the owner-oriented face flux (already scaled by density if
    needed). Convection blends first-order upwind with linear interpolation,
    ``blend = 0`` pure upwind and ``blend = 1`` pure central.
    """
    ni, n = mesh.n_interior, mesh.n_cells
    own, nb = mesh.owner, mesh.neighbor[:ni]
    flux = np.asarray(flux, dtype=float)
    geo = diffusion_coefficients(mesh)
    D = diffusivity * geo
    lam = mesh.lam[:ni]
    F = flux[:ni]
    up = 1.0 - blend

    fpos, fneg = np.maximum(F, 0.0), np.minimum(F, 0.0)
    diag_own = up * fpos + blend * F * (1.0 - lam) + D[:ni]
    a_pn = up * fneg + blend * F * lam - D[:ni]
    diag_nb = -up * fneg - blend * F * lam + D[:ni]
    a_np = -up * fpos - blend * F * (1.0 - lam) - D[:ni]

    diag = np.bincount(own[:ni], diag_own, minlength=n) + np.bincount(nb, diag_nb, minlength=n)
    rhs = np.zeros(n)

    # boundary faces: x_b = c x_P + g
    Fb = flux[ni:]
    Db = D[ni:]
    c, g, act = bc.coef, bc.value, bc.active
    out = Fb >= 0.0
    conv_p = np.where(out, Fb * (up + blend * c), Fb * c)
    conv_0 = np.where(out, Fb * blend * g, Fb * g)
    kp = np.where(act, conv_p + Db * (1.0 - c), 0.0)
    k0 = np.where(act, conv_0 - Db * g, 0.0)
    diag += np.bincount(own[ni:], kp, minlength=n)
    rhs -= np.bincount(own[ni:], k0, minlength=n)
    return Stencil(mesh, diag, a_pn, a_np, rhs)


def nonorthogonal_source(mesh: Mesh, diffusivity: float, face_grad: np.ndarray, bc: FaceBC | None = None) -> np.ndarray:
    """Explicit non-orthogonal diffusion part ``k (dGamma - (d.dGamma) d/|d|^2) . grad_F``.

    Returned as a right-hand-side contribution per cell.
    """
    geo = diffusion_coefficients(mesh)
    tvec = mesh.face_area - geo[:, None] * mesh.d
    flux = diffusivity * np.einsum("fi,fi->f", tvec, face_grad)
    if bc is not None:
        flux[mesh.n_interior :] *= bc.active
    return mesh.cell_sum(flux)
