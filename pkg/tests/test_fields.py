import numpy as np
import pytest

from mwifv.fields import (
    check_cell_field, divergence_from_face_flux, face_flux, face_normal_gradient, green_gauss_gradient, interp_linear,
    interp_reversed,
)
from mwifv.mesh import build_structured_mesh


@pytest.fixture
def pair():
    return build_structured_mesh(2, 1)


def ordered(mesh, left, right):
    """Cell values with ``left`` on the owner of face 0 and ``right`` on its neighbor."""
    v = np.empty(2)
    v[mesh.owner[0]], v[mesh.neighbor[0]] = left, right
    return v


def test_linear_midpoint(pair):
    assert interp_linear(ordered(pair, 1.0, 3.0), pair)[0] == 2.0


def test_linear_reproduces_x_on_unequal_pair(two_cells):
    x = two_cells.cell_centroid[:, 0]
    assert interp_linear(x, two_cells)[0] == pytest.approx(1.0, abs=1e-15)


def test_reversed_levers_bias_on_unequal_pair(two_cells):
    x = two_cells.cell_centroid[:, 0]
    assert interp_reversed(x, two_cells)[0] == pytest.approx(1.5, abs=1e-15)


@pytest.mark.parametrize("op", [interp_linear, interp_reversed])
def test_constant_is_preserved(op):
    m = build_structured_mesh(5, 4, stretching=(1.3, 0.8), skew=0.15)
    np.testing.assert_allclose(op(np.full(m.n_cells, 4.25), m), 4.25, rtol=1e-15)


def test_reversed_equals_linear_on_uniform_grid(rng):
    m = build_structured_mesh(6, 5)
    f = rng.normal(size=(m.n_cells, 2))
    assert np.array_equal(interp_linear(f, m), interp_reversed(f, m))


def test_boundary_faces_take_supplied_values():
    m = build_structured_mesh(3, 2)
    vals = np.arange(m.n_boundary, dtype=float)
    out = interp_linear(np.zeros(m.n_cells), m, vals)
    np.testing.assert_array_equal(out[m.n_interior:], vals)
    # reversed levers fall back to the owner value on the boundary
    f = np.arange(m.n_cells, dtype=float)
    np.testing.assert_array_equal(interp_reversed(f, m)[m.n_interior:], f[m.owner[m.n_interior:]])


def test_compact_gradient_arithmetic():
    m = build_structured_mesh(2, 1, domain=((0.0, 1.0), (0.0, 1.0)))
    np.testing.assert_allclose(m.d[0], [0.5, 0.0])
    g = face_normal_gradient(ordered(m, 1.0, 3.0), m)
    np.testing.assert_allclose(g[0], [4.0, 0.0])


def test_compact_gradient_of_constant_and_linear():
    m = build_structured_mesh(6, 4, stretching=(1.25, 1.1))
    ni = m.n_interior
    np.testing.assert_array_equal(face_normal_gradient(np.full(m.n_cells, 2.0), m)[:ni], 0.0)
    g = face_normal_gradient(m.cell_centroid[:, 0], m)[:ni]
    horizontal = np.abs(m.d[:ni, 1]) < 1e-14
    np.testing.assert_allclose(g[horizontal], np.tile([1.0, 0.0], (horizontal.sum(), 1)), atol=1e-13)


def test_green_gauss_of_constant_is_zero():
    m = build_structured_mesh(5, 5, skew=0.2)
    g = green_gauss_gradient(np.full(m.n_cells, 3.0), m, np.full(m.n_boundary, 3.0))
    assert np.abs(g).max() < 1e-12


def test_green_gauss_affine_exact_with_exact_boundary_values():
    m = build_structured_mesh(6, 6)
    f = lambda xy: 2.0 * xy[:, 0] + 3.0 * xy[:, 1]  # noqa: E731
    g = green_gauss_gradient(f(m.cell_centroid), m, f(m.face_centroid[m.n_interior:]))
    np.testing.assert_allclose(g, np.tile([2.0, 3.0], (m.n_cells, 1)), atol=1e-12)


def test_green_gauss_matches_independent_per_cell_assembly():
    m = build_structured_mesh(5, 4, domain=((0.0, 2.0), (0.0, 1.0)), stretching=(1.3, 1.15))
    f = m.cell_centroid[:, 0] ** 2
    fb = m.face_centroid[m.n_interior:, 0] ** 2
    g = green_gauss_gradient(f, m, fb)
    for c in range(m.n_cells):
        total = np.zeros(2)
        cell = m.cell(c)
        for fid, sign in zip(cell.face_indices, cell.face_signs):
            if fid < m.n_interior:
                P, N, lam = m.owner[fid], m.neighbor[fid], m.lam[fid]
                val = lam * f[N] + (1.0 - lam) * f[P]
            else:
                val = fb[fid - m.n_interior]
            total += sign * val * m.face_area[fid]
        np.testing.assert_allclose(g[c], total / m.cell_volume[c], rtol=1e-13, atol=1e-13)


def test_vector_gradient_layout():
    m = build_structured_mesh(4, 4)
    xy = m.cell_centroid
    v = np.column_stack([xy[:, 1], 2.0 * xy[:, 0]])
    vb = np.column_stack([m.face_centroid[m.n_interior:, 1], 2.0 * m.face_centroid[m.n_interior:, 0]])
    g = green_gauss_gradient(v, m, vb)
    # g[c, i, k] = d v_i / d x_k
    np.testing.assert_allclose(g[:, 0, 1], 1.0, atol=1e-12)
    np.testing.assert_allclose(g[:, 1, 0], 2.0, atol=1e-12)
    np.testing.assert_allclose(g[:, 0, 0], 0.0, atol=1e-12)


def test_divergence_of_zero_and_uniform_flux():
    m = build_structured_mesh(5, 3, skew=0.1)
    assert np.all(divergence_from_face_flux(np.zeros(m.n_faces), m) == 0.0)
    flux = face_flux(np.tile([1.5, -0.5], (m.n_faces, 1)), m)
    perimeter = np.bincount(m.owner, m.face_magnitude, minlength=m.n_cells)
    perimeter += np.bincount(m.neighbor[: m.n_interior], m.face_magnitude[: m.n_interior], minlength=m.n_cells)
    assert np.all(np.abs(divergence_from_face_flux(flux, m)) <= 1e-12 * perimeter)


def test_divergence_sign_convention(two_cells):
    m = two_cells
    flux = np.zeros(m.n_faces)
    flux[0] = 1.0
    div = divergence_from_face_flux(flux, m, per_volume=True)
    assert div[m.owner[0]] == pytest.approx(1.0 / m.cell_volume[m.owner[0]])
    assert div[m.neighbor[0]] == pytest.approx(-1.0 / m.cell_volume[m.neighbor[0]])


def test_cell_field_validation():
    m = build_structured_mesh(2, 2)
    with pytest.raises(ValueError, match="rows"):
        check_cell_field(np.zeros(3), m)
    with pytest.raises(ValueError, match="non-finite"):
        check_cell_field(np.array([0.0, np.nan, 0.0, 0.0]), m)


def test_compact_gradient_rejects_vectors():
    m = build_structured_mesh(2, 2)
    with pytest.raises(ValueError):
        face_normal_gradient(np.zeros((m.n_cells, 2)), m)
