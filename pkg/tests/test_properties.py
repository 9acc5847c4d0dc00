import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mwifv.config import parse_config
from mwifv.fields import interp_linear, interp_reversed
from mwifv.mesh import build_structured_mesh, check_gauss_identities, gauss_defects
from mwifv.sensitivity import central_difference, residual_norm, volumetric_sensitivity

finite = st.floats(-1e6, 1e6, allow_nan=False)
meshes = st.builds(
    build_structured_mesh,
    nx=st.integers(1, 7),
    ny=st.integers(2, 7),
    stretching=st.tuples(st.floats(0.7, 1.4), st.floats(0.7, 1.4)),
    skew=st.floats(-0.2, 0.2),
)
orthogonal_meshes = st.builds(
    build_structured_mesh,
    nx=st.integers(2, 7),
    ny=st.integers(2, 7),
    stretching=st.tuples(st.floats(0.7, 1.4), st.floats(0.7, 1.4)),
)


@given(st.lists(finite, min_size=1, max_size=50), st.randoms(use_true_random=False))
def test_residual_norm_ignores_ordering(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert residual_norm(shuffled) == residual_norm(values) or np.isclose(residual_norm(shuffled), residual_norm(values), rtol=1e-14)


@given(st.lists(finite, min_size=1, max_size=50), st.floats(-1e3, 1e3, allow_nan=False))
def test_residual_norm_is_absolutely_homogeneous(values, scale):
    assert np.isclose(residual_norm(np.multiply(values, scale)), abs(scale) * residual_norm(values), rtol=1e-12, atol=1e-300)


@given(st.integers(1, 40), st.integers(1, 40), st.floats(1e-6, 10.0), st.floats(0.05, 1.0), st.integers(1, 10**5))
def test_config_serialisation_round_trips(nx, ny, mu, omega, max_iter):
    text = f"[mesh]\nnx = {nx}\nny = {ny}\n[fluid]\nrho = 1\nmu = {mu!r}\n[run]\nomega_v = {omega!r}\nmax_iter = {max_iter}\n"
    cfg = parse_config(text)
    again = parse_config(cfg.serialize())
    assert again.sections == cfg.sections
    assert again.serialize() == cfg.serialize()


@settings(max_examples=40, deadline=None)
@given(meshes)
def test_gauss_identities_hold_on_any_generated_mesh(mesh):
    check_gauss_identities(mesh)
    area, moment = gauss_defects(mesh)
    assert np.abs(area).max() <= 1e-12 and np.abs(moment).max() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(meshes)
def test_weights_lie_in_the_unit_interval_and_locate_the_perpendicular_point(mesh):
    ni = mesh.n_interior
    lam = mesh.lam[:ni]
    assert np.all((lam > 0.0) & (lam < 1.0))
    perp = mesh.cell_centroid[mesh.owner[:ni]] + lam[:, None] * mesh.d[:ni]
    offset = np.einsum("fi,fi->f", mesh.face_centroid[:ni] - perp, mesh.d[:ni])
    assert np.abs(offset).max() <= 1e-12


@settings(max_examples=40, deadline=None)
@given(meshes, st.tuples(finite, finite, finite))
def test_linear_interpolation_is_exact_for_affine_fields_along_d(mesh, coef):
    a, b, c = (x / 1e3 for x in coef)
    f = lambda xy: a + b * xy[:, 0] + c * xy[:, 1]  # noqa: E731
    ni = mesh.n_interior
    perp = mesh.cell_centroid[mesh.owner[:ni]] + mesh.lam[:ni, None] * mesh.d[:ni]
    got = interp_linear(f(mesh.cell_centroid), mesh)[:ni]
    assert np.allclose(got, f(perp), rtol=1e-12, atol=1e-9)


@settings(max_examples=40, deadline=None)
@given(orthogonal_meshes, st.tuples(finite, finite))
def test_linear_and_reversed_levers_sum_to_twice_the_mean(mesh, pair):
    rng = np.random.default_rng(abs(int(pair[0])) % 2**32)
    q = rng.normal(size=mesh.n_cells) * (1.0 + abs(pair[1]) / 1e3)
    ni = mesh.n_interior
    total = interp_linear(q, mesh)[:ni] + interp_reversed(q, mesh)[:ni]
    assert np.allclose(total, q[mesh.owner[:ni]] + q[mesh.neighbor[:ni]], rtol=1e-13, atol=1e-13 * np.abs(q).max())


@settings(max_examples=40, deadline=None)
@given(orthogonal_meshes, finite, finite, st.integers(0, 2**32 - 1))
def test_volumetric_sensitivity_is_linear_in_the_adjoint(mesh, a, b, seed):
    rng = np.random.default_rng(seed)
    u, w = rng.normal(size=(2, mesh.n_cells, 2))
    region = rng.random(mesh.n_cells) < 0.5
    region[0] = True
    direction = rng.normal(size=2)
    lhs = volumetric_sensitivity(mesh, a * u + b * w, region, direction)
    rhs = a * volumetric_sensitivity(mesh, u, region, direction) + b * volumetric_sensitivity(mesh, w, region, direction)
    assert np.isclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (abs(a) + abs(b) + 1.0))


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10), st.sampled_from([1.0, 0.5, 0.25, 0.125]))
def test_central_difference_is_exact_on_quadratics(a, b, c, theta, eps):
    J = lambda t: a * t * t + b * t + c  # noqa: E731
    assert np.isclose(central_difference(J, theta, eps), 2.0 * a * theta + b, rtol=1e-12, atol=1e-11)
