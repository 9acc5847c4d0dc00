import numpy as np
import pytest
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from mwifv import cases
from mwifv.adjoint import (
    AdjointSolver, AdjointState, Objective, adjoint_continuity_rhs, adjoint_scalar_bc, adjoint_source_reconstruct,
    adjoint_wall_velocity,
)
from mwifv.case import Case, ConfigError, PatchBC, ScalarSource, SolverConfig
from mwifv.fields import face_flux, interp_linear
from mwifv.mesh import build_structured_mesh
from mwifv.mwi import mwi_correction
from mwifv.primal import PrimalState, assemble_momentum, scalar_bc, solve_primal
from mwifv.transport import assemble_transport

ROW_PATCHES = {"left": "inlet", "right": "outlet", "bottom": "slip", "top": "slip"}


def closed_box(n=5, **config):
    settings = dict(mu=0.3, convection=False)
    settings.update(config)
    return Case(build_structured_mesh(n, n, stretching=(1.2, 0.9)), SolverConfig(**settings))


def lever_face_values(q, mesh, reversed_levers):
    """Independent per-face evaluation of linear or reversed-lever interpolation."""
    out = q[mesh.owner].astype(float).copy()
    for f in range(mesh.n_interior):
        lam = mesh.lam[f]
        w_nb = 1.0 - lam if reversed_levers else lam
        out[f] = w_nb * q[mesh.neighbor[f]] + (1.0 - w_nb) * q[mesh.owner[f]]
    return out


def gauss_average(q, mesh, face_q):
    """Independent per-cell evaluation of the Gauss-lever volume average."""
    out = np.zeros_like(q, dtype=float)
    for c in range(mesh.n_cells):
        cell = mesh.cell(c)
        for f, s in zip(cell.face_indices, cell.face_signs):
            r = mesh.face_centroid[f] - cell.centroid
            out[c] += s * (r @ face_q[f]) * mesh.face_area[f]
        out[c] /= cell.volume
    return out


# -- momentum assembly ---------------------------------------------------------------------------


def test_homogeneous_problem_has_zero_adjoint():
    case = closed_box()
    primal = PrimalState.initial(case)
    solver = AdjointSolver(case, primal, Objective(volume="kinetic"))
    adj, res = solver.adjoint_outer_iteration(AdjointState.zeros(case.mesh))
    assert not np.any(adj.v) and not np.any(adj.p)
    assert res["v"] == 0.0 and res["p"] == 0.0


def test_diffusion_operator_is_self_adjoint():
    case = closed_box()
    primal = PrimalState.initial(case)
    grad = np.zeros((case.mesh.n_cells, 2))
    prim = assemble_momentum(case, primal, grad, grad)
    adj, _, _ = AdjointSolver(case, primal, Objective(volume="kinetic")).assemble_adjoint_momentum(AdjointState.zeros(case.mesh), grad)
    for a, b in zip(prim.stencils, adj.stencils):
        A, B = a.matrix().toarray(), b.matrix().toarray()
        assert np.abs(A - B).max() <= 1e-14 * np.abs(A).max()


def test_adjoint_upwind_stencil_is_the_transposed_primal_stencil():
    m = build_structured_mesh(6, 1, domain=((0.0, 3.0), (0.0, 0.5)), patch_kinds=ROW_PATCHES)
    case = Case(m, SolverConfig(mu=0.05, blend=0.0), bcs={"left": PatchBC(velocity=(1.0, 0.0), phi=0.0)})
    primal = PrimalState.initial(case, v0=(1.0, 0.0))
    primal.flux = face_flux(np.tile([1.0, 0.0], (m.n_faces, 1)), m)
    grad = np.zeros((m.n_cells, 2))
    prim = assemble_momentum(case, primal, grad, grad).stencils[0]
    solver = AdjointSolver(case, primal, Objective(volume="kinetic"))
    adj = solver.assemble_adjoint_momentum(AdjointState.zeros(m), grad)[0].stencils[0]
    np.testing.assert_allclose(adj.a_pn, prim.a_np, rtol=1e-15)
    np.testing.assert_allclose(adj.a_np, prim.a_pn, rtol=1e-15)
    np.testing.assert_allclose(adj.matrix().toarray(), prim.matrix().toarray().T, atol=1e-14)


# -- adjoint face interpolation --------------------------------------------------------------------


@pytest.mark.parametrize("mode", ["E1", "E2", "E3"])
def test_linear_adjoint_pressure_without_sources_needs_no_correction(mode):
    m = build_structured_mesh(6, 6)
    f = lambda xy: 0.8 * xy[:, 0] + 2.0 * xy[:, 1]  # noqa: E731
    q1, q2, _ = adjoint_source_reconstruct(np.zeros((m.n_cells, 2)), m, mode)
    bracket = mwi_correction(m, f(m.cell_centroid), f(m.face_centroid[m.n_interior:]),
                             np.tile([0.8, 2.0], (m.n_cells, 1)), q1, q2)
    assert np.abs(bracket).max() < 1e-12


def test_constant_source_is_transparent_in_e3(rng):
    m = build_structured_mesh(7, 5, stretching=(1.3, 1.2))
    q = np.tile([3.0, -4.0], (m.n_cells, 1))
    p, gp, pb = rng.normal(size=m.n_cells), rng.normal(size=(m.n_cells, 2)), rng.normal(size=m.n_boundary)
    q1, q2, _ = adjoint_source_reconstruct(q, m, "E3")
    with_source = mwi_correction(m, p, pb, gp, q1, q2)
    pressure_only = mwi_correction(m, p, pb, gp)
    assert np.abs(with_source - pressure_only)[: m.n_interior].max() <= 1e-12 * 5.0
    e1q1, e1q2, _ = adjoint_source_reconstruct(q, m, "E1")
    assert e1q1 is None and e1q2 is None
    assert np.array_equal(mwi_correction(m, p, pb, gp, e1q1, e1q2), pressure_only)


def test_e2_and_e3_differ_by_the_lever_swap(rng):
    m = build_structured_mesh(6, 5, stretching=(1.3, 1.2))
    q = rng.normal(size=(m.n_cells, 2))
    p, gp, pb = rng.normal(size=m.n_cells), rng.normal(size=(m.n_cells, 2)), rng.normal(size=m.n_boundary)
    b2 = mwi_correction(m, p, pb, gp, *adjoint_source_reconstruct(q, m, "E2")[:2])
    b3 = mwi_correction(m, p, pb, gp, *adjoint_source_reconstruct(q, m, "E3")[:2])
    lin, rev = lever_face_values(q, m, False), lever_face_values(q, m, True)
    Q_lin, Q_rev = gauss_average(q, m, lin), gauss_average(q, m, rev)
    swap = -(rev - lin) + (lever_face_values(Q_rev, m, False) - lever_face_values(Q_lin, m, False))
    e = m.d / np.linalg.norm(m.d, axis=1)[:, None]
    expected = np.einsum("fi,fi->f", swap, e)[:, None] * e
    np.testing.assert_allclose(b3 - b2, expected, atol=1e-12)
    assert np.abs(expected).max() > 1e-3


def test_e2_and_e3_coincide_on_uniform_meshes(rng):
    m = build_structured_mesh(7, 7)
    q = rng.normal(size=(m.n_cells, 2))
    for a, b in zip(adjoint_source_reconstruct(q, m, "E2"), adjoint_source_reconstruct(q, m, "E3")):
        assert np.array_equal(a, b)


# -- source reconstruction ----------------------------------------------------------------------


def test_constant_source_reconstructions_agree_on_faces():
    m = build_structured_mesh(6, 4, stretching=(1.2, 1.3), skew=0.1)
    q = np.tile([1.5, 0.25], (m.n_cells, 1))
    q1, q2, Q = adjoint_source_reconstruct(q, m, "E3")
    ni = m.n_interior
    const = np.tile([1.5, 0.25], (ni, 1))
    np.testing.assert_allclose(q1[:ni], const, rtol=1e-14)
    np.testing.assert_allclose(q2[:ni], const, rtol=1e-12)
    np.testing.assert_allclose(Q, q, rtol=1e-12)


@pytest.mark.parametrize("mode", ["E1", "E2", "E3"])
def test_zero_source_reconstructs_to_zero(mode):
    m = build_structured_mesh(4, 4, stretching=(1.2, 1.2))
    q1, q2, Q = adjoint_source_reconstruct(np.zeros((m.n_cells, 2)), m, mode)
    assert not np.any(Q)
    for face in (q1, q2):
        assert face is None or not np.any(face)


def test_affine_source_cell_average_is_exact_on_uniform_mesh():
    n = 8
    m = build_structured_mesh(n, n)
    q = np.column_stack([m.cell_centroid[:, 0], np.zeros(m.n_cells)])
    _, _, Q = adjoint_source_reconstruct(q, m, "E3")
    i, j = np.arange(m.n_cells) % n, np.arange(m.n_cells) // n
    inner = (i > 0) & (i < n - 1) & (j > 0) & (j < n - 1)
    # the exact cell average of x over a cell is its centroid abscissa
    np.testing.assert_allclose(Q[inner], q[inner], atol=1e-14)


def test_unknown_mode_is_rejected():
    m = build_structured_mesh(2, 2)
    with pytest.raises(ConfigError):
        adjoint_source_reconstruct(np.zeros((4, 2)), m, "E4")


# -- continuity right-hand side ----------------------------------------------------------------


def _rhs(case, objective, adj):
    return adjoint_continuity_rhs(case, PrimalState.initial(case), objective, adj)


def test_pressure_independent_sources_give_zero_rhs(rng):
    case = closed_box()
    adj = AdjointState.zeros(case.mesh)
    adj.v, adj.phi = rng.normal(size=adj.v.shape), rng.normal(size=adj.phi.shape)
    assert not np.any(_rhs(case, Objective(volume="kinetic"), adj))


def test_pressure_objective_gives_positive_cell_volumes():
    case = closed_box()
    region = case.mesh.cell_centroid[:, 0] < 0.4
    rhs = _rhs(case, Objective(volume="pressure", region=region), AdjointState.zeros(case.mesh))
    np.testing.assert_array_equal(rhs[region], case.mesh.cell_volume[region])
    assert not np.any(rhs[~region])


def test_pressure_dependent_scalar_source_contribution():
    m = build_structured_mesh(4, 4)
    case = Case(m, SolverConfig(), scalar_source=ScalarSource(pressure=1.0))
    adj = AdjointState.zeros(m)
    adj.phi[:] = 2.0
    np.testing.assert_allclose(_rhs(case, Objective(volume="kinetic"), adj), -2.0 * m.cell_volume)


# -- adjoint scalar -------------------------------------------------------------------------------


def test_adjoint_scalar_vanishes_without_sources():
    case = closed_box(solve_scalar=True)
    solver = AdjointSolver(case, PrimalState.initial(case), Objective(volume="kinetic"))
    phi, res = solver.adjoint_scalar_step(AdjointState.zeros(case.mesh))
    assert not np.any(phi) and res == 0.0


def test_adjoint_scalar_is_a_poisson_solve_at_rest():
    n, mu_phi = 6, 0.4
    m = build_structured_mesh(n, n)
    case = Case(m, SolverConfig(mu_phi=mu_phi, omega_phi=1.0, solve_scalar=True), bcs={k: PatchBC(phi=0.0) for k in m.patches})
    primal = PrimalState.initial(case, phi0=0.5)
    region = m.cell_centroid[:, 1] > 0.5
    solver = AdjointSolver(case, primal, Objective(volume="scalar", region=region, target=0.0))
    phi, _ = solver.adjoint_scalar_step(AdjointState.zeros(m))
    # separately assembled five-point Laplacian with Dirichlet walls half a cell away
    h = 1.0 / n
    rows, cols, vals = [], [], []
    for c in range(m.n_cells):
        i, j = c % n, c // n
        diag = 0.0
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            ii, jj = i + di, j + dj
            if 0 <= ii < n and 0 <= jj < n:
                rows.append(c), cols.append(jj * n + ii), vals.append(-mu_phi)
                diag += mu_phi
            else:
                diag += 2.0 * mu_phi
        rows.append(c), cols.append(c), vals.append(diag)
    L = sp.csr_matrix((vals, (rows, cols)), shape=(m.n_cells, m.n_cells))
    # d j / d phi = 2 (phi - target) = 1 on the region enters with a negative sign
    expected = spla.spsolve(L.tocsc(), -np.where(region, 1.0, 0.0) * h * h)
    np.testing.assert_allclose(phi, expected, rtol=1e-12, atol=1e-15)


def test_adjoint_scalar_stencil_is_the_transposed_primal_stencil():
    m = build_structured_mesh(6, 1, domain=((0.0, 3.0), (0.0, 0.5)), patch_kinds=ROW_PATCHES)
    case = Case(m, SolverConfig(mu_phi=0.02, blend=0.0), bcs={"left": PatchBC(velocity=(1.0, 0.0), phi=1.0)})
    flux = face_flux(np.tile([1.0, 0.0], (m.n_faces, 1)), m)
    prim = assemble_transport(m, flux, 0.02, 0.0, scalar_bc(case)).matrix().toarray()
    adj = assemble_transport(m, -flux, 0.02, 0.0, adjoint_scalar_bc(case)).matrix().toarray()
    np.testing.assert_allclose(adj, prim.T, atol=1e-15)


# -- outer iteration ----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def small_channel():
    layout = cases.ChannelLayout(nx=24, ny=12, buoyancy=5.0, front_width=0.08)
    case, objective = cases.adjoint_channel(layout)
    primal = solve_primal(case)
    assert primal.converged
    return case, objective, primal.state


def test_converged_adjoint_is_a_fixed_point(small_channel):
    case, objective, primal = small_channel
    solver = AdjointSolver(case, primal, objective, "E3")
    res = solver.solve(tol=1e-12, max_iter=3000)
    assert res.converged
    _, again = solver.adjoint_outer_iteration(res.state)
    assert all(v <= 1e-11 for v in again.values())


def test_frozen_primal_is_not_mutated(small_channel):
    case, objective, primal = small_channel
    before = primal.checksum()
    for mode in ("E1", "E2", "E3"):
        AdjointSolver(case, primal, objective, mode).solve(tol=1e-6, max_iter=50)
    assert primal.checksum() == before


def test_modes_agree_with_each_other_on_the_small_channel(small_channel):
    case, objective, primal = small_channel
    fields = {m: AdjointSolver(case, primal, objective, m).solve(tol=1e-11, max_iter=3000, criterion="v").state.v
              for m in ("E1", "E2", "E3")}
    scale = np.abs(fields["E3"]).max()
    assert scale > 0.0
    # the modes are different discretizations of one adjoint: close, not equal
    for m in ("E1", "E2"):
        diff = np.abs(fields[m] - fields["E3"]).max() / scale
        assert 0.0 < diff < 0.2


def test_e1_e2_e3_identical_when_the_adjoint_source_vanishes(rng):
    case, mode_field = cases.checkerboard(6, max_iter=3)
    primal = solve_primal(case, PrimalState.initial(case, p0=mode_field)).state
    p_hat = rng.normal(size=case.mesh.n_cells)
    out = {}
    for mode in ("E1", "E2", "E3"):
        adj = AdjointState.zeros(case.mesh)
        adj.p = p_hat.copy()
        solver = AdjointSolver(case, primal, Objective(volume="pressure"), mode)
        for _ in range(3):
            adj, _ = solver.adjoint_outer_iteration(adj)
        out[mode] = adj
    for mode in ("E2", "E3"):
        assert np.array_equal(out[mode].vf, out["E1"].vf)
        assert np.array_equal(out[mode].v, out["E1"].v)


# -- boundary data and objectives -------------------------------------------------------------


def test_force_objective_prescribes_negative_direction_on_the_design_wall():
    case = cases.poiseuille(6, 3)
    obj = Objective(volume=None, boundary="force", patches=("bottom",), direction=(0.3, 0.7))
    wall = adjoint_wall_velocity(case, obj)
    faces = case.mesh.patches["bottom"].faces - case.mesh.n_interior
    np.testing.assert_array_equal(wall[faces], np.tile([-0.3, -0.7], (len(faces), 1)))
    others = np.setdiff1d(np.arange(case.mesh.n_boundary), faces)
    assert not np.any(wall[others])


@pytest.mark.parametrize("kwargs,match", [
    (dict(volume="volume"), "volume objective"),
    (dict(volume=None), "needs a volume or a boundary"),
    (dict(volume=None, boundary="force"), "at least one patch"),
    (dict(volume="kinetic", region=np.zeros(4, bool)), "empty"),
])
def test_objective_validation(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        Objective(**kwargs)


def test_unknown_mode_is_rejected_by_the_solver():
    case = closed_box()
    with pytest.raises(ConfigError):
        AdjointSolver(case, PrimalState.initial(case), Objective(), "E0")


def test_region_reconstruction_matches_linear_interpolation():
    m = build_structured_mesh(5, 5, stretching=(1.25, 1.0))
    q = np.random.default_rng(3).normal(size=(m.n_cells, 2))
    q1, q2, Q = adjoint_source_reconstruct(q, m, "E2")
    np.testing.assert_allclose(q1, interp_linear(q, m))
    np.testing.assert_allclose(q2, interp_linear(Q, m))
