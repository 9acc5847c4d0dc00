import math

import numpy as np
import pytest

from mwifv import cases
from mwifv.adjoint import AdjointSolver, AdjointState, Objective
from mwifv.case import ConfigError
from mwifv.mesh import build_structured_mesh
from mwifv.primal import PrimalState, solve_primal
from mwifv.sensitivity import (
    ResidualRecord, SensitivityReport, VolumeControl, boundary_sensitivity, central_difference, convergence_compare,
    evaluate_objective, fd_oracle, first_crossing, linearity_spread, observed_order, records_from_history,
    relative_change, residual_norm, sensitivity_density, volumetric_sensitivity,
)


# -- objectives ------------------------------------------------------------------------------


def test_unit_volume_density_integrates_to_region_volume():
    case = cases.poiseuille(6, 4)
    region = case.mesh.cell_centroid[:, 0] < 1.0
    J = evaluate_objective(case, PrimalState.initial(case), Objective(volume="unit", region=region))
    assert J == pytest.approx(1.0, rel=1e-14)


def test_unit_area_density_integrates_to_patch_area():
    case = cases.poiseuille(6, 4)
    J = evaluate_objective(case, PrimalState.initial(case), Objective(volume=None, boundary="area", patches=("bottom", "top")))
    assert J == pytest.approx(6.0, rel=1e-14)


def test_kinetic_energy_quadrature_is_second_order():
    # 0.5 |v|^2 with v = 6 y (1 - y) integrates to 1.5 * 36 / 30 over a 3 x 1 channel
    exact, errors = 1.8, []
    for n in (8, 16, 32, 64):
        case = cases.poiseuille(3 * n, n)
        state = PrimalState.initial(case)
        state.v = cases.poiseuille_exact(case)
        errors.append(abs(evaluate_objective(case, state, Objective(volume="kinetic")) - exact))
    assert min(observed_order(errors)) > 1.95


def test_scalar_objective_uses_target():
    case = cases.poiseuille(3, 2)
    state = PrimalState.initial(case, phi0=1.5)
    J = evaluate_objective(case, state, Objective(volume="scalar", target=0.5))
    assert J == pytest.approx(3.0, rel=1e-14)


# -- sensitivities ---------------------------------------------------------------------------


def test_shape_sensitivity_density_example():
    assert sensitivity_density(1.0, [[2.0, 0.0]], [[3.0, 0.0]])[0] == -6.0


def test_shape_sensitivity_vanishes_without_adjoint_gradient():
    rng = np.random.default_rng(5)
    s = sensitivity_density(0.7, rng.normal(size=(9, 2)), np.zeros((9, 2)))
    assert not np.any(s)


def test_boundary_sensitivity_of_zero_adjoint_is_zero():
    case = cases.poiseuille(6, 4)
    primal = PrimalState.initial(case)
    primal.v = cases.poiseuille_exact(case)
    s, total = boundary_sensitivity(case, primal, AdjointState.zeros(case.mesh), "bottom")
    assert not np.any(s) and total == 0.0
    with pytest.raises(ConfigError):
        boundary_sensitivity(case, primal, AdjointState.zeros(case.mesh), "left")


def test_volumetric_sensitivity_zero_adjoint():
    m = build_structured_mesh(3, 3)
    assert volumetric_sensitivity(m, np.zeros((9, 2)), np.ones(9, bool), (1.0, 0.0)) == 0.0


def test_volumetric_sensitivity_single_cell():
    # one cell of volume 0.5 with v_hat . e = 2; the adjoint convention gives dJ/dtheta = -v_hat . e dOmega
    m = build_structured_mesh(1, 1, domain=((0.0, 1.0), (0.0, 0.5)))
    assert volumetric_sensitivity(m, np.array([[2.0, 0.0]]), np.array([True]), (1.0, 0.0)) == -1.0


def test_empty_control_region_is_rejected():
    with pytest.raises(ConfigError):
        VolumeControl(np.zeros(4, bool))


# -- finite differences ----------------------------------------------------------------------


def test_central_difference_is_exact_on_quadratics():
    assert central_difference(lambda t: t * t, 1.0, 0.25) == 2.0
    assert central_difference(lambda t: 3.0 * t - 1.0, 0.0, 0.5) == 3.0


def test_fd_oracle_recovers_slope_of_a_linear_response():
    # Stokes flow: the pressure objective responds linearly to a body-force control
    case = cases.poiseuille(8, 4, convection=False, tol=1e-12)
    base = solve_primal(case).state
    control = VolumeControl.cell(13, case.mesh.n_cells)
    obj = Objective(volume="pressure", region=case.mesh.cell_centroid[:, 0] < 1.0)
    fd = fd_oracle(case, control, obj, [0.1, 0.01, 0.001], base=base, tol=1e-12)
    slope = (evaluate_objective(case, solve_primal(control.apply(case, 1.0), tol=1e-12).state, obj)
             - evaluate_objective(case, base, obj))
    for value in fd.values():
        assert value == pytest.approx(slope, rel=1e-7)
    assert linearity_spread(list(fd.values())) < 1e-7


def _stokes_deviations(n, points):
    case = cases.poiseuille(3 * n, n, convection=False, tol=1e-12)
    primal = solve_primal(case).state
    obj = Objective(volume="kinetic", region=case.mesh.cell_centroid[:, 0] > 2.0)
    adj = AdjointSolver(case, primal, obj, "E3").solve(tol=1e-12, max_iter=4000)
    assert adj.converged
    c, out = case.mesh.cell_centroid, []
    for x, y in points:
        control = VolumeControl.cell(int(np.argmin((c[:, 0] - x) ** 2 + (c[:, 1] - y) ** 2)), case.mesh.n_cells)
        fd = fd_oracle(case, control, obj, [1e-3], base=primal, tol=1e-12)[1e-3]
        ad = volumetric_sensitivity(case.mesh, adj.state.v, control.region, control.direction)
        out.append(abs(ad - fd) / abs(fd))
    return out


def test_adjoint_gradient_converges_to_fd_in_stokes_flow():
    # the adjoint is discretized from the continuous equations, so it agrees with
    # the discrete FD derivative only up to discretization error
    points = [(1.0, 0.5), (2.5, 0.5), (2.5, 0.2)]
    coarse, fine = _stokes_deviations(6, points), _stokes_deviations(12, points)
    assert max(fine[1:]) < 1e-3
    assert all(f < 0.5 * c for f, c in zip(fine, coarse))


def test_report_statistics():
    r = SensitivityReport("c", adjoint=1.02, fd={1e-2: 0.99, 1e-3: 1.0, 1e-4: 1.01})
    assert r.valid() and r.fd_reference == 1.0
    assert r.deviation == pytest.approx(0.02)
    assert r.spread == pytest.approx(0.02 / 1.01)
    assert not SensitivityReport("c", 1.0, {1e-3: 1.0}).valid()


# -- residual norm ---------------------------------------------------------------------------


def test_residual_norm_examples():
    assert residual_norm(np.zeros(17)) == 0.0
    assert residual_norm([-2.0]) == 2.0
    assert residual_norm([]) == 0.0


def test_residual_norm_matches_dense_oracle():
    rng = np.random.default_rng(11)
    A, x, b = rng.normal(size=(20, 20)), rng.normal(size=20), rng.normal(size=20)
    r = A @ x - b
    assert residual_norm(r) == pytest.approx(sum(abs(v) for v in r) / 20, rel=1e-15)


def test_residual_records_are_non_negative():
    recs = records_from_history([{"v": 1.0, "p": 0.5}, {"v": 0.1, "p": 0.05}])
    assert [(r.equation, r.iteration) for r in recs] == [("v", 1), ("p", 1), ("v", 2), ("p", 2)]
    with pytest.raises(ValueError):
        ResidualRecord("v", 1, -1.0)
    with pytest.raises(ValueError):
        ResidualRecord("v", 1, math.nan)


# -- convergence comparison -----------------------------------------------------------------


def test_first_crossing_and_censoring():
    seq = [1.0, 1e-3, 1e-9, 1e-12]
    assert first_crossing(seq, 1e-8) == 3
    assert first_crossing(seq, 1e-13) is None


def test_identical_histories_compare_equal():
    hist = list(np.logspace(0, -10, 50))
    out = convergence_compare({"E1": hist, "E3": hist}, 1e-8)
    assert out["relative"][("E3", "E1")] == 0.0 and out["censored"] == []


def test_published_iteration_counts_give_minus_seven_point_two_percent():
    assert round(relative_change(20671, 22281), 1) == -7.2


def test_censored_runs_are_excluded():
    out = convergence_compare({"E1": [1.0, 1e-9], "E2": [1.0, 1e-3]}, 1e-8)
    assert out["iterations"] == {"E1": 2, "E2": None}
    assert out["relative"] == {} and out["censored"] == ["E2"]


def test_history_dicts_use_the_requested_key():
    hist = [{"v": 1.0, "p": 1e-9}, {"v": 1e-9, "p": 1e-9}]
    assert convergence_compare({"a": hist}, 1e-8)["iterations"]["a"] == 2
    assert convergence_compare({"a": hist}, 1e-8, key="p")["iterations"]["a"] == 1
