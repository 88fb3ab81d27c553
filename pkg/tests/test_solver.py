import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calciner.model import BoundaryConditions, CalcinerModel, Grid, HeatTransferParams
from calciner.solver import (
    ConvergenceError, DaeProblem, SingularJacobianError, SolverConfig, as_problem,
    consistent_init, integrate, jacobian_fd, local_tolerances, newton_solve, steady_state,
)
from calciner.transport import TransportParams


def scalar_dae():
    """x' = -x, 0 = y - x; exact solution x = y = exp(-t)."""
    return DaeProblem(fun=lambda t, z: np.array([-z[0], z[1] - z[0]]), mass=np.array([1.0, 0.0]))


def scalar_error(rtol):
    cfg = SolverConfig(rtol=rtol, atol=rtol * 1e-2, horizon=5.0, samples=51)
    traj = integrate(scalar_dae(), [1.0, 1.0], cfg)
    exact = np.exp(-traj.t)
    return float(np.max(np.abs(traj.z - exact[:, None]))), traj


@pytest.mark.parametrize("rtol", [1e-4, 1e-6, 1e-8])
def test_scalar_dae_accuracy(rtol):
    err, traj = scalar_error(rtol)
    assert err < 10 * rtol
    assert traj.max_algebraic_residual < 1e-14


def test_scalar_dae_error_decreases_with_rtol():
    errs = [scalar_error(r)[0] for r in (1e-4, 1e-6, 1e-8)]
    assert errs[0] > errs[1] > errs[2]


def test_output_times_hit_exactly():
    t_eval = np.array([0.0, 0.3, 1.7, 2.0])
    traj = integrate(scalar_dae(), [1.0, 1.0], SolverConfig(horizon=2.0), t_eval=t_eval)
    np.testing.assert_array_equal(traj.t, t_eval)


def test_default_sampling():
    traj = integrate(scalar_dae(), [1.0, 1.0], SolverConfig(horizon=1.0, samples=11))
    np.testing.assert_allclose(traj.t, np.linspace(0, 1, 11))


def test_zero_horizon_returns_initial_state():
    traj = integrate(scalar_dae(), [1.0, 1.0], SolverConfig(horizon=0.0))
    np.testing.assert_array_equal(traj.t, [0.0])
    np.testing.assert_array_equal(traj.z, [[1.0, 1.0]])


def test_stiff_linear_system():
    # x1' = -1000 (x1 - cos t), x2' = x1 - x2, 0 = y - x1 - x2
    def f(t, z):
        return np.array([-1000.0 * (z[0] - math.cos(t)), z[0] - z[1], z[2] - z[0] - z[1]])

    prob = DaeProblem(fun=f, mass=np.array([1.0, 1.0, 0.0]))
    traj = integrate(prob, [1.0, 0.0, 1.0], SolverConfig(rtol=1e-6, atol=1e-9, horizon=2.0, samples=3))
    assert len(traj.steps) < 2000
    assert traj.z[-1, 0] == pytest.approx(math.cos(2.0), abs=2e-3)
    assert traj.z[-1, 2] == pytest.approx(traj.z[-1, 0] + traj.z[-1, 1], abs=1e-12)


def test_on_step_callback_sees_every_step():
    seen = []
    traj = integrate(scalar_dae(), [1.0, 1.0], SolverConfig(horizon=1.0, samples=3),
                     on_step=lambda t, z, info: seen.append(t))
    assert len(seen) == len(traj.steps)
    assert seen == sorted(seen)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(rtol=0.0)
    with pytest.raises(ValueError):
        SolverConfig(min_step=1.0, max_step=0.1)
    with pytest.raises(ValueError):
        SolverConfig(jacobian_refresh="sometimes")


def test_local_tolerances():
    assert local_tolerances(1e-3, 1e-5) == (1e-3, 1e-5)
    rtol, atol = local_tolerances(1e-6, 1e-8)
    assert rtol == pytest.approx(1e-7) and atol == pytest.approx(1e-9)


def test_newton_scalar_root():
    x = newton_solve(lambda v: v**2 - 2.0, np.array([1.0]), tol=1e-14)
    assert x[0] == pytest.approx(math.sqrt(2.0), rel=1e-14)


def test_newton_already_converged_is_noop():
    x0 = np.array([3.0, -1.0])
    x = newton_solve(lambda v: v - x0, x0.copy())
    np.testing.assert_array_equal(x, x0)


def test_newton_singular_jacobian():
    with pytest.raises(SingularJacobianError):
        newton_solve(lambda v: np.array([v[0] + v[1] - 1.0, 2 * v[0] + 2 * v[1] - 3.0]), np.zeros(2))


def test_newton_no_root_reports_best_iterate():
    with pytest.raises(ConvergenceError) as info:
        newton_solve(lambda v: v**2 + 1.0, np.array([0.5]), max_iter=20)
    assert info.value.x is not None
    assert info.value.residual_norm >= 1.0


def make_model(n, d=0.2):
    bc = BoundaryConditions(101925.0, 101325.0, (0.15, 0.31, 3.74, 5.81, 0.79), 657.15, 1261.15)
    return CalcinerModel(Grid(n, 30.0, d), bc, transport=TransportParams(diameter=d),
                         heat=HeatTransferParams(250.0, 1e-5))


def _state(model):
    z = consistent_init([0.1, 0.1, 0.1, 19.65, 0.1], np.linspace(600, 800, model.grid.n_cells),
                        np.linspace(1200, 900, model.grid.n_cells), model)
    s = model.layout.unpack(z)
    s.P[:] = np.linspace(101800.0, 101400.0, model.grid.n_cells)
    return model.layout.pack_state(s)


def test_banded_jacobian_matches_dense():
    model = make_model(3)
    z = _state(model)
    f = lambda v: model.fun(0.0, v)  # noqa: E731
    typical = model.typical()
    J_band = jacobian_fd(f, z, None, model.groups, model.sparsity, typical)
    J_dense = jacobian_fd(f, z, None, None, None, typical)
    scale = np.abs(J_dense).max(axis=1, keepdims=True)
    assert np.max(np.abs(J_band - J_dense) / np.maximum(scale, 1e-300)) < 1e-6
    np.testing.assert_array_equal(J_band[~model.sparsity], 0.0)


def test_banded_jacobian_uses_few_evaluations():
    model = make_model(12)
    calls = []
    z = _state(model)

    def f(v):
        calls.append(1)
        return model.fun(0.0, v)

    jacobian_fd(f, z, f(z), model.groups, model.sparsity, model.typical())
    assert len(calls) == 1 + 30


def test_consistent_init_residuals_vanish():
    model = make_model(4)
    z = consistent_init([0.1, 0.1, 0.1, 19.65, 0.1], 600.0, 600.0, model)
    assert np.max(np.abs(model.evaluate(0.0, z).g)) < 1e-10


def test_steady_state_of_small_model():
    model = make_model(4)
    z0 = consistent_init([0.1, 0.1, 0.1, 19.65, 0.1], 600.0, 600.0, model)
    traj = integrate(model, z0, SolverConfig(horizon=2.0, samples=2))
    z, fallback = steady_state(model, traj.z[-1])
    assert not fallback
    F = model.fun(0.0, z)
    assert np.max(np.abs(F / (np.abs(z) + model.typical()))) < 1e-10


def test_as_problem_wraps_model():
    model = make_model(2)
    prob = as_problem(model)
    assert prob.n == model.n
    assert as_problem(prob) is prob


@settings(max_examples=20, deadline=None)
@given(a=st.floats(min_value=0.1, max_value=50.0))
def test_linear_decay_rates(a):
    prob = DaeProblem(fun=lambda t, z: np.array([-a * z[0], z[1] - 2 * z[0]]), mass=np.array([1.0, 0.0]))
    traj = integrate(prob, [1.0, 2.0], SolverConfig(rtol=1e-6, atol=1e-10, horizon=1.0, samples=2))
    x = math.exp(-a)
    # relative error accumulates once per decay length, so the bound grows with a
    assert abs(traj.z[-1, 0] - x) <= 20 * 1e-6 * a * x + 10 * 1e-10
    assert traj.z[-1, 1] == pytest.approx(2 * traj.z[-1, 0], rel=1e-13, abs=1e-15)
