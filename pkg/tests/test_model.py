import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calciner.model import (
    N_VARS, BoundaryConditions, CalcinerModel, Grid, HeatTransferParams, InfeasibleStateError,
    ModelEvaluationError, StateLayout, assemble_dae_residual, interface_mass_fluxes,
    interface_velocities, solid_gas_heat_transfer, upwind_select,
)
from calciner.transport import TransportParams

import oracle_residual

C_IN = (0.15, 0.31, 3.74, 5.81, 0.79)
C0 = [0.1, 0.1, 0.1, 19.65, 0.1]


def make_model(n=2, d=0.2, k_sg=250.0, Q=(0.0, 0.0), c_in=C_IN):
    bc = BoundaryConditions(101925.0, 101325.0, c_in, 657.15, 1261.15, *Q)
    return CalcinerModel(Grid(n, 30.0, d), bc, transport=TransportParams(diameter=d),
                         heat=HeatTransferParams(k_sg, 1e-5))


def scrambled_state(model, seed=0):
    """A non-uniform, non-consistent state with forward pressure gradient."""
    rng = np.random.default_rng(seed)
    n = model.grid.n_cells
    c = np.array(C0) * rng.uniform(0.5, 1.5, (n, 5))
    T_s = np.linspace(700.0, 850.0, n) + rng.uniform(-5, 5, n)
    T_g = np.linspace(1200.0, 1000.0, n) + rng.uniform(-5, 5, n)
    P = np.linspace(101800.0, 101400.0, n)
    u_s = rng.uniform(-2e5, -1e5, n)
    u_g = rng.uniform(-1e6, -5e5, n)
    return model.layout.pack(c, u_s, u_g, T_s, T_g, P)


def test_layout_roundtrip():
    lay = StateLayout(3)
    z = np.arange(30.0)
    s = lay.unpack(z)
    np.testing.assert_array_equal(lay.pack_state(s), z)
    assert s.c.shape == (3, 5)
    np.testing.assert_array_equal(lay.mass, np.r_[np.ones(21), np.zeros(9)])


def test_column_groups_are_structurally_orthogonal():
    lay = StateLayout(7)
    S = lay.sparsity()
    groups = lay.column_groups()
    assert sorted(np.concatenate(groups)) == list(range(lay.size))
    for g in groups:
        # no row touches two columns of the same group
        assert np.all(S[:, g].sum(axis=1) <= 1)


def test_velocity_sign_follows_pressure_drop():
    grid = Grid(2, 30.0, 0.2)
    bc = BoundaryConditions(101925.0, 101325.0, C_IN, 657.15, 1261.15)
    v = interface_velocities([101700.0, 101500.0], bc, grid, np.full(3, 4e-5), np.full(3, 0.4))
    assert np.all(v > 0)
    v = interface_velocities([102500.0, 101000.0], bc, grid, np.full(3, 4e-5), np.full(3, 0.4))
    assert v[0] < 0 and v[1] > 0 and v[2] < 0


def test_uniform_pressure_means_no_interior_flow():
    grid = Grid(3, 30.0, 0.2)
    bc = BoundaryConditions(101325.0, 101325.0, C_IN, 657.15, 1261.15)
    v = interface_velocities(np.full(3, 101325.0), bc, grid, np.full(4, 4e-5), np.full(4, 0.4))
    np.testing.assert_array_equal(v, np.zeros(4))


def test_upwind_select():
    bc = BoundaryConditions(2e5, 1e5, C_IN, 657.15, 1261.15)
    left = np.array([1.0, 2.0, 3.0])
    right = np.array([10.0, 20.0, 30.0])
    np.testing.assert_array_equal(upwind_select([1.5e5, 1.8e5], bc, left, right), [1.0, 20.0, 3.0])


def test_fluxes_inlet_and_outlet_are_pure_advection():
    c = np.array([[1.0] * 5, [2.0] * 5])
    N = interface_mass_fluxes(c, [0.5] * 5, np.array([3.0, 3.0, 3.0]), [0.1] * 5, 1.5)
    np.testing.assert_allclose(N[0], 1.5)
    np.testing.assert_allclose(N[1], 3.0 * 1.0 - 0.1 * (2.0 - 1.0) / 1.5)
    np.testing.assert_allclose(N[2], 6.0)


def test_heat_transfer_sign():
    J = solid_gas_heat_transfer([700.0], [1200.0], [1e-5], HeatTransferParams(250.0, 1e-5))
    assert J[0] == pytest.approx(250.0 * 3 * 500.0)
    assert solid_gas_heat_transfer([900.0], [900.0], [1e-5], HeatTransferParams())[0] == 0.0


def _oracle_state(model, z):
    s = model.layout.unpack(z)
    return [dict(c=list(s.c[i]), u_s=s.u_s[i], u_g=s.u_g[i], T_s=s.T_s[i], T_g=s.T_g[i], P=s.P[i])
            for i in range(model.grid.n_cells)]


def _oracle_bc(model):
    b = model.bc
    return dict(P_in=b.P_in, P_out=b.P_out, c_in=list(b.c_in), T_s_in=b.T_s_in, T_g_in=b.T_g_in,
                Q_s=b.Q_amb_s, Q_g=b.Q_amb_g)


def oracle_comparison(model, z):
    """Max deviation between the assembled residual and the brute-force oracle,
    relative to max(1, |value|) per component."""
    nd = model.layout.n_diff
    res = assemble_dae_residual(0.0, z, np.zeros_like(z), model)
    rows = oracle_residual.residual(_oracle_state(model, z), _oracle_bc(model), model.grid.dz,
                                    model.grid.diameter, model.transport.diffusion,
                                    k_sg=model.heat.k_sg, r_b=model.heat.r_b)
    rows = np.array(rows)
    expect = np.concatenate([-rows[:, :7].ravel(), rows[:, 7:].ravel()])
    err = np.abs(res - expect) / np.maximum(1.0, np.abs(expect))
    return float(err.max()), float(np.abs(res[nd:] - expect[nd:]).max())


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_residual_matches_bruteforce_oracle(seed):
    model = make_model(2)
    err, _ = oracle_comparison(model, scrambled_state(model, seed))
    assert err < 1e-12


def test_residual_matches_oracle_with_ambient_losses():
    model = make_model(2, Q=(-500.0, -2000.0))
    err, _ = oracle_comparison(model, scrambled_state(model, 4))
    assert err < 1e-12


def test_residual_subtracts_derivative():
    model = make_model(3)
    z = scrambled_state(model)
    zdot = np.linspace(-1, 1, z.size)
    nd = model.layout.n_diff
    r0 = model.residual(0.0, z, np.zeros_like(z))
    r1 = model.residual(0.0, z, zdot)
    np.testing.assert_allclose(r1[:nd] - r0[:nd], zdot[:nd], atol=1e-6)
    np.testing.assert_array_equal(r1[nd:], r0[nd:])


def test_residual_locality():
    model = make_model(6)
    z = scrambled_state(model)
    base = model.fun(0.0, z)
    cell = model.layout.cell_of
    for j in range(6):
        for local in range(N_VARS):
            k = np.flatnonzero((cell == j) & (model.layout.local_of == local))[0]
            zp = z.copy()
            zp[k] *= 1 + 1e-6
            changed = np.flatnonzero(model.fun(0.0, zp) != base)
            assert np.all(np.abs(cell[changed] - j) <= 1)


def test_inert_species_telescoping():
    model = make_model(5)
    z = scrambled_state(model)
    ev = model.evaluate(0.0, z)
    dz = model.grid.dz
    for j in (3, 4):
        total = ev.dxdt[:, j].sum() * dz
        assert total == pytest.approx(ev.fluxes[0, j] - ev.fluxes[-1, j], rel=1e-12, abs=1e-12)
    # backbone and water element balances
    backbone = (ev.dxdt[:, 0] + ev.dxdt[:, 1]).sum() * dz
    flux = ev.fluxes[:, 0] + ev.fluxes[:, 1]
    assert backbone == pytest.approx(flux[0] - flux[-1], rel=1e-12, abs=1e-12)


def test_energy_telescoping():
    Q = (-300.0, -700.0)
    model = make_model(4, Q=Q)
    z = scrambled_state(model)
    ev = model.evaluate(0.0, z)
    dz = model.grid.dz
    total = (ev.dxdt[:, 5] + ev.dxdt[:, 6]).sum() * dz
    expect = (ev.H_s[0] + ev.H_g[0] - ev.H_s[-1] - ev.H_g[-1]) + (Q[0] + Q[1]) * model.grid.length
    assert total == pytest.approx(expect, rel=1e-10)


def test_consistent_state_reference_initial_condition():
    model = make_model(20)
    z = model.consistent_state(C0, 600.0, 600.0)
    ev = model.evaluate(0.0, z)
    assert np.max(np.abs(ev.g)) < 1e-10
    P = model.layout.unpack(z).P
    v_s = sum(0.1 * v for v in (30e-6, 41.4736e-6 + 3.39116e-9 * 600, 22.45e-6 + 7.9e-10 * 600))
    np.testing.assert_allclose(P, 19.75 * 8.314 * 600 / (1 - v_s), rtol=1e-13)
    assert np.all((P > 9.7e4) & (P < 1.0e5))


def test_consistent_state_rejects_no_gas():
    model = make_model(2)
    with pytest.raises(InfeasibleStateError):
        model.consistent_state([0.1, 0.1, 0.0, 0.0, 0.1], 600.0, 600.0)


def test_consistent_state_rejects_solid_overfill():
    model = make_model(2)
    with pytest.raises(InfeasibleStateError):
        model.consistent_state([4e4, 0.0, 0.1, 1.0, 0.0], 600.0, 600.0)


def test_nonfinite_residual_names_cell():
    model = make_model(3)
    z = scrambled_state(model)
    s = model.layout.unpack(z)
    s.T_g[1] = np.nan
    with pytest.raises(ModelEvaluationError) as info:
        model.residual(0.0, model.layout.pack_state(s), np.zeros_like(z))
    assert info.value.cell in (0, 1, 2)


def test_zero_kaolinite_has_no_reaction():
    model = make_model(4, c_in=(0.0, 0.31, 3.74, 5.81, 0.79))
    z = model.consistent_state([0.0, 0.1, 0.1, 19.65, 0.1], 900.0, 900.0)
    np.testing.assert_array_equal(model.evaluate(0.0, z).rate, np.zeros(4))


@settings(max_examples=25, deadline=None)
@given(T_s=st.floats(min_value=300.0, max_value=1500.0), T_g=st.floats(min_value=300.0, max_value=1500.0),
       scale=st.floats(min_value=0.1, max_value=5.0))
def test_consistent_state_round_trip(T_s, T_g, scale):
    model = make_model(3)
    z = model.consistent_state(np.array(C0) * scale, T_s, T_g)
    g = model.evaluate(0.0, z).g
    assert np.max(np.abs(g[:, 2])) < 1e-12
    assert np.max(np.abs(g[:, :2])) < 1e-10 * (1 + np.abs(model.layout.unpack(z).u_g).max())
