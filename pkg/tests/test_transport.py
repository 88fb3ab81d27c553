import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from calciner.thermo import load_species
from calciner.transport import (
    MachWarning, SutherlandModel, TransportParams, darcy_weisbach_velocity, mach_guard,
    mach_number, mixture_density, species_flux, suspension_viscosity, sutherland_viscosity,
    wilke_mixture_viscosity,
)

M = np.array([0.25816, 0.22213, 0.018015, 0.028965, 0.060084])
C_IN = np.array([0.15, 0.31, 3.74, 5.81, 0.79])
AIR_LIKE = SutherlandModel(1.716e-5, 273.15, 110.4)

# independent scalar evaluations of the closed forms
RHO_IN = 0.39071341
MU_AIR_1261 = 4.7607561287908004e-05
WILKE_BINARY = 1.3343903774396885e-05
V_DW = 101.1325871705682


def test_bundled_molar_masses():
    np.testing.assert_array_equal(load_species().molar_masses, M)


def test_density():
    assert mixture_density(np.zeros(5), M) == 0.0
    assert mixture_density(C_IN, M) == pytest.approx(RHO_IN, rel=1e-14)
    assert mixture_density([0, 0, 0, 19.65, 0], M) == pytest.approx(0.569, abs=5e-4)


def test_sutherland_reference_point():
    assert sutherland_viscosity(AIR_LIKE, 273.15) == pytest.approx(1.716e-5, rel=1e-15)


def test_sutherland_air_at_inlet_gas_temperature():
    assert sutherland_viscosity(AIR_LIKE, 1261.15) == pytest.approx(MU_AIR_1261, rel=1e-13)


def test_sutherland_monotone():
    mu = sutherland_viscosity(AIR_LIKE, np.linspace(200, 2000, 200))
    assert np.all(np.diff(mu) > 0)


def test_sutherland_rejects_bad_input():
    with pytest.raises(ValueError):
        sutherland_viscosity(AIR_LIKE, 0.0)
    with pytest.raises(ValueError):
        SutherlandModel(-1.0, 273.0, 100.0)


def test_wilke_single_gas():
    assert wilke_mixture_viscosity([1.0], [3e-5], [0.028]) == pytest.approx(3e-5, rel=1e-15)


def test_wilke_identical_gases():
    mu = wilke_mixture_viscosity([0.2, 0.3, 0.5], [2e-5] * 3, [0.03] * 3)
    assert mu == pytest.approx(2e-5, rel=1e-12)


def test_wilke_binary_oracle():
    mu = wilke_mixture_viscosity([0.5, 0.5], [1e-5, 2e-5], [0.028, 0.018])
    assert mu == pytest.approx(WILKE_BINARY, rel=1e-13)


def test_wilke_rejects_bad_composition():
    with pytest.raises(ValueError):
        wilke_mixture_viscosity([0.0, 0.0], [1e-5, 2e-5], [0.028, 0.018])
    with pytest.raises(ValueError):
        wilke_mixture_viscosity([0.4, 0.4], [1e-5, 2e-5], [0.028, 0.018])


def test_suspension_viscosity():
    assert suspension_viscosity(3e-5, 0.0) == 3e-5
    assert suspension_viscosity(3e-5, 0.25) == pytest.approx(2.25 * 3e-5, rel=1e-15)
    with pytest.raises(ValueError):
        suspension_viscosity(3e-5, 0.5)


def test_darcy_weisbach_oracle():
    v = darcy_weisbach_velocity(20.0, 1.0, 1.0, 4e-5, 0.39)
    assert v == pytest.approx(V_DW, rel=1e-13)
    # same gradient from a different (dP, dz) pair
    assert darcy_weisbach_velocity(60.0, 3.0, 1.0, 4e-5, 0.39) == pytest.approx(V_DW, rel=1e-13)


def test_darcy_weisbach_zero_and_odd():
    assert darcy_weisbach_velocity(0.0, 1.0, 1.0, 4e-5, 0.39) == 0.0
    assert darcy_weisbach_velocity(-20.0, 1.0, 1.0, 4e-5, 0.39) == pytest.approx(-V_DW, rel=1e-15)


def test_darcy_weisbach_rejects_bad_input():
    for args in [(1.0, 1.0, 1.0, 0.0, 0.39), (1.0, 1.0, 1.0, 4e-5, 0.0), (1.0, 0.0, 1.0, 4e-5, 0.39)]:
        with pytest.raises(ValueError):
            darcy_weisbach_velocity(*args)


def test_mach_guard():
    assert mach_guard(0.0, 300.0).ok
    with pytest.warns(MachWarning) as rec:
        check = mach_guard(70.0, 300.0)
    assert not check.ok
    assert check.mach == pytest.approx(70 / math.sqrt(1.4 * 287 * 300))
    assert rec[0].message.mach == pytest.approx(check.mach)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        check = mach_guard(10.0, 1261.0)
    assert check.ok and check.mach == pytest.approx(0.014, abs=1e-3)


def test_mach_number_vectorized():
    m = mach_number(np.array([0.0, 347.0]), np.array([300.0, 300.0]))
    assert m[0] == 0.0 and m[1] == pytest.approx(1.0, rel=1e-3)


def test_species_flux():
    np.testing.assert_array_equal(species_flux(0.0, C_IN, np.zeros(5), 0.1), np.zeros(5))
    np.testing.assert_array_equal(species_flux(2.0, C_IN, np.ones(5), 0.0), 2.0 * C_IN)
    c2 = np.array([0.10, 0.35, 3.90, 5.70, 0.79])
    dz = 1.5
    grad = (c2 - C_IN) / dz
    expect = [1.0 * C_IN[j] - 0.1 * (c2[j] - C_IN[j]) / dz for j in range(5)]
    np.testing.assert_allclose(species_flux(1.0, C_IN, grad, [0.1] * 5), expect, rtol=1e-15)


def test_transport_params_validation():
    with pytest.raises(ValueError):
        TransportParams(diameter=0.0)
    with pytest.raises(ValueError):
        TransportParams(diffusion=(0.1, -0.1, 0.1, 0.1, 0.1))


@settings(max_examples=100, deadline=None)
@given(x=st.lists(st.floats(min_value=0.0, max_value=1.0), min_size=1, max_size=4).filter(lambda v: sum(v) > 1e-3),
       mu=st.floats(min_value=1e-6, max_value=1e-4), Mw=st.floats(min_value=0.002, max_value=0.2))
def test_wilke_reduces_for_identical_gases(x, mu, Mw):
    x = np.array(x) / sum(x)
    n = len(x)
    assert wilke_mixture_viscosity(x, [mu] * n, [Mw] * n) == pytest.approx(mu, rel=1e-12)


@settings(max_examples=100, deadline=None)
@given(dP=st.floats(min_value=-1e4, max_value=1e4), mu=st.floats(min_value=1e-6, max_value=1e-3),
       rho=st.floats(min_value=0.01, max_value=10.0))
def test_darcy_weisbach_odd_symmetry(dP, mu, rho):
    v = darcy_weisbach_velocity(dP, 1.5, 0.5, mu, rho)
    assert darcy_weisbach_velocity(-dP, 1.5, 0.5, mu, rho) == -v
    assert np.sign(v) == np.sign(dP)


@settings(max_examples=50, deadline=None)
@given(v=st.floats(min_value=0.0, max_value=0.49))
def test_suspension_viscosity_at_least_gas(v):
    assert suspension_viscosity(2e-5, v) >= 2e-5
