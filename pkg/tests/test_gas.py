import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unstart import gas as gd
from unstart.gas import GasModel

AIR = GasModel(1.4, 287.87, 1e-5, 0.72)

pos = st.floats(0.05, 20.0)
vel = st.floats(-5.0, 5.0)


@given(pos, vel, vel, pos)
def test_primitive_roundtrip(rho, u, v, p):
    U = gd.conservative_from_primitive(rho, u, v, p, AIR)
    prim = gd.primitive_from_conservative(U, AIR)
    np.testing.assert_allclose([prim.rho, prim.u, prim.v, prim.p], [rho, u, v, p], rtol=1e-12, atol=1e-12)


def test_pressure_of_rest_state():
    U = np.array([2.0, 0.0, 0.0, 2.5])
    assert gd.pressure(U, AIR) == pytest.approx(1.0)


@pytest.mark.parametrize("bad,comp", [([-1.0, 0, 0, 1.0], "density"), ([1.0, 3.0, 0, 1.0], "pressure")])
def test_check_state_names_component(bad, comp):
    with pytest.raises(gd.InvalidStateError) as err:
        gd.check_state(np.array(bad), AIR)
    assert err.value.component == comp


@given(pos, vel, vel, pos, pos, vel, vel, pos, st.floats(0, 2 * np.pi))
def test_rusanov_consistent_and_conservative(r1, u1, v1, p1, r2, u2, v2, p2, th):
    UL = gd.conservative_from_primitive(r1, u1, v1, p1, AIR)
    UR = gd.conservative_from_primitive(r2, u2, v2, p2, AIR)
    n = np.array([np.cos(th), np.sin(th)])
    np.testing.assert_allclose(gd.rusanov_flux(UL, UL, n, AIR), gd.normal_flux(UL, *n, AIR), rtol=1e-13)
    fwd = gd.rusanov_flux(UL, UR, n, AIR)
    back = gd.rusanov_flux(UR, UL, -n, AIR)
    np.testing.assert_allclose(fwd, -back, rtol=1e-12, atol=1e-12)


def test_viscous_flux_vanishes_without_gradients():
    U = gd.conservative_from_primitive(1.0, 2.0, -1.0, 1.0, AIR)
    Fv, Gv = gd.viscous_flux(U, np.zeros(4), np.zeros(4), AIR)
    assert np.all(Fv == 0) and np.all(Gv == 0)


def test_viscous_flux_simple_shear():
    # u = y: tau_xy = mu, energy flux u*tau_xy
    rho, u = 1.0, 0.3
    U = gd.conservative_from_primitive(rho, u, 0.0, 1.0, AIR)
    dUdy = np.array([0.0, 1.0, 0.0, u])  # d(rho u)/dy = 1, d(rho E)/dy = u du/dy with p fixed
    Fv, Gv = gd.viscous_flux(U, np.zeros(4), dUdy, AIR)
    assert Fv[2] == pytest.approx(AIR.mu)
    assert Gv[1] == pytest.approx(AIR.mu)
    assert Gv[3] == pytest.approx(u * AIR.mu)


def test_freestream_gas_matches_unit_reynolds():
    g = gd.freestream_gas(5.0, 900.0, 101.0, 5e6)
    rho = 900.0 / (287.87 * 101.0)
    speed = 5.0 * np.sqrt(1.4 * 287.87 * 101.0)
    assert g.mu == pytest.approx(rho * speed / 5e6, rel=1e-14)
    assert gd.freestream_gas(5.0, 900.0, 101.0, np.inf).mu == 0.0


@given(st.integers(0, 2**31 - 1))
def test_positivity_limiter_keeps_means_and_floors(seed):
    rng = np.random.default_rng(seed)
    n = 4
    w1 = np.polynomial.legendre.leggauss(n)[1]
    w = np.outer(w1, w1)
    U = np.empty((3, 4, n, n))
    U[:, 0] = 1.0 + 0.9 * rng.uniform(-1, 1, (3, n, n))
    U[:, 1] = 0.5 * rng.standard_normal((3, n, n))
    U[:, 2] = 0.5 * rng.standard_normal((3, n, n))
    U[:, 3] = 0.5 * (U[:, 1] ** 2 + U[:, 2] ** 2) / U[:, 0] + rng.uniform(-0.3, 1.0, (3, n, n))
    # make the means admissible
    U[:, 3] += max(0.0, 0.2 - gd.pressure(gd.element_means(U, w).T, AIR).min() / 0.4)
    out = gd.positivity_limit(U, w, AIR, 1e-8, 1e-8)
    np.testing.assert_allclose(gd.element_means(out, w), gd.element_means(U, w), rtol=1e-12, atol=1e-12)
    assert out[:, 0].min() >= 1e-8
    assert gd.pressure(np.moveaxis(out, 1, 0), AIR).min() >= 1e-8 * (1 - 1e-9)


def test_positivity_limiter_is_identity_on_valid_states():
    w = np.ones((3, 3))
    U = np.tile(gd.conservative_from_primitive(1.0, 0.1, 0.0, 1.0, AIR)[None, :, None, None], (2, 1, 3, 3))
    np.testing.assert_array_equal(gd.positivity_limit(U, w, AIR), U)


def test_limiter_rejects_bad_mean():
    U = np.zeros((1, 4, 2, 2))
    U[:, 0] = -1.0
    with pytest.raises(gd.UnrecoverableStateError):
        gd.positivity_limit(U, np.ones((2, 2)), AIR)
