import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unstart.dg.solver import BoundarySpec, DGSolver, ShockCapturing, ghost_state
from unstart.gas import GasModel, conservative_from_primitive
from unstart.mesh import ForestMesh, balance_2to1
from unstart.dg.reference import ConfigurationError

GAS = GasModel(1.4, 1.0, 0.0, 0.72)
VISC = GasModel(1.4, 1.0, 1e-2, 0.72)
STATE = conservative_from_primitive(1.2, 0.7, -0.4, 0.9, GAS)


def _nonconforming(periodic=True, skew=0.0):
    m = ForestMesh.rectangle(0, 1, 0, 1, 3, 3, periodic=(periodic, periodic))
    if skew:
        c = m.corners.copy()
        c[..., 0] += skew * np.sin(2 * np.pi * c[..., 1])
        m = ForestMesh(c, m.links, m.boundary_tags)
    m = balance_2to1(m.refined([m.leaves[4]]))
    return balance_2to1(m.refined([l for l in m.leaves if l.level == 1][:1]))


@pytest.mark.parametrize("p", [2, 4])
@pytest.mark.parametrize("gas", [GAS, VISC])
def test_free_stream_preserved_on_nonconforming_mesh(p, gas):
    s = DGSolver(_nonconforming(skew=0.05), p, gas)
    assert len(s.mort) > 0
    R = s.residual(s.uniform(STATE))
    assert np.abs(R).max() < 1e-10  # roundoff grows like p^2 / h


def test_free_stream_with_inflow_outflow_boundaries():
    m = ForestMesh.rectangle(0, 1, 0, 1, 4, 4)
    bcs = {t: BoundarySpec("supersonic_inflow", STATE) for t in ("left", "right", "bottom", "top")}
    s = DGSolver(m, 3, VISC, bcs)
    assert np.abs(s.residual(s.uniform(STATE))).max() < 1e-11


@pytest.mark.parametrize("p", [1, 3])
def test_br1_gradient_exact_for_linear_fields(p):
    m = balance_2to1(ForestMesh.rectangle(0, 2, 0, 1, 2, 2).refined([Leaf0()]))
    bcs = {t: BoundarySpec("supersonic_outflow") for t in ("left", "right", "bottom", "top")}
    s = DGSolver(m, p, GAS, bcs)
    x, y = s.X[:, 0], s.X[:, 1]
    U = np.stack([1 + 0.2 * x - 0.1 * y, 0.5 * x, 0.3 * y, 3 + x + y], axis=1)
    gx, gy = s.gradients(U)
    np.testing.assert_allclose(gx[:, 0], 0.2, atol=1e-12)
    np.testing.assert_allclose(gy[:, 0], -0.1, atol=1e-12)
    np.testing.assert_allclose(gx[:, 1], 0.5, atol=1e-12)
    np.testing.assert_allclose(gy[:, 2], 0.3, atol=1e-12)


def Leaf0():
    from unstart.mesh import Leaf
    return Leaf(0, 0, 0, 0)


def test_periodic_conservation_1000_steps():
    from unstart.timestep import CflSettings, compute_dt, ssprk54_step
    m = _nonconforming()
    s = DGSolver(m, 3, VISC)

    def init(x, y):
        rho = 1 + 0.2 * np.sin(2 * np.pi * x) * np.cos(2 * np.pi * y)
        return conservative_from_primitive(rho, 0.5 + 0 * x, 0.2 * np.sin(2 * np.pi * y), 1 + 0 * x, GAS)
    U = s.project_function(init)
    before = s.integrals(U)
    dt = compute_dt(m, U, VISC, 3, CflSettings(safety=0.5))
    for k in range(1000):
        U = ssprk54_step(U, s.residual, dt, k * dt)
    after = s.integrals(U)
    assert np.all(np.abs(after - before) <= 1e-10 * np.maximum(np.abs(before), 1.0))


def test_mortar_consistency_for_polynomial_traces():
    # a polynomial that fits on both sides passes the nonconforming face untouched
    s = DGSolver(_nonconforming(periodic=False),
                 3, GAS, {t: BoundarySpec("supersonic_outflow") for t in ("left", "right", "bottom", "top")})
    x, y = s.X[:, 0], s.X[:, 1]
    f = 1 + x**3 - 2 * x * y + y**2
    U = np.stack([f, f, f, 5 + f], axis=1)
    gx, gy = s.gradients(U)
    np.testing.assert_allclose(gx[:, 0], 3 * x**2 - 2 * y, atol=1e-10)
    np.testing.assert_allclose(gy[:, 0], -2 * x + 2 * y, atol=1e-10)


def test_shock_capturing_alpha_ramp():
    sc = ShockCapturing(alpha_max=0.5, eta_min=1.0, eta_max=3.0, alpha_min=1e-3)
    np.testing.assert_allclose(sc.alpha(np.array([0.0, 1.0, 2.0, 3.0, 10.0])), [0, 0, 0.25, 0.5, 0.5])


def test_boundary_spec_validation():
    with pytest.raises(ConfigurationError):
        BoundarySpec("slip")
    with pytest.raises(ConfigurationError):
        BoundarySpec("supersonic_inflow")
    with pytest.raises(ConfigurationError):
        BoundarySpec("jet_wall")


def test_no_slip_ghost_mirrors_velocity():
    U = conservative_from_primitive(1.0, 0.3, 0.2, 1.0, GAS)
    g = ghost_state(BoundarySpec("no_slip_wall"), U, np.array([0.0, 1.0]), GAS)
    np.testing.assert_allclose(0.5 * (g[1:3] + U[1:3]), 0.0)
    assert g[0] == U[0] and g[3] == U[3]


def test_sampler_interpolates_exactly():
    s = DGSolver(ForestMesh.rectangle(0, 1, 0, 1, 2, 2), 3, GAS,
                 {t: BoundarySpec("supersonic_outflow") for t in ("left", "right", "bottom", "top")})
    f = s.X[:, 0] ** 2 + s.X[:, 1]
    pts = np.array([[0.1, 0.2], [0.75, 0.5], [0.5, 0.99]])
    np.testing.assert_allclose(s.sampler(pts)(f), pts[:, 0] ** 2 + pts[:, 1], atol=1e-12)


def test_sampler_rejects_outside_point():
    from unstart.dg.solver import ProbeError
    s = DGSolver(ForestMesh.rectangle(0, 1, 0, 1, 1, 1), 2, GAS,
                 {t: BoundarySpec("supersonic_outflow") for t in ("left", "right", "bottom", "top")})
    with pytest.raises(ProbeError):
        s.sampler(np.array([[2.0, 0.5]]))


@given(st.floats(0.05, 0.45))
def test_limiter_hook_keeps_sod_positive(x0):
    from unstart.verification import SOD_LEFT, SOD_RIGHT
    from unstart.timestep import CflSettings, compute_dt, ssprk54_step
    m = ForestMesh.rectangle(0, 1, 0, 0.1, 10, 1, periodic=(False, True))
    s = DGSolver(m, 3, GAS, {"left": BoundarySpec("supersonic_outflow"),
                             "right": BoundarySpec("supersonic_outflow")}, shock_capturing=ShockCapturing())

    def init(x, y):
        left = x < 0.5 + x0 * 0
        return conservative_from_primitive(np.where(left, SOD_LEFT[0], SOD_RIGHT[0]), 0 * x, 0 * x,
                                           np.where(left, SOD_LEFT[2], SOD_RIGHT[2]), GAS)
    U = s.limit(s.project_function(init))
    for _ in range(5):
        dt = compute_dt(m, U, GAS, 3, CflSettings(safety=0.5))
        U = ssprk54_step(U, s.residual, dt, 0.0, stage_hook=s.limit)
        s.check(U)
