import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unstart.dg.reference import build_reference_element
from unstart.mesh import (ForestMesh, Leaf, RefinementControl, TopologyError, adapt, balance_2to1,
                          lohner_indicator, transfer)


def _integral(mesh, ref, U):
    from unstart.dg.solver import DGSolver
    from unstart.gas import GasModel
    return DGSolver(mesh, ref.order, GasModel(1.4, 1.0)).integrals(U)


def test_rectangle_counts_and_tags():
    m = ForestMesh.rectangle(0, 2, 0, 1, 4, 2)
    assert len(m) == 8
    tags = {t for row in m.boundary_tags for t in row if t}
    assert tags == {"left", "right", "bottom", "top"}


def test_periodic_rectangle_has_no_boundary():
    m = ForestMesh.rectangle(0, 1, 0, 1, 3, 3, periodic=(True, True))
    assert all(t is None for row in m.boundary_tags for t in row)


def test_leaf_family():
    leaf = Leaf(0, 1, 1, 0)
    kids = leaf.children()
    assert len(kids) == 4 and all(k.parent() == leaf for k in kids)


def test_refine_one_corner_balances():
    m = ForestMesh.rectangle(0, 1, 0, 1, 2, 2)
    target = m.leaves[0]
    for _ in range(3):
        m = balance_2to1(m.refined([target]))
        target = [l for l in m.leaves if l.tree == 0 and l.level == max(m.levels)][0]
    assert m.is_balanced()
    assert max(m.levels) == 3


@given(st.integers(0, 2**31 - 1))
def test_random_refinement_stays_balanced(seed):
    rng = np.random.default_rng(seed)
    m = ForestMesh.rectangle(0, 1, 0, 1, 2, 2, periodic=(True, False))
    for _ in range(3):
        pick = [l for l in m.leaves if rng.random() < 0.3]
        m = balance_2to1(m.refined(pick))
    assert m.is_balanced()


def test_transfer_roundtrip_is_exact_for_polynomials():
    ref = build_reference_element(3)
    m = ForestMesh.rectangle(0, 1, 0, 1, 2, 2)
    X = m.node_coordinates(ref)
    U = np.stack([X[:, 0] ** 3 + X[:, 1], X[:, 0] * X[:, 1], 1 + 0 * X[:, 0], X[:, 1] ** 2], axis=1)
    fine = m.refined(m.leaves[:1])
    Uf = transfer(m, fine, ref, U)
    Xf = fine.node_coordinates(ref)
    np.testing.assert_allclose(Uf[:, 0], Xf[:, 0] ** 3 + Xf[:, 1], atol=1e-13)
    back = transfer(fine, m, ref, Uf)
    np.testing.assert_allclose(back, U, atol=1e-13)


@given(st.integers(0, 2**31 - 1))
def test_adapt_conserves_integrals(seed):
    rng = np.random.default_rng(seed)
    ref = build_reference_element(3)
    m = ForestMesh.rectangle(0, 1, 0, 1, 3, 3, periodic=(True, True))
    X = m.node_coordinates(ref)
    c = rng.uniform(0.2, 0.45)
    rho = 1 + 0.8 * np.tanh((X[:, 0] - c) / 0.03)
    U = np.stack([rho + 1, rho * 0.3, -rho * 0.1, 2 * rho + 3], axis=1)
    ctrl = RefinementControl(refine_threshold=0.3, coarsen_threshold=0.05, max_level=2)
    before = _integral(m, ref, U)
    for _ in range(3):
        m2, U2 = adapt(m, ref, U, ctrl)
        after = _integral(m2, ref, U2)
        assert np.all(np.abs(after - before) <= 1e-12 * np.abs(before))
        m, U = m2, U2
    assert m.is_balanced()


def test_adapt_coarsens_smooth_regions():
    ref = build_reference_element(2)
    m = ForestMesh.rectangle(0, 1, 0, 1, 2, 2, level=1)
    U = np.ones((len(m), 4, 3, 3))
    m2, U2 = adapt(m, ref, U, RefinementControl(min_level=0, max_level=2, epsilon=1.0))
    assert len(m2) == 4
    np.testing.assert_allclose(U2, 1.0)


def test_lohner_indicator_fires_at_steps_not_on_linear():
    ref = build_reference_element(4)
    m = ForestMesh.rectangle(0, 1, 0, 1, 8, 1)
    X = m.node_coordinates(ref)
    lin = lohner_indicator(m, ref, 1 + X[:, 0], epsilon=1e-3)
    assert lin.max() < 1e-8
    step = lohner_indicator(m, ref, 1 + np.tanh((X[:, 0] - 0.5) / 0.01), epsilon=1e-3)
    assert step.max() > 1.0


def test_refinement_control_validation():
    with pytest.raises(ValueError):
        RefinementControl(refine_threshold=0.1, coarsen_threshold=0.2)


def test_dangling_face_rejected():
    m = ForestMesh.rectangle(0, 1, 0, 1, 1, 1)
    tags = [[None, "a", "b", "c"]]
    with pytest.raises(TopologyError):
        ForestMesh(m.corners, m.links, tags)


def test_export_json(tmp_path):
    import json
    m = ForestMesh.rectangle(0, 1, 0, 1, 2, 1)
    p = tmp_path / "mesh.json"
    m.export(p)
    doc = json.loads(p.read_text())
    assert doc["n_elements"] == 2
