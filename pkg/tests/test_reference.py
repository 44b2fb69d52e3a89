import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unstart.dg.reference import (ConfigurationError, build_reference_element, gll_nodes_weights,
                                  interpolation_matrix)


@pytest.mark.parametrize("p", range(1, 10))
def test_gll_quadrature_exact_to_degree_2p_minus_1(p):
    x, w = gll_nodes_weights(p)
    assert x[0] == -1 and x[-1] == 1
    for k in range(2 * p):
        exact = (1 - (-1) ** (k + 1)) / (k + 1)
        assert np.dot(w, x**k) == pytest.approx(exact, abs=1e-13)


def test_known_p2_nodes():
    x, w = gll_nodes_weights(2)
    np.testing.assert_allclose(x, [-1, 0, 1], atol=1e-15)
    np.testing.assert_allclose(w, [1 / 3, 4 / 3, 1 / 3], atol=1e-15)


@pytest.mark.parametrize("p", [0, -1, 99])
def test_invalid_order(p):
    with pytest.raises(ConfigurationError):
        build_reference_element(p)


@given(st.integers(1, 8), st.integers(0, 2**31 - 1))
def test_diff_matrix_exact_on_polynomials(p, seed):
    ref = build_reference_element(p)
    c = np.random.default_rng(seed).standard_normal(p + 1)
    f = np.polynomial.polynomial.polyval(ref.nodes, c)
    df = np.polynomial.polynomial.polyval(ref.nodes, np.polynomial.polynomial.polyder(c))
    np.testing.assert_allclose(ref.diff_matrix @ f, df, atol=1e-10 * max(1, np.abs(df).max()))


@pytest.mark.parametrize("p", [2, 5])
def test_summation_by_parts(p):
    ref = build_reference_element(p)
    M = np.diag(ref.weights)
    Q = M @ ref.diff_matrix
    B = np.zeros_like(Q)
    B[0, 0], B[-1, -1] = -1, 1
    np.testing.assert_allclose(Q + Q.T, B, atol=1e-12)


@pytest.mark.parametrize("p", [3, 6])
def test_interpolation_and_half_operators(p):
    ref = build_reference_element(p)
    xi = np.linspace(-1, 1, 7)
    f = ref.nodes**p - 2 * ref.nodes
    np.testing.assert_allclose(interpolation_matrix(ref.nodes, xi) @ f, xi**p - 2 * xi, atol=1e-12)
    # prolongation then projection returns the polynomial
    back = sum(ref.from_half[k] @ (ref.to_half[k] @ f) for k in (0, 1))
    np.testing.assert_allclose(back, f, atol=1e-12)
