"""Gauss-Lobatto-Legendre reference element and the 1-D operators built on it."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as L

MAX_ORDER = 15


class ConfigurationError(ValueError):
    pass


def gll_nodes_weights(p: int):
    if p == 1:
        return np.array([-1.0, 1.0]), np.array([1.0, 1.0])
    cP = np.zeros(p + 1)
    cP[p] = 1.0
    interior = np.sort(L.legroots(L.legder(cP)).real)
    x = np.concatenate([[-1.0], interior, [1.0]])
    # Newton polish on (1-x^2) P_p'(x)
    for _ in range(3):
        dP = L.legval(x[1:-1], L.legder(cP))
        d2P = L.legval(x[1:-1], L.legder(cP, 2))
        x[1:-1] -= dP / d2P
    x = 0.5 * (x - x[::-1])
    Pp = L.legval(x, cP)
    w = 2.0 / (p * (p + 1) * Pp**2)
    return x, w


def barycentric_weights(x):
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    return 1.0 / diff.prod(axis=1)


def differentiation_matrix(x):
    wb = barycentric_weights(x)
    n = len(x)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                D[i, j] = wb[j] / wb[i] / (x[i] - x[j])
        D[i, i] = -D[i].sum()
    return D


def interpolation_matrix(x, xi):
    """Rows evaluate the Lagrange basis on nodes ``x`` at points ``xi``."""
    x = np.asarray(x, dtype=float)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    wb = barycentric_weights(x)
    diff = xi[:, None] - x[None, :]
    exact = np.isclose(diff, 0.0, atol=1e-15, rtol=0.0)
    diff[exact] = 1.0
    M = wb[None, :] / diff
    M /= M.sum(axis=1, keepdims=True)
    rows = exact.any(axis=1)
    M[rows] = exact[rows].astype(float)
    return M


@dataclass(frozen=True)
class ReferenceElement:
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray
    # mortar / refinement operators, indexed by half (0 = lower, 1 = upper)
    to_half: tuple = field(repr=False)
    from_half: tuple = field(repr=False)

    @property
    def n(self) -> int:
        return self.order + 1

    @property
    def weights2d(self):
        return np.outer(self.weights, self.weights)

    def interp(self, xi):
        return interpolation_matrix(self.nodes, xi)


@lru_cache(maxsize=None)
def build_reference_element(p: int) -> ReferenceElement:
    if not isinstance(p, (int, np.integer)) or not 1 <= p <= MAX_ORDER:
        raise ConfigurationError(f"polynomial order must be in [1, {MAX_ORDER}], got {p!r}")
    p = int(p)
    x, w = gll_nodes_weights(p)
    D = differentiation_matrix(x)

    # exact quadrature for the L2 projections
    gx, gw = L.leggauss(p + 2)
    V = interpolation_matrix(x, gx)
    mass = V.T @ (gw[:, None] * V)
    to_half, from_half = [], []
    for k in (0, 1):
        # child coordinate s in [-1,1] maps to parent xi = (s + 2k - 1)/2
        to_half.append(interpolation_matrix(x, 0.5 * (x + 2 * k - 1)))
        Vc = interpolation_matrix(x, gx)  # child basis at child Gauss points
        Vp = interpolation_matrix(x, 0.5 * (gx + 2 * k - 1))  # parent basis there
        # parent coefficients = M^-1 * (1/2) * Vp^T W Vc
        from_half.append(np.linalg.solve(mass, 0.5 * Vp.T @ (gw[:, None] * Vc)))
    for arr in (x, w, D, *to_half, *from_half):
        arr.setflags(write=False)
    return ReferenceElement(p, x, w, D, tuple(to_half), tuple(from_half))
