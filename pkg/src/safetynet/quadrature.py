"""Gauss-Legendre quadrature and linear cuboid element basis functions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np


class QuadratureError(ArithmeticError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    n: int
    nodes_1d: np.ndarray
    weights_1d: np.ndarray


def legendre_eval(n: int, x):
    """Return ``(P_n(x), P_n'(x))`` via the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    p_prev, p = np.ones_like(x), x.copy()
    if n == 0:
        return p_prev, np.zeros_like(x)
    for k in range(1, n):
        p_prev, p = p, ((2 * k + 1) * x * p - k * p_prev) / (k + 1)
    # derivative from P_n and P_{n-1}; valid away from x = +-1
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


@lru_cache(maxsize=None)
def legendre_rule(n: int) -> QuadratureRule:
    """n-point Gauss-Legendre rule on [-1, 1].

    Roots of ``P_n`` by Newton iteration from Chebyshev-like guesses, weights
    ``2 / ((1 - x^2) P_n'(x)^2)``.
    """
    if not 1 <= n <= 16:
        raise ValueError("legendre_rule supports 1 <= n <= 16")
    i = np.arange(1, n + 1)
    x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
    for _ in range(100):
        p, dp = legendre_eval(n, x)
        step = p / dp
        x = x - step
        if np.max(np.abs(step)) < 1e-15:
            break
    else:
        raise QuadratureError(f"Newton iteration for P_{n} roots did not converge")
    x = np.sort(x)
    _, dp = legendre_eval(n, x)
    # enforce exact symmetry of the rule
    x = 0.5 * (x - x[::-1])
    w = 2.0 / ((1.0 - x * x) * dp * dp)
    w = 0.5 * (w + w[::-1])
    x.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(n, x, w)


def tensor_quadrature(rule: QuadratureRule, d: int):
    """Row-major tensor-product nodes ``(n^d, d)`` and weights ``(n^d,)``."""
    if d < 1:
        raise ValueError("d must be >= 1")
    if rule.n ** d > 10**6:
        raise ValueError(f"tensor rule with {rule.n}^{d} nodes is too large")
    grids = np.meshgrid(*[rule.nodes_1d] * d, indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    wgrids = np.meshgrid(*[rule.weights_1d] * d, indexing="ij")
    weights = np.prod(np.stack([g.ravel() for g in wgrids], axis=1), axis=1)
    return nodes, weights


def basis_1d(vertex_index: int, xi):
    if vertex_index == 1:
        return 0.5 * (1.0 - np.asarray(xi, dtype=float))
    if vertex_index == 2:
        return 0.5 * (1.0 + np.asarray(xi, dtype=float))
    raise ValueError("vertex_index must be 1 or 2")


def basis_nd(vertex_multi_index, xi):
    """Product basis ``g_{i1..id}(xi) = prod_j g_{ij}(xi_j)``; ``xi`` may be ``(..., d)``."""
    xi = np.asarray(xi, dtype=float)
    idx = tuple(vertex_multi_index)
    if xi.shape[-1] != len(idx):
        raise ValueError("multi-index length must match the dimension of xi")
    out = np.ones(xi.shape[:-1])
    for j, i in enumerate(idx):
        out = out * basis_1d(i, xi[..., j])
    return out


def vertex_indices(d: int) -> list[tuple[int, ...]]:
    return list(itertools.product((1, 2), repeat=d))


def basis_matrix(d: int, xi) -> np.ndarray:
    """Values of all ``2^d`` basis functions at points ``xi``: shape ``(2^d, len(xi))``."""
    xi = np.atleast_2d(xi)
    return np.stack([basis_nd(v, xi) for v in vertex_indices(d)])


@dataclass(frozen=True)
class ElementTransform:
    center: np.ndarray
    sigma: float

    @property
    def jacobian_det(self) -> float:
        return (0.5 * self.sigma) ** len(self.center)

    def to_element(self, xi):
        return np.asarray(self.center) + 0.5 * self.sigma * np.asarray(xi, dtype=float)

    def to_reference(self, s):
        return (np.asarray(s, dtype=float) - np.asarray(self.center)) / (0.5 * self.sigma)


def map_to_element(tr: ElementTransform, xi):
    return tr.to_element(xi)


def map_to_reference(tr: ElementTransform, s):
    return tr.to_reference(s)


@dataclass(frozen=True)
class ElementQuadrature:
    """Everything needed to integrate ``g_k * r`` over unit-scaled elements.

    ``weighted_basis[k, i] = w_i * g_k(xi_i)``, so for an element of side
    ``sigma`` the variations are ``(sigma/2)^d * weighted_basis @ r``.
    """

    d: int
    order: int
    nodes: np.ndarray
    weights: np.ndarray
    weighted_basis: np.ndarray


@lru_cache(maxsize=None)
def element_quadrature(d: int, order: int) -> ElementQuadrature:
    nodes, weights = tensor_quadrature(legendre_rule(order), d)
    G = basis_matrix(d, nodes)
    return ElementQuadrature(d, order, nodes, weights, G * weights[None, :])
