"""Gaussian quadrature on the reference triangle and the reference edge.

The reference triangle has vertices (0, 0), (1, 0), (0, 1) and area 1/2;
the reference edge is [0, 1].  Triangle rules are collapsed (Duffy)
tensor products of a Gauss-Jacobi rule and a Gauss-Legendre rule, so all
weights are positive and any exactness degree is available.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 40


class QuadratureError(ValueError):
    """Requested rule is not available."""


@dataclass(frozen=True, eq=False)
class QuadRule:
    """Quadrature rule on a reference cell.

    Attributes
    ----------
    points : ndarray
        ``(nq, 2)`` reference coordinates for triangle rules, ``(nq,)``
        parameters in [0, 1] for edge rules.
    weights : ndarray
        ``(nq,)`` positive weights summing to the reference measure.
    exactness : int
        Polynomial degree integrated exactly.
    """

    points: np.ndarray
    weights: np.ndarray
    exactness: int

    @property
    def npoints(self):
        return len(self.weights)

    @property
    def barycentric(self):
        """Barycentric coordinates ``(nq, 3)`` of a triangle rule."""
        x, y = self.points[:, 0], self.points[:, 1]
        return np.column_stack([1.0 - x - y, x, y])


def _check(degree):
    degree = int(degree)
    if degree < 0:
        raise QuadratureError(f"negative quadrature degree {degree}")
    if degree > MAX_DEGREE:
        raise QuadratureError(
            f"quadrature degree {degree} exceeds supported maximum {MAX_DEGREE}")
    return degree


def _frozen(*arrays):
    for a in arrays:
        a.setflags(write=False)


@lru_cache(maxsize=None)
def edge_rule(degree):
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    degree = _check(degree)
    n = max(1, -(-(degree + 1) // 2))
    xi, w = roots_legendre(n)
    pts = 0.5 * (xi + 1.0)
    wts = 0.5 * w
    _frozen(pts, wts)
    return QuadRule(pts, wts, 2 * n - 1)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Collapsed Gauss rule on the reference triangle.

    ``x = s``, ``y = t (1 - s)`` with a Gauss-Jacobi(1, 0) rule in ``s``
    absorbing the Jacobian ``1 - s`` and Gauss-Legendre in ``t``.
    """
    degree = _check(degree)
    n = max(1, -(-(degree + 1) // 2))
    xs, ws = roots_jacobi(n, 1.0, 0.0)
    s = 0.5 * (xs + 1.0)
    ws = 0.25 * ws
    xt, wt = roots_legendre(n)
    t = 0.5 * (xt + 1.0)
    wt = 0.5 * wt
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    pts = np.column_stack([S.ravel(), (T * (1.0 - S)).ravel()])
    wts = W.ravel()
    _frozen(pts, wts)
    return QuadRule(pts, wts, 2 * n - 1)
