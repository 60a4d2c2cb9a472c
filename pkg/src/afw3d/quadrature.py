"""Quadrature on the reference tet, triangle and interval.

Rules come from tensorized Gauss-Legendre points pushed through the
collapsed-coordinate (Duffy) map, with the Jacobian absorbed into the
weights.  Point counts are not minimal but the exactness degree is
guaranteed, which is what the moment systems need.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_DEGREE = 30


class DegreeTooHigh(Exception):
    pass


@dataclass(frozen=True)
class QuadRule:
    dim: int
    points: np.ndarray   # (n, dim), reference coordinates
    weights: np.ndarray  # (n,), positive
    degree: int          # integrates polynomials up to this degree exactly


def _gauss01(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def rule_for(dim, degree):
    """Rule on the reference simplex exact to the requested degree."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    if degree > MAX_DEGREE:
        raise DegreeTooHigh(f"degree {degree} exceeds cap {MAX_DEGREE}")
    if dim == 1:
        n = (degree + 2) // 2
        x, w = _gauss01(max(n, 1))
        return QuadRule(1, x.reshape(-1, 1), w, degree)
    if dim == 2:
        # x = u, y = v (1 - u); Jacobian (1 - u) raises the u-degree by one
        n = (degree + 3) // 2
        u, wu = _gauss01(max(n, 1))
        v, wv = _gauss01(max(n, 1))
        U, V = np.meshgrid(u, v, indexing="ij")
        WU, WV = np.meshgrid(wu, wv, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        w = (WU * WV * (1.0 - U)).ravel()
        return QuadRule(2, np.column_stack([x, y]), w, degree)
    if dim == 3:
        # x = u, y = v (1 - u), z = w (1 - u)(1 - v); Jacobian (1-u)^2 (1-v)
        n = (degree + 4) // 2
        u, wu = _gauss01(max(n, 1))
        v, wv = _gauss01(max(n, 1))
        t, wt = _gauss01(max(n, 1))
        U, V, T = np.meshgrid(u, v, t, indexing="ij")
        WU, WV, WT = np.meshgrid(wu, wv, wt, indexing="ij")
        x = U.ravel()
        y = (V * (1.0 - U)).ravel()
        z = (T * (1.0 - U) * (1.0 - V)).ravel()
        w = (WU * WV * WT * (1.0 - U) ** 2 * (1.0 - V)).ravel()
        return QuadRule(3, np.column_stack([x, y, z]), w, degree)
    raise ValueError(f"unsupported dimension {dim}")
