"""Gauss quadrature rules on the reference segment, square and triangle.

Reference domains are fixed once for the whole library:

* segment  ``[-1, 1]``        (measure 2),
* square   ``[0, 1] x [0, 1]`` (measure 1),
* triangle ``{x, y >= 0, x + y <= 1}`` (measure 1/2).

All rules have strictly positive weights. The square rule is a tensor
product of Gauss-Legendre segment rules; the triangle rule is a collapsed
Gauss-Legendre x Gauss-Jacobi tensor rule, exact up to the requested total
degree.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi

MAX_SEGMENT_POINTS = 10
MAX_TRIANGLE_DEGREE = 12


class QuadratureError(ValueError):
    """Unsupported point count or polynomial degree."""


@dataclass(frozen=True)
class QuadratureRule:
    """Quadrature points and weights on one of the reference domains.

    Attributes
    ----------
    domain : str
        One of ``"segment"``, ``"square"``, ``"triangle"``.
    points : ndarray
        Shape ``(n,)`` for the segment, ``(n, 2)`` otherwise.
    weights : ndarray
        Shape ``(n,)``, strictly positive, summing to the domain measure.
    degree : int
        Total polynomial degree integrated exactly.
    """

    domain: str
    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def segment_rule(n_points):
    """Gauss-Legendre rule on [-1, 1], exact for degree <= 2 n - 1."""
    if not 1 <= n_points <= MAX_SEGMENT_POINTS:
        raise QuadratureError(f"segment rule needs 1 <= n <= "
                              f"{MAX_SEGMENT_POINTS}, got {n_points}")
    x, w = np.polynomial.legendre.leggauss(n_points)
    return QuadratureRule("segment", x, w, 2 * n_points - 1)


def segment01_rule(n_points):
    """Gauss-Legendre rule mapped to the unit interval [0, 1]."""
    base = segment_rule(n_points)
    return QuadratureRule("segment", (base.points + 1.0) / 2.0,
                          base.weights / 2.0, base.degree)


def square_rule(n_points_per_axis):
    """Tensor Gauss rule on the unit square, exact for Q_{2n-1, 2n-1}."""
    seg = segment01_rule(n_points_per_axis)
    x, y = np.meshgrid(seg.points, seg.points, indexing="ij")
    w = np.outer(seg.weights, seg.weights)
    pts = np.column_stack([x.ravel(), y.ravel()])
    return QuadratureRule("square", pts, w.ravel(), seg.degree)


def triangle_rule(degree):
    """Collapsed tensor rule on the unit triangle, exact to total `degree`.

    Uses Gauss-Legendre in the collapsed direction and Gauss-Jacobi(1, 0)
    in the other, which absorbs the (1 - y) Jacobian of the Duffy map
    x = s (1 - y) exactly.
    """
    if not 0 <= degree <= MAX_TRIANGLE_DEGREE:
        raise QuadratureError(f"triangle rule needs 0 <= degree <= "
                              f"{MAX_TRIANGLE_DEGREE}, got {degree}")
    n = max(1, (degree + 2) // 2)
    seg = segment01_rule(n)
    # Gauss-Jacobi on [-1, 1] for weight (1 - t); mapped to [0, 1] the
    # pair (y_j, b_j / 4) integrates (1 - y) g(y) exactly to degree 2n - 1.
    t, b = roots_jacobi(n, 1.0, 0.0)
    y1 = (t + 1.0) / 2.0
    wy = b / 4.0
    s, y = np.meshgrid(seg.points, y1, indexing="ij")
    ws, wyy = np.meshgrid(seg.weights, wy, indexing="ij")
    pts = np.column_stack([(s * (1.0 - y)).ravel(), y.ravel()])
    w = (ws * wyy).ravel()
    return QuadratureRule("triangle", pts, w, 2 * n - 1)
