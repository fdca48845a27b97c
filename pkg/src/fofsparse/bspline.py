"""Univariate B-spline bases on clamped, evenly spaced knot vectors.

Bases are evaluated with the Cox-de Boor recursion. Grids carry trapezoidal
quadrature weights so that every integral in the package is approximated the
same way.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "Grid",
    "BSplineBasis",
    "make_grid",
    "grid_from_points",
    "make_basis",
    "eval_basis",
    "trapezoid_weights",
]

# Relative slack used when checking that points lie inside a domain.
_DOMAIN_RTOL = 1e-12


def trapezoid_weights(points: ArrayLike) -> NDArray[np.float64]:
    """Trapezoidal quadrature weights for an arbitrary ascending point set."""
    pts = np.asarray(points, dtype=float)
    h = np.diff(pts)
    w = np.zeros_like(pts)
    w[:-1] += h / 2.0
    w[1:] += h / 2.0
    return w


@dataclass(frozen=True, eq=False)
class Grid:
    """Observation grid with quadrature weights.

    Attributes
    ----------
    points : ndarray of shape (G,)
        Strictly increasing coordinates.
    weights : ndarray of shape (G,)
        Positive quadrature weights; they sum to the domain length.
    """

    points: NDArray[np.float64]
    weights: NDArray[np.float64]

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValueError("a grid needs at least two points")
        if w.shape != pts.shape:
            raise ValueError("weights must align with points")
        if not np.all(np.diff(pts) > 0):
            raise ValueError("grid points must be strictly increasing")
        if not np.all(w > 0):
            raise ValueError("quadrature weights must be positive")
        pts.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])

    def integrate(self, values: ArrayLike, axis: int = -1) -> NDArray[np.float64]:
        """Integrate sampled values along ``axis`` with the grid weights."""
        return np.tensordot(np.asarray(values, dtype=float), self.weights, axes=([axis], [0]))

    def same_as(self, other: "Grid") -> bool:
        return self.size == other.size and np.allclose(self.points, other.points, rtol=0, atol=1e-12)


def make_grid(domain: tuple[float, float], num_points: int) -> Grid:
    """Equispaced grid on ``domain`` with trapezoidal weights."""
    if num_points < 2:
        raise ValueError("num_points must be at least 2")
    a, b = map(float, domain)
    if not b > a:
        raise ValueError(f"degenerate domain {domain!r}")
    pts = np.linspace(a, b, num_points)
    return Grid(pts, trapezoid_weights(pts))


def grid_from_points(points: ArrayLike) -> Grid:
    """Wrap observed points (possibly unevenly spaced) as a :class:`Grid`."""
    pts = np.asarray(points, dtype=float)
    return Grid(pts, trapezoid_weights(pts))


@dataclass(frozen=True, eq=False)
class BSplineBasis:
    """Order-``order`` B-spline basis with a clamped knot vector.

    The knot vector has ``num_basis + order`` entries: each boundary knot is
    repeated ``order`` times and ``num_basis - order`` interior knots are
    evenly spaced.
    """

    order: int
    num_basis: int
    domain: tuple[float, float]
    knots: NDArray[np.float64]

    @property
    def breakpoints(self) -> NDArray[np.float64]:
        """Distinct knots ``a = tau_0 < ... < tau_K = b`` (``num_basis - order + 2`` values)."""
        d = self.order
        return self.knots[d - 1 : self.num_basis + 1]

    @property
    def interior_knots(self) -> NDArray[np.float64]:
        return self.knots[self.order : self.num_basis]

    @property
    def num_spans(self) -> int:
        return self.num_basis - self.order + 1

    def support(self, m: int) -> tuple[float, float]:
        """Closed support interval of basis function ``m`` (0-based)."""
        return float(self.knots[m]), float(self.knots[m + self.order])

    def __call__(self, points: ArrayLike) -> NDArray[np.float64]:
        return eval_basis(self, points)


def make_basis(domain: tuple[float, float], num_basis: int, order: int) -> BSplineBasis:
    """Build a clamped basis with evenly spaced interior knots.

    Parameters
    ----------
    domain : (float, float)
        Closed interval ``[a, b]`` with ``a < b``.
    num_basis : int
        Number of basis functions; must exceed ``order``.
    order : int
        Spline order (degree + 1), at least 1.
    """
    order = int(order)
    num_basis = int(num_basis)
    if order < 1:
        raise ValueError("order must be at least 1")
    if num_basis <= order:
        raise ValueError(
            f"num_basis ({num_basis}) must exceed order ({order}) so that interior knots exist"
        )
    a, b = map(float, domain)
    if not (np.isfinite(a) and np.isfinite(b) and b > a):
        raise ValueError(f"degenerate domain {domain!r}")
    n_interior = num_basis - order
    interior = a + (b - a) * np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.concatenate([np.full(order, a), interior, np.full(order, b)])
    knots.setflags(write=False)
    return BSplineBasis(order=order, num_basis=num_basis, domain=(a, b), knots=knots)


def eval_basis(basis: BSplineBasis, grid: Grid | ArrayLike) -> NDArray[np.float64]:
    """Evaluate every basis function at the grid points.

    Returns
    -------
    ndarray of shape (num_basis, num_points)
        Entry ``(m, g)`` is the ``m``-th basis function at point ``g``.
    """
    x = np.asarray(grid.points if isinstance(grid, Grid) else grid, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x).ravel()
    a, b = basis.domain
    slack = _DOMAIN_RTOL * (b - a)
    if np.any(x < a - slack) or np.any(x > b + slack) or not np.all(np.isfinite(x)):
        bad = x[(x < a - slack) | (x > b + slack) | ~np.isfinite(x)]
        raise ValueError(f"points outside the basis domain [{a}, {b}]: {bad[:5]}")
    x = np.clip(x, a, b)
    t = basis.knots
    d = basis.order
    n_knots = t.size

    # Order 1: indicators of [t_i, t_{i+1}); the right endpoint is assigned to
    # the last nondegenerate span so that partition of unity holds at b.
    last = basis.num_basis - 1
    span = np.searchsorted(t, x, side="right") - 1
    span = np.minimum(span, last)
    B = np.zeros((n_knots - 1, x.size))
    B[span, np.arange(x.size)] = 1.0

    for k in range(2, d + 1):
        nxt = np.zeros((n_knots - k, x.size))
        for i in range(n_knots - k):
            left_den = t[i + k - 1] - t[i]
            right_den = t[i + k] - t[i + 1]
            if left_den > 0:
                nxt[i] += (x - t[i]) / left_den * B[i]
            if right_den > 0:
                nxt[i] += (t[i + k] - x) / right_den * B[i + 1]
        B = nxt
    out = B[: basis.num_basis]
    return out[:, 0] if scalar else out
