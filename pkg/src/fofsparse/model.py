"""Functional samples, the vectorized regression problem and fitted kernels."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.integrate import cumulative_trapezoid

from .bspline import BSplineBasis, Grid, eval_basis
from .groups import GroupStructure, RectangleSet, zero_rectangles

__all__ = [
    "FunctionalSample",
    "DesignProblem",
    "TensorKernel",
    "center",
    "build_design",
    "predict",
    "build_ar_pairs",
    "logh_transform",
    "logh_inverse",
]


@dataclass(frozen=True, eq=False)
class FunctionalSample:
    """``n`` curves sampled on a shared grid.

    ``mean_curve`` is set by :func:`center` and records the pointwise mean that
    was removed.
    """

    values: NDArray[np.float64]
    grid: Grid
    mean_curve: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float, ndmin=2)
        if v.ndim != 2:
            raise ValueError("values must be an (n, G) matrix")
        if v.shape[1] != self.grid.size:
            raise ValueError(f"curves have {v.shape[1]} points but the grid has {self.grid.size}")
        if not np.all(np.isfinite(v)):
            raise ValueError("curve values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.mean_curve is not None:
            mc = np.asarray(self.mean_curve, dtype=float)
            if mc.shape != (self.grid.size,):
                raise ValueError("mean_curve must have one value per grid point")
            object.__setattr__(self, "mean_curve", mc)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def centered(self) -> bool:
        return self.mean_curve is not None

    def subset(self, index: ArrayLike) -> "FunctionalSample":
        idx = np.asarray(index)
        if idx.dtype != bool:
            idx = idx.astype(np.intp)
        return FunctionalSample(self.values[idx], self.grid, self.mean_curve)

    def uncentered(self) -> "FunctionalSample":
        if self.mean_curve is None:
            return self
        return FunctionalSample(self.values + self.mean_curve, self.grid)


def center(sample: FunctionalSample) -> FunctionalSample:
    """Subtract the pointwise mean curve and remember it."""
    if sample.n < 2:
        raise ValueError("centering needs at least two curves")
    raw = sample.uncentered().values
    mean = raw.mean(axis=0)
    return FunctionalSample(raw - mean, sample.grid, mean_curve=mean)


@dataclass(frozen=True, eq=False)
class TensorKernel:
    """Kernel ``psi(t, s) = phi(t)^T Psi theta(s)``.

    When the kernel was estimated on centered data, ``x_mean``/``y_mean`` hold
    the removed covariate and response means (on the training grids) so that
    :func:`predict` returns predictions on the original scale.
    """

    Psi: NDArray[np.float64]
    basis_t: BSplineBasis
    basis_s: BSplineBasis
    x_mean: NDArray[np.float64] | None = None
    y_mean: NDArray[np.float64] | None = None

    def __post_init__(self) -> None:
        P = np.asarray(self.Psi, dtype=float)
        shape = (self.basis_t.num_basis, self.basis_s.num_basis)
        if P.ndim == 1 and P.size == shape[0] * shape[1]:
            P = P.reshape(shape, order="F")
        if P.shape != shape:
            raise ValueError(f"Psi has shape {P.shape}, expected {shape}")
        object.__setattr__(self, "Psi", P)

    def __call__(self, t: ArrayLike, s: ArrayLike) -> NDArray[np.float64]:
        """Pointwise evaluation; ``t`` and ``s`` broadcast against each other."""
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        Ft = eval_basis(self.basis_t, t.ravel())
        Fs = eval_basis(self.basis_s, s.ravel())
        return np.einsum("mg,ml,lg->g", Ft, self.Psi, Fs).reshape(t.shape)

    def surface(self, t: ArrayLike, s: ArrayLike) -> NDArray[np.float64]:
        """Kernel on the tensor grid ``t x s`` as a ``(len(t), len(s))`` matrix."""
        return eval_basis(self.basis_t, np.asarray(t, float)).T @ self.Psi @ eval_basis(
            self.basis_s, np.asarray(s, float)
        )

    def zero_set(self, structure: GroupStructure, threshold: float = 0.0) -> RectangleSet:
        return zero_rectangles(
            self.Psi, structure, threshold, self.basis_t.breakpoints, self.basis_s.breakpoints
        )


@dataclass(frozen=True, eq=False)
class DesignProblem:
    """Vectorized problem ``y = Z psi + e`` with ``Z = kron(Theta^T, X W Phi^T)``.

    ``Z`` is never needed by the solver in dense form: the Gram matrix, ``Z^T y``
    and products with ``Z`` all follow from the Kronecker factors ``scores =
    X W Phi^T`` (``n x M``, quadrature-weighted covariate scores) and
    ``response_basis = Theta`` (``L x G_s``, the response basis on its grid).
    """

    scores: NDArray[np.float64]
    response_basis: NDArray[np.float64]
    Y: NDArray[np.float64]
    basis_t: BSplineBasis
    basis_s: BSplineBasis
    grid_t: Grid
    grid_s: Grid
    quadrature_weighted: bool = True
    x_mean: NDArray[np.float64] | None = None
    y_mean: NDArray[np.float64] | None = None

    @property
    def n_rows(self) -> int:
        return self.Y.size

    @property
    def n_coef(self) -> int:
        return self.scores.shape[1] * self.response_basis.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.scores.shape[1], self.response_basis.shape[0]

    @cached_property
    def y(self) -> NDArray[np.float64]:
        return self.Y.ravel(order="F")

    @cached_property
    def Z(self) -> NDArray[np.float64]:
        return np.kron(self.response_basis.T, self.scores)

    @cached_property
    def gram(self) -> NDArray[np.float64]:
        return np.kron(self.response_basis @ self.response_basis.T, self.scores.T @ self.scores)

    @cached_property
    def zty(self) -> NDArray[np.float64]:
        return (self.scores.T @ self.Y @ self.response_basis.T).ravel(order="F")

    def matvec(self, psi: ArrayLike) -> NDArray[np.float64]:
        """``Z @ psi`` without forming ``Z``."""
        P = np.asarray(psi, dtype=float).reshape(self.shape, order="F")
        return (self.scores @ P @ self.response_basis).ravel(order="F")

    def columns(self, index: ArrayLike) -> NDArray[np.float64]:
        """Selected columns of ``Z``."""
        idx = np.asarray(index)
        M = self.scores.shape[1]
        m, l = idx % M, idx // M
        # Column m + l*M of kron(Theta^T, scores) is kron(Theta[l], scores[:, m]).
        return (self.response_basis.T[:, None, l] * self.scores[None, :, m]).reshape(-1, idx.size)

    def kernel(self, psi: ArrayLike) -> TensorKernel:
        return TensorKernel(
            np.asarray(psi, float).reshape(self.shape, order="F"),
            self.basis_t,
            self.basis_s,
            x_mean=self.x_mean,
            y_mean=self.y_mean,
        )


def _check_domain(grid: Grid, basis: BSplineBasis, name: str) -> None:
    a, b = basis.domain
    lo, hi = grid.domain
    tol = 1e-9 * (b - a)
    if abs(lo - a) > tol or abs(hi - b) > tol:
        raise ValueError(f"{name} grid spans [{lo}, {hi}] but its basis is defined on [{a}, {b}]")


def build_design(
    x: FunctionalSample,
    y: FunctionalSample,
    basis_t: BSplineBasis,
    basis_s: BSplineBasis,
) -> DesignProblem:
    """Assemble the regression problem for ``y_i(s) = int x_i(t) psi(t, s) dt + e_i(s)``.

    The t-integral uses the trapezoidal weights of ``x.grid``; response grid
    points enter the loss unweighted.
    """
    if x.n != y.n:
        raise ValueError(f"covariate has {x.n} curves but response has {y.n}")
    _check_domain(x.grid, basis_t, "covariate")
    _check_domain(y.grid, basis_s, "response")
    Phi = eval_basis(basis_t, x.grid)
    Theta = eval_basis(basis_s, y.grid)
    scores = (x.values * x.grid.weights) @ Phi.T
    return DesignProblem(
        scores=scores,
        response_basis=Theta,
        Y=y.values,
        basis_t=basis_t,
        basis_s=basis_s,
        grid_t=x.grid,
        grid_s=y.grid,
        x_mean=x.mean_curve,
        y_mean=y.mean_curve,
    )


def predict(kernel: TensorKernel, x: FunctionalSample, s_grid: Grid) -> FunctionalSample:
    """Predicted responses ``sum_h w_h x_i(t_h) psi(t_h, s_g)`` on ``s_grid``.

    Curves are taken on their original scale: if the kernel records training
    means, the covariate mean is removed first and the response mean is added
    back (interpolated onto ``s_grid`` when the grids differ).
    """
    a, b = kernel.basis_t.domain
    lo, hi = x.grid.domain
    if lo < a - 1e-9 * (b - a) or hi > b + 1e-9 * (b - a):
        raise ValueError(f"covariate grid [{lo}, {hi}] leaves the kernel domain [{a}, {b}]")
    X = x.uncentered().values
    if kernel.x_mean is not None:
        X = X - _on_grid(kernel.x_mean, x.grid)
    Phi = eval_basis(kernel.basis_t, x.grid)
    Theta = eval_basis(kernel.basis_s, s_grid)
    Yhat = (X * x.grid.weights) @ Phi.T @ kernel.Psi @ Theta
    if kernel.y_mean is not None:
        Yhat = Yhat + _on_grid(kernel.y_mean, s_grid)
    return FunctionalSample(Yhat, s_grid)


def _on_grid(curve: NDArray[np.float64], grid: Grid) -> NDArray[np.float64]:
    if curve.size == grid.size:
        return curve
    src = np.linspace(grid.points[0], grid.points[-1], curve.size)
    return np.interp(grid.points, src, curve)


def build_ar_pairs(series: FunctionalSample) -> tuple[FunctionalSample, FunctionalSample]:
    """Lag-one pairs ``(y_{i-1}, y_i)`` from a temporally ordered series."""
    if series.n < 2:
        raise ValueError("an autoregressive fit needs at least two curves")
    raw = series.uncentered()
    return raw.subset(np.arange(series.n - 1)), raw.subset(np.arange(1, series.n))


_EXP_LIMIT = np.log(np.finfo(float).max) - 1.0


def logh_transform(z: FunctionalSample) -> FunctionalSample:
    """Map unconstrained curves to increasing curves in ``[0, 1)``.

    ``y(s) = 1 - exp(-int_a^s exp(z(u)) du)`` with the inner integral by
    cumulative trapezoid from the left endpoint. Once the inner integral
    exceeds about 37 the output rounds to exactly 1 in double precision.
    """
    Zv = z.uncentered().values
    if np.any(Zv > _EXP_LIMIT):
        raise OverflowError("exp(z) exceeds the floating point range")
    F = cumulative_trapezoid(np.exp(Zv), z.grid.points, axis=1, initial=0.0)
    return FunctionalSample(-np.expm1(-F), z.grid)


def logh_inverse(y: FunctionalSample) -> FunctionalSample:
    """Inverse of :func:`logh_transform` for strictly increasing curves in ``[0, 1)``.

    The cumulative hazard ``-log(1 - y)`` is differenced and the trapezoid
    recursion is inverted exactly. Its one free constant (the hazard at the
    left endpoint) is chosen to minimize the fourth-difference roughness of
    the recovered hazard, which removes the sawtooth the recursion would
    otherwise carry.
    """
    Yv = y.uncentered().values
    if np.any(Yv < 0) or np.any(Yv >= 1):
        raise ValueError("logH inverse needs values in [0, 1)")
    dY = np.diff(Yv, axis=1)
    if np.any(dY <= 0):
        i, g = np.argwhere(dY <= 0)[0]
        raise ValueError(f"logH inverse needs strictly increasing curves (curve {i} fails at point {g + 1})")
    F = -np.log1p(-Yv)
    h = np.diff(y.grid.points)
    G = y.grid.size
    # u_g = 2 dF_g / h_g - u_{g-1}: particular solution p (u_0 = 0) plus u_0 * (-1)^g.
    rhs = 2.0 * np.diff(F, axis=1) / h
    p = np.zeros_like(F)
    for g in range(1, G):
        p[:, g] = rhs[:, g - 1] - p[:, g - 1]
    alt = (-1.0) ** np.arange(G)
    if G >= 3:
        # Fourth differences of a smooth hazard are negligible, so they barely
        # bias the least-squares estimate of the alternating component.
        k = min(4, G - 1)
        dp = np.diff(p, n=k, axis=1)
        da = np.diff(alt, n=k)
        u0 = -(dp @ da) / (da @ da)
    else:
        u0 = rhs[:, 0] / 2.0
    u = p + u0[:, None] * alt
    if np.any(u <= 0):
        raise ValueError("curve is not the logH image of a finite function (nonpositive hazard)")
    return FunctionalSample(np.log(u), y.grid)
