"""Majorization-minimization solver for the overlapping group-Lasso objective

    l(psi) = 1/2 ||y - Z psi||^2 + lam * sum_b ||D_b psi||_2 .

Each MM step replaces every norm by its tangent upper bound at the current
iterate, which turns the problem into a generalized ridge regression with a
diagonal penalty. Groups whose norm falls below a threshold are dropped for
the rest of the fit, and their coefficients are held at exact zero.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from .groups import GroupStructure, RectangleSet, group_norms, zero_rectangles
from .model import DesignProblem, FunctionalSample, TensorKernel, build_design, center, predict

__all__ = [
    "SolverError",
    "SolverConfig",
    "MMState",
    "FitResult",
    "LambdaPath",
    "DenseProblem",
    "objective",
    "surrogate",
    "mm_weights",
    "ridge_update",
    "smw_apply",
    "prune",
    "ridge_init",
    "fit",
    "lambda_max",
    "lambda_grid",
    "fit_path",
    "score_path",
    "select_lambda",
    "cross_validate",
]

log = logging.getLogger(__name__)

Route = Literal["direct", "smw", "auto"]


class SolverError(RuntimeError):
    """Numerical failure inside the MM iterations."""


class Problem(Protocol):
    y: NDArray[np.float64]
    gram: NDArray[np.float64]
    zty: NDArray[np.float64]
    n_rows: int
    n_coef: int

    def matvec(self, psi: ArrayLike) -> NDArray[np.float64]: ...

    def columns(self, index: ArrayLike) -> NDArray[np.float64]: ...


class DenseProblem:
    """Least-squares problem given by an explicit design matrix."""

    def __init__(self, Z: ArrayLike, y: ArrayLike):
        self.Z = np.asarray(Z, dtype=float)
        self.y = np.asarray(y, dtype=float).ravel()
        if self.Z.ndim != 2 or self.Z.shape[0] != self.y.size:
            raise ValueError(f"Z has shape {self.Z.shape} but y has {self.y.size} entries")
        self.gram = self.Z.T @ self.Z
        self.zty = self.Z.T @ self.y

    @property
    def n_rows(self) -> int:
        return self.Z.shape[0]

    @property
    def n_coef(self) -> int:
        return self.Z.shape[1]

    def matvec(self, psi):
        return self.Z @ np.asarray(psi, dtype=float)

    def columns(self, index):
        return self.Z[:, np.asarray(index)]


@dataclass(frozen=True)
class SolverConfig:
    """MM settings.

    ``tolerance=None`` means ``1e-8 * (1 + |l(psi_0)|)``; ``zero_threshold=None``
    means ``1e-10`` times the largest group norm of the starting point.
    ``screen`` returns the zero solution without iterating when ``lam`` is at or
    above :func:`lambda_max`.
    """

    tolerance: float | None = None
    max_iters: int = 500
    zero_threshold: float | None = None
    route: Route = "auto"
    screen: bool = True
    rel_tolerance: float = 1e-8
    rel_zero_threshold: float = 1e-10

    def __post_init__(self) -> None:
        if self.tolerance is not None and not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.zero_threshold is not None and self.zero_threshold < 0:
            raise ValueError("zero_threshold must be nonnegative")
        if self.route not in ("direct", "smw", "auto"):
            raise ValueError(f"unknown route {self.route!r}")


@dataclass(frozen=True, eq=False)
class MMState:
    """Tangent-bound constants at an expansion point.

    ``H`` is the diagonal of the ridge penalty ``2 * sum_b d_b D_b^2`` over the
    groups in ``groups``; ``d0`` is ``sum_b ||D_b psi||/2`` (the surrogate adds
    ``lam * d0``).
    """

    psi: NDArray[np.float64]
    d0: float
    db: NDArray[np.float64]
    H: NDArray[np.float64]
    groups: NDArray[np.bool_]


@dataclass(eq=False)
class FitResult:
    psi_hat: NDArray[np.float64]
    objective_trace: list[float]
    iterations: int
    active_groups: NDArray[np.intp]
    zero_set: RectangleSet | None
    lam: float
    converged: bool = True
    kernel: TensorKernel | None = None

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    @property
    def n_active_coef(self) -> int:
        return int(np.count_nonzero(self.psi_hat))


@dataclass(eq=False)
class LambdaPath:
    lambdas: NDArray[np.float64]
    fits: list[FitResult]
    selected: int | None = None
    selection_score: NDArray[np.float64] | None = None

    @property
    def best(self) -> FitResult:
        if self.selected is None:
            raise ValueError("no lambda selected yet")
        return self.fits[self.selected]


def _as_vector(psi, n_coef: int) -> NDArray[np.float64]:
    v = np.asarray(psi, dtype=float)
    if v.ndim == 2:
        v = v.ravel(order="F")
    if v.shape != (n_coef,):
        raise ValueError(f"coefficient vector has {v.size} entries, expected {n_coef}")
    return v


def _rss(psi, problem: Problem) -> float:
    r = problem.y - problem.matvec(psi)
    return 0.5 * float(r @ r)


def objective(psi: ArrayLike, problem: Problem, lam: float, structure: GroupStructure) -> float:
    """``1/2 ||y - Z psi||^2 + lam * sum_b ||D_b psi||_2``."""
    psi = _as_vector(psi, problem.n_coef)
    if structure.num_coef != problem.n_coef:
        raise ValueError("group structure does not match the problem size")
    return _rss(psi, problem) + lam * float(group_norms(psi, structure).sum())


def mm_weights(
    psi: ArrayLike, structure: GroupStructure, groups: ArrayLike | None = None
) -> MMState:
    """Tangent constants ``d_b = 1 / (2 ||D_b psi||)`` at ``psi``.

    Only groups flagged in ``groups`` (default: all) take part; each of them
    must have a positive norm.
    """
    psi = _as_vector(psi, structure.num_coef)
    norms = group_norms(psi, structure)
    use = np.ones(structure.num_groups, bool) if groups is None else np.asarray(groups, bool)
    if np.any(norms[use] <= 0):
        bad = np.flatnonzero(use & (norms <= 0))
        raise ValueError(f"groups {bad[:10].tolist()} have zero norm; prune them first")
    db = np.zeros(structure.num_groups)
    db[use] = 0.5 / norms[use]
    d0 = float(np.sum(norms[use] - norms[use] ** 2 / (2 * norms[use])))
    H = 2.0 * (db @ structure.weights_sq)
    return MMState(psi=psi, d0=d0, db=db, H=H, groups=use)


def surrogate(psi: ArrayLike, state: MMState, problem: Problem, lam: float, structure: GroupStructure) -> float:
    """``1/2 ||y - Z psi||^2 + lam * (d0 + sum_b d_b ||D_b psi||^2)``."""
    psi = _as_vector(psi, problem.n_coef)
    sq = structure.weights_sq @ (psi * psi)
    return _rss(psi, problem) + lam * (state.d0 + float(state.db @ sq))


def smw_apply(Z: ArrayLike, H: ArrayLike, lam: float, rhs: ArrayLike) -> NDArray[np.float64]:
    """``(Z^T Z + lam diag(H))^{-1} rhs`` through the Woodbury identity.

    Uses the eigendecomposition ``U diag(ev) U^T = Z H^{-1} Z^T`` of the small
    ``nG x nG`` matrix.
    """
    Z = np.asarray(Z, dtype=float)
    H = np.asarray(H, dtype=float)
    if not np.all(np.isfinite(H) & (H > 0)):
        raise ValueError("H must be strictly positive")
    Hinv = 1.0 / H
    rhs = np.asarray(rhs, dtype=float)
    ZH = Z * Hinv
    J = ZH @ Z.T
    try:
        ev, U = np.linalg.eigh(J)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigendecomposition of the {J.shape[0]}x{J.shape[0]} Woodbury matrix failed") from exc
    v = Hinv * rhs
    w = U.T @ (Z @ v)
    Bw = lam * (U @ (w / (lam + ev)))
    return v / lam - Hinv * (Z.T @ Bw) / lam**2


def ridge_update(
    problem: Problem,
    lam: float,
    state: MMState,
    active: ArrayLike | None = None,
    route: Route = "auto",
) -> NDArray[np.float64]:
    """Minimizer of the surrogate over the active coordinates; others stay 0."""
    n = problem.n_coef
    act = np.ones(n, bool) if active is None else np.asarray(active, bool)
    idx = np.flatnonzero(act)
    out = np.zeros(n)
    if idx.size == 0:
        return out
    H = state.H[idx]
    if np.any(H <= 0):
        raise SolverError("ridge weights must be positive on active coordinates")
    if route == "auto":
        route = "smw" if idx.size > problem.n_rows else "direct"
    rhs = problem.zty[idx]
    if route == "smw":
        out[idx] = smw_apply(problem.columns(idx), H, lam, rhs)
        return out
    Aa = problem.gram[np.ix_(idx, idx)].copy()
    Aa[np.diag_indices_from(Aa)] += lam * H
    try:
        out[idx] = scipy.linalg.cho_solve(scipy.linalg.cho_factor(Aa, lower=True, check_finite=False), rhs)
    except np.linalg.LinAlgError as exc:
        raise SolverError("ridge system is not positive definite") from exc
    return out


def prune(
    psi: ArrayLike,
    structure: GroupStructure,
    zero_threshold: float,
    active: ArrayLike | None = None,
) -> tuple[NDArray[np.bool_], NDArray[np.bool_]]:
    """Drop every group whose norm is ``<= zero_threshold``.

    A coefficient stays active only if none of its groups was dropped, and an
    already inactive coefficient never comes back.

    Returns
    -------
    active_coef : bool array of shape (M*L,)
    active_groups : bool array of shape (num_groups,)
        Groups that still contain at least one active coefficient.
    """
    psi = _as_vector(psi, structure.num_coef)
    act = np.ones(structure.num_coef, bool) if active is None else np.asarray(active, bool).copy()
    norms = group_norms(np.where(act, psi, 0.0), structure)
    S = structure.membership
    dead = norms <= zero_threshold
    if np.any(dead):
        act &= ~S[dead].any(axis=0)
    groups = (S & act[None, :]).any(axis=1)
    return act, groups


def ridge_init(problem: Problem, lam: float, structure: GroupStructure, route: Route = "auto") -> NDArray[np.float64]:
    """Ridge solution with the balanced penalty ``sum_b D_b^2`` as weights."""
    H = structure.penalty_diag
    state = MMState(psi=np.zeros(problem.n_coef), d0=0.0, db=np.zeros(structure.num_groups), H=H,
                    groups=np.ones(structure.num_groups, bool))
    return ridge_update(problem, lam, state, route=route)


def lambda_max(problem: Problem, structure: GroupStructure) -> float:
    """``max_j |Z_j^T y| / (sum_b D_b^2)_jj``; every fit at or above it is zero."""
    return float(np.max(np.abs(problem.zty) / structure.penalty_diag))


def _zero_set(psi, problem, structure) -> RectangleSet | None:
    if isinstance(problem, DesignProblem):
        return zero_rectangles(psi, structure, 0.0, problem.basis_t.breakpoints, problem.basis_s.breakpoints)
    return zero_rectangles(psi, structure, 0.0)


def _result(psi, trace, iters, groups, lam, converged, problem, structure) -> FitResult:
    norms = group_norms(psi, structure)
    return FitResult(
        psi_hat=psi,
        objective_trace=trace,
        iterations=iters,
        active_groups=np.flatnonzero(groups & (norms > 0)),
        zero_set=_zero_set(psi, problem, structure),
        lam=float(lam),
        converged=converged,
        kernel=problem.kernel(psi) if isinstance(problem, DesignProblem) else None,
    )


def fit(
    problem: Problem,
    lam: float,
    structure: GroupStructure,
    config: SolverConfig = SolverConfig(),
    warm_start: ArrayLike | None = None,
) -> FitResult:
    """Minimize the overlapping group-Lasso objective at a single ``lam``.

    Iterates tangent weights, ridge update and pruning until the change in the
    objective is at most the tolerance. The starting point is the balanced
    ridge solution; with ``warm_start``, its nonzero entries replace the ridge
    values, so coefficients that are zero in the warm start can re-enter.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    n = problem.n_coef
    if structure.num_coef != n:
        raise ValueError(f"group structure covers {structure.num_coef} coefficients, problem has {n}")

    if config.screen and lam >= lambda_max(problem, structure):
        zero = np.zeros(n)
        return _result(zero, [objective(zero, problem, lam, structure)], 1,
                       np.zeros(structure.num_groups, bool), lam, True, problem, structure)

    psi = ridge_init(problem, lam, structure, config.route)
    if warm_start is not None:
        warm = _as_vector(warm_start, n)
        psi = np.where(warm != 0, warm, psi)

    norms0 = group_norms(psi, structure)
    thr = config.zero_threshold
    if thr is None:
        thr = config.rel_zero_threshold * float(norms0.max())
    active, groups = prune(psi, structure, thr)
    psi = np.where(active, psi, 0.0)
    ell = objective(psi, problem, lam, structure)
    tol = config.tolerance if config.tolerance is not None else config.rel_tolerance * (1.0 + abs(ell))

    trace = [ell]
    converged = False
    k = 0
    while k < config.max_iters:
        if not groups.any():
            converged = True
            break
        state = mm_weights(psi, structure, groups)
        try:
            new = ridge_update(problem, lam, state, active, config.route)
        except SolverError as exc:
            raise SolverError(f"iteration {k + 1} at lambda={lam:.6g}: {exc}") from exc
        active, groups = prune(new, structure, thr, active)
        psi = np.where(active, new, 0.0)
        ell_new = objective(psi, problem, lam, structure)
        trace.append(ell_new)
        k += 1
        if abs(ell_new - ell) <= tol:
            converged = True
            break
        ell = ell_new
    if not converged:
        log.warning("MM did not converge in %d iterations at lambda=%.6g", config.max_iters, lam)
    return _result(psi, trace, k, groups, lam, converged, problem, structure)


def lambda_grid(lam_max: float, grid_size: int = 100, min_ratio: float = 1e-4) -> NDArray[np.float64]:
    """Log-spaced, strictly decreasing grid from ``lam_max`` to ``min_ratio * lam_max``."""
    if grid_size < 1:
        raise ValueError("grid_size must be at least 1")
    if not 0 < min_ratio < 1:
        raise ValueError("min_ratio must lie in (0, 1)")
    if not lam_max > 0:
        raise ValueError("lambda_max is zero: the response is identically zero")
    if grid_size == 1:
        return np.array([lam_max])
    return lam_max * np.logspace(0.0, np.log10(min_ratio), grid_size)


def fit_path(
    problem: Problem,
    structure: GroupStructure,
    config: SolverConfig = SolverConfig(),
    grid_size: int = 100,
    min_ratio: float = 1e-4,
    lambdas: ArrayLike | None = None,
    warm: bool = True,
) -> LambdaPath:
    """Fit a decreasing sequence of penalties, warm-starting each from the previous."""
    if lambdas is None:
        lams = lambda_grid(lambda_max(problem, structure), grid_size, min_ratio)
    else:
        lams = np.asarray(lambdas, dtype=float)
        if lams.ndim != 1 or lams.size == 0 or np.any(lams <= 0):
            raise ValueError("lambdas must be a nonempty sequence of positive values")
        if np.any(np.diff(lams) >= 0):
            raise ValueError("lambdas must be strictly decreasing")
    fits: list[FitResult] = []
    prev = None
    for i, lam in enumerate(lams):
        try:
            res = fit(problem, float(lam), structure, config, warm_start=prev if warm else None)
        except SolverError as exc:
            raise SolverError(f"path step {i} (lambda={lam:.6g}): {exc}") from exc
        fits.append(res)
        prev = res.psi_hat
    return LambdaPath(lambdas=lams, fits=fits)


def score_path(path: LambdaPath, x_val: FunctionalSample, y_val: FunctionalSample) -> NDArray[np.float64]:
    """Summed squared validation error ``sum_i sum_g (y_i(s_g) - yhat_i(s_g))^2`` per lambda."""
    if x_val.n == 0 or y_val.n == 0:
        raise ValueError("validation set is empty")
    if x_val.n != y_val.n:
        raise ValueError("validation covariates and responses differ in size")
    Y = y_val.uncentered().values
    scores = []
    for res in path.fits:
        if res.kernel is None:
            raise ValueError("path fits carry no kernel; fit on a DesignProblem")
        k = res.kernel
        for g_fit, g_val, nm in ((k.basis_t, x_val.grid, "covariate"), (k.basis_s, y_val.grid, "response")):
            a, b = g_fit.domain
            if abs(g_val.domain[0] - a) > 1e-9 * (b - a) or abs(g_val.domain[1] - b) > 1e-9 * (b - a):
                raise ValueError(f"validation {nm} grid does not match the training domain")
        r = Y - predict(k, x_val, y_val.grid).values
        scores.append(float(np.sum(r * r)))
    return np.asarray(scores)


def _argmin_prefer_large(scores: NDArray[np.float64]) -> int:
    # lambdas are decreasing, so the first minimum is the largest lambda.
    return int(np.flatnonzero(scores == scores.min())[0])


def select_lambda(path: LambdaPath, x_val: FunctionalSample, y_val: FunctionalSample) -> int:
    """Index of the lambda with the smallest validation error; ties go to the larger lambda.

    Also records ``selected`` and ``selection_score`` on ``path``.
    """
    scores = score_path(path, x_val, y_val)
    path.selection_score = scores
    path.selected = _argmin_prefer_large(scores)
    return path.selected


def fold_indices(n: int, k: int) -> list[NDArray[np.intp]]:
    """Contiguous, deterministic folds of ``range(n)``."""
    if not 2 <= k <= n:
        raise ValueError(f"cannot split {n} curves into {k} folds")
    return [np.asarray(f) for f in np.array_split(np.arange(n), k)]


def cross_validate(
    x: FunctionalSample,
    y: FunctionalSample,
    basis_t,
    basis_s,
    structure: GroupStructure,
    k: int,
    config: SolverConfig = SolverConfig(),
    grid_size: int = 100,
    min_ratio: float = 1e-4,
    centered: bool = False,
) -> LambdaPath:
    """K-fold selection over a shared lambda grid, then a full-data path.

    The grid comes from the full-data ``lambda_max``; the returned path is fit
    on all curves and scored by the fold-averaged validation error.
    """
    prep = center if centered else (lambda s: s)
    full = build_design(prep(x), prep(y), basis_t, basis_s)
    lams = lambda_grid(lambda_max(full, structure), grid_size, min_ratio)
    total = np.zeros(lams.size)
    for hold in fold_indices(x.n, k):
        keep = np.setdiff1d(np.arange(x.n), hold)
        prob = build_design(prep(x.subset(keep)), prep(y.subset(keep)), basis_t, basis_s)
        fold_path = fit_path(prob, structure, config, lambdas=lams)
        total += score_path(fold_path, x.subset(hold), y.subset(hold))
    path = fit_path(full, structure, config, lambdas=lams)
    path.selection_score = total / k
    path.selected = _argmin_prefer_large(path.selection_score)
    return path
