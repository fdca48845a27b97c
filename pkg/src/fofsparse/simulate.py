"""Synthetic function-on-function experiments and integrated-error metrics.

The four true kernels live on ``[0, 1]^2`` and have exactly the zero sets
listed below (``t`` is the covariate argument, ``s`` the response argument):

1. quasi-concurrent band, zero for ``|t - s| >= 0.2``:
   ``psi(t, s) = 2 * (1 - ((t - s) / 0.2)^2)^2``
2. historical, zero for ``t > s``:
   ``psi(t, s) = 8 (s - t) exp(-3 (s - t))``
3. zero on the rectangles ``[0, 0.35] x [0.6, 1]`` and ``[0.6, 1] x [0, 0.35]``:
   ``psi(t, s) = (1 + t + s) * prod_k (1 - exp(-dist_k(t, s)^2 / 0.01))`` with
   ``dist_k`` the Euclidean distance to rectangle ``k``
4. no zeros:
   ``psi(t, s) = 1 + 0.5 sin(2 pi t) cos(2 pi s)``
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .bspline import Grid, eval_basis, make_basis, make_grid, trapezoid_weights
from .groups import RectangleSet, block_structure
from .model import FunctionalSample, TensorKernel, build_design, predict
from .solver import SolverConfig, fit_path, select_lambda

__all__ = [
    "SimulationScenario",
    "TrueKernel",
    "EvaluationReport",
    "true_kernel",
    "gen_covariates",
    "gen_responses",
    "realized_snr",
    "ise_metrics",
    "zero_coverage",
    "run_replicate",
    "run_scenario",
    "summarize",
]

# Cubic covariate basis with 15 evenly spaced interior knots.
COVARIATE_ORDER = 4
COVARIATE_INTERIOR_KNOTS = 15

_BAND = 0.2
_RECTS = ((0.0, 0.35, 0.6, 1.0), (0.6, 1.0, 0.0, 0.35))


@dataclass(frozen=True)
class SimulationScenario:
    kernel_id: int
    n: int = 50
    G: int = 100
    snr: float = 4.0
    basis_dims: tuple[int, int] = (20, 20)
    order: int = 4
    seed: int = 0
    validation_n: int = 200
    test_n: int = 1000
    grid_size: int = 100
    min_ratio: float = 1e-4

    def __post_init__(self) -> None:
        if self.kernel_id not in (1, 2, 3, 4):
            raise ValueError(f"kernel_id must be 1..4, got {self.kernel_id}")
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.G < 2:
            raise ValueError("G must be at least 2")
        object.__setattr__(self, "basis_dims", tuple(int(v) for v in self.basis_dims))

    @classmethod
    def from_dict(cls, cfg: dict) -> "SimulationScenario":
        cfg = dict(cfg)
        if "dims" in cfg:
            cfg["basis_dims"] = cfg.pop("dims")
        if "M" in cfg or "L" in cfg:
            cfg["basis_dims"] = (cfg.pop("M", 20), cfg.pop("L", 20))
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known - {"replicates"}
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        cfg.pop("replicates", None)
        return cls(**cfg)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["basis_dims"] = list(self.basis_dims)
        return d


@dataclass(frozen=True, eq=False)
class TrueKernel:
    kernel_id: int
    evaluator: Callable[[NDArray, NDArray], NDArray]
    zero_mask: Callable[[NDArray, NDArray], NDArray]
    zero_area: float
    zero_region: str

    def __call__(self, t: ArrayLike, s: ArrayLike) -> NDArray[np.float64]:
        t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
        return self.evaluator(t, s)


@dataclass
class EvaluationReport:
    ise0: float | None
    ise1: float
    ise: float
    prediction_error: float
    replicate: int
    zero_area: float = 0.0
    zero_coverage: float | None = None
    selected_lambda: float = math.nan
    realized_snr: float = math.nan
    n_zero_rectangles: int = 0


def _rect_dist2(t, s, rect):
    t0, t1, s0, s1 = rect
    dt = np.maximum(np.maximum(t0 - t, 0.0), t - t1)
    ds = np.maximum(np.maximum(s0 - s, 0.0), s - s1)
    return dt * dt + ds * ds


def _k1(t, s):
    u = (t - s) / _BAND
    return np.where(np.abs(u) < 1, 2.0 * (1 - u * u) ** 2, 0.0)


def _k2(t, s):
    u = s - t
    return np.where(u >= 0, 8.0 * u * np.exp(-3.0 * u), 0.0)


def _k3(t, s):
    out = 1.0 + t + s
    for r in _RECTS:
        out = out * -np.expm1(-_rect_dist2(t, s, r) / 0.01)
    return out


def _k4(t, s):
    return 1.0 + 0.5 * np.sin(2 * np.pi * t) * np.cos(2 * np.pi * s)


def _rects_mask(t, s):
    inside = np.zeros(np.shape(t), dtype=bool)
    for t0, t1, s0, s1 in _RECTS:
        inside |= (t >= t0) & (t <= t1) & (s >= s0) & (s <= s1)
    return inside


def true_kernel(kernel_id: int) -> TrueKernel:
    """One of the four reference kernels (see module docstring)."""
    if kernel_id == 1:
        return TrueKernel(1, _k1, lambda t, s: np.abs(t - s) >= _BAND, (1 - _BAND) ** 2,
                          f"|t - s| >= {_BAND}")
    if kernel_id == 2:
        return TrueKernel(2, _k2, lambda t, s: t > s, 0.5, "t > s")
    if kernel_id == 3:
        area = sum((t1 - t0) * (s1 - s0) for t0, t1, s0, s1 in _RECTS)
        desc = " U ".join(f"[{t0}, {t1}] x [{s0}, {s1}]" for t0, t1, s0, s1 in _RECTS)
        return TrueKernel(3, _k3, _rects_mask, area, desc)
    if kernel_id == 4:
        return TrueKernel(4, _k4, lambda t, s: np.zeros(np.shape(t), dtype=bool), 0.0, "empty")
    raise ValueError(f"kernel_id must be 1..4, got {kernel_id}")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def gen_covariates(n: int, G: int, seed=None, coefficients: ArrayLike | None = None) -> FunctionalSample:
    """Random cubic spline curves on an equispaced ``G``-point grid of ``[0, 1]``.

    Coefficients are i.i.d. standard normal unless given explicitly as an
    ``(n, 19)`` array.
    """
    if n < 1 or G < 2:
        raise ValueError("need n >= 1 and G >= 2")
    grid = make_grid((0.0, 1.0), G)
    basis = make_basis((0.0, 1.0), COVARIATE_INTERIOR_KNOTS + COVARIATE_ORDER, COVARIATE_ORDER)
    if coefficients is None:
        coefficients = _rng(seed).standard_normal((n, basis.num_basis))
    coef = np.asarray(coefficients, dtype=float)
    if coef.shape != (n, basis.num_basis):
        raise ValueError(f"coefficients must have shape {(n, basis.num_basis)}")
    return FunctionalSample(coef @ eval_basis(basis, grid), grid)


def _signal(x: FunctionalSample, kernel: TrueKernel, s_grid: Grid) -> NDArray[np.float64]:
    T, S = np.meshgrid(x.grid.points, s_grid.points, indexing="ij")
    return (x.values * x.grid.weights) @ kernel(T, S)


def realized_snr(signal: ArrayLike, noise: ArrayLike, grid: Grid) -> float:
    """``mean_i( int signal_i^2 / int noise_i^2 )`` with the grid quadrature."""
    return float(np.mean(grid.integrate(np.square(signal)) / grid.integrate(np.square(noise))))


def gen_responses(
    x: FunctionalSample,
    kernel: TrueKernel,
    snr: float,
    seed=None,
    sigma: float | None = None,
) -> tuple[FunctionalSample, float]:
    """Responses ``int psi(t, s) x_i(t) dt + e_i(s)`` with white Gaussian noise.

    The noise scale is calibrated on this sample so that :func:`realized_snr`
    equals ``snr``; pass ``sigma`` to reuse a scale (e.g. for validation data)
    and ``snr=math.inf`` for noise-free responses.

    Returns
    -------
    sample, sigma
    """
    sig = _signal(x, kernel, x.grid)
    if math.isinf(snr):
        return FunctionalSample(sig, x.grid), 0.0
    if not snr > 0:
        raise ValueError("snr must be positive")
    z = _rng(seed).standard_normal(sig.shape)
    if sigma is None:
        energy = x.grid.integrate(sig**2)
        if not np.any(energy > 0):
            raise ValueError("signal is identically zero; the SNR cannot be calibrated")
        sigma = math.sqrt(float(np.mean(energy / x.grid.integrate(z**2))) / snr)
    return FunctionalSample(sig + sigma * z, x.grid), float(sigma)


def _tensor_weights(res: int) -> tuple[NDArray, NDArray]:
    pts = np.linspace(0.0, 1.0, res)
    w = trapezoid_weights(pts)
    return pts, np.outer(w, w)


def ise_metrics(estimate, truth: TrueKernel, resolution: int = 200) -> EvaluationReport:
    """Integrated squared errors over the true zero region and its complement.

    ``ise0`` and ``ise1`` are averages of the squared error over the two
    regions, so that ``ise = ise0 * area0 + ise1 * area1`` is the integrated
    squared error over the whole square. Areas are the quadrature measures of
    the regions on the ``resolution x resolution`` trapezoid grid. ``ise0`` is
    ``None`` when the zero region is empty.
    """
    pts, W = _tensor_weights(resolution)
    T, S = np.meshgrid(pts, pts, indexing="ij")
    if isinstance(estimate, TensorKernel):
        est = estimate.surface(pts, pts)
    else:
        est = np.asarray(estimate(T, S), dtype=float)
    err2 = (est - truth(T, S)) ** 2
    mask = np.asarray(truth.zero_mask(T, S), dtype=bool)
    area0 = float(np.sum(W[mask]))
    area1 = float(np.sum(W[~mask]))
    ise0 = float(np.sum((W * err2)[mask]) / area0) if area0 > 0 else None
    ise1 = float(np.sum((W * err2)[~mask]) / area1) if area1 > 0 else 0.0
    ise = (ise0 * area0 if ise0 is not None else 0.0) + ise1 * area1
    return EvaluationReport(ise0=ise0, ise1=ise1, ise=ise, prediction_error=math.nan, replicate=-1,
                            zero_area=area0)


def zero_coverage(zero_set: RectangleSet, truth: TrueKernel, resolution: int = 1000) -> float | None:
    """Fraction of the true zero area covered by the recovered rectangles (midpoint rule)."""
    if truth.zero_area <= 0:
        return None
    mid = (np.arange(resolution) + 0.5) / resolution
    T, S = np.meshgrid(mid, mid, indexing="ij")
    mask = truth.zero_mask(T, S)
    cells = zero_set.mask()
    if not cells.any():
        return 0.0
    mi = np.clip(np.searchsorted(zero_set.t_breaks, mid, side="right") - 1, 0, cells.shape[0] - 1)
    li = np.clip(np.searchsorted(zero_set.s_breaks, mid, side="right") - 1, 0, cells.shape[1] - 1)
    covered = cells[np.ix_(mi, li)]
    return float(np.count_nonzero(covered & mask) / np.count_nonzero(mask))


def run_replicate(scenario: SimulationScenario, replicate: int, config: SolverConfig | None = None) -> EvaluationReport:
    """Simulate, fit a lambda path, select on validation data and score one replicate."""
    config = config or SolverConfig()
    ss = np.random.SeedSequence(entropy=scenario.seed, spawn_key=(replicate,))
    rx, re, rvx, rve, rtx, rte = (np.random.default_rng(c) for c in ss.spawn(6))
    truth = true_kernel(scenario.kernel_id)
    M, L = scenario.basis_dims

    x = gen_covariates(scenario.n, scenario.G, rx)
    y, sigma = gen_responses(x, truth, scenario.snr, re)
    snr_obs = realized_snr(_signal(x, truth, x.grid), y.values - _signal(x, truth, x.grid), x.grid)
    xv = gen_covariates(scenario.validation_n, scenario.G, rvx)
    yv, _ = gen_responses(xv, truth, scenario.snr, rve, sigma=sigma)

    basis_t = make_basis((0.0, 1.0), M, scenario.order)
    basis_s = make_basis((0.0, 1.0), L, scenario.order)
    structure = block_structure(M, L, scenario.order)
    problem = build_design(x, y, basis_t, basis_s)
    path = fit_path(problem, structure, config, scenario.grid_size, scenario.min_ratio)
    best = path.fits[select_lambda(path, xv, yv)]

    report = ise_metrics(best.kernel, truth)
    report.replicate = replicate
    report.selected_lambda = best.lam
    report.realized_snr = snr_obs
    report.n_zero_rectangles = len(best.zero_set)
    report.zero_coverage = zero_coverage(best.zero_set, truth)
    if scenario.test_n > 0:
        xt = gen_covariates(scenario.test_n, scenario.G, rtx)
        yt, _ = gen_responses(xt, truth, scenario.snr, rte, sigma=sigma)
        r = yt.values - predict(best.kernel, xt, yt.grid).values
        report.prediction_error = float(np.mean(yt.grid.integrate(r * r)))
    return report


def _run_one(args):
    return run_replicate(*args)


def run_scenario(
    scenario: SimulationScenario,
    replicates: int,
    config: SolverConfig | None = None,
    workers: int = 1,
) -> list[EvaluationReport]:
    """Replicates ``0..replicates-1``, each with its own seed stream, in replicate order."""
    if replicates < 1:
        raise ValueError("replicates must be at least 1")
    jobs = [(scenario, r, config) for r in range(replicates)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


REPORT_SCALE = 1e5


def summarize(reports: list[EvaluationReport]) -> dict:
    """Means and standard deviations of the error metrics, scaled by ``1e5``."""
    out: dict = {"replicates": len(reports), "scale": REPORT_SCALE}
    for key in ("ise0", "ise1", "ise", "prediction_error"):
        vals = [getattr(r, key) for r in reports]
        if any(v is None for v in vals):
            out[key] = None
            continue
        arr = np.asarray(vals, dtype=float)
        out[key] = {
            "mean": float(arr.mean() * REPORT_SCALE),
            "sd": float(arr.std(ddof=1) * REPORT_SCALE) if arr.size > 1 else 0.0,
        }
    cov = [r.zero_coverage for r in reports]
    out["zero_coverage_mean"] = None if any(c is None for c in cov) else float(np.mean(cov))
    return out
