"""Command-line interface: ``fofsparse {fit,path,ar,simulate,export,rerun}``.

Every run writes ``manifest.json`` into its output directory with the fully
resolved configuration; ``fofsparse rerun manifest.json`` repeats the run.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure
(including unconverged fits under ``--strict``).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import __version__
from .bspline import make_basis
from .groups import block_structure
from .io import (
    ParseError,
    fit_to_dict,
    fmt,
    kernel_from_dict,
    read_curves,
    read_json,
    write_json,
    write_surface,
)
from .model import build_ar_pairs, build_design, center, logh_inverse
from .simulate import SimulationScenario, run_scenario, summarize
from .solver import (
    SolverConfig,
    SolverError,
    cross_validate,
    fit,
    fit_path,
    fold_indices,
    lambda_max,
    select_lambda,
)

__all__ = ["main", "build_parser"]

log = logging.getLogger("fofsparse")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive_int(v: str) -> int:
    i = int(v)
    if i < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return i


def _positive_float(v: str) -> float:
    f = float(v)
    if not f > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return f


def _solver_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model and solver")
    g.add_argument("--order", type=_positive_int, default=4, help="spline order d (default 4, cubic)")
    g.add_argument("--num-basis-t", type=_positive_int, default=20, help="covariate basis size M")
    g.add_argument("--num-basis-s", type=_positive_int, default=20, help="response basis size L")
    g.add_argument("--tol", type=_positive_float, default=None,
                   help="absolute stopping tolerance (default 1e-8 * (1 + |l0|))")
    g.add_argument("--max-iters", type=_positive_int, default=500)
    g.add_argument("--zero-threshold", type=float, default=None,
                   help="group-norm pruning level (default relative to the start point)")
    g.add_argument("--route", choices=("direct", "smw", "auto"), default="auto")
    g.add_argument("--center", action="store_true", help="center covariates and responses first")
    g.add_argument("--strict", action="store_true", help="exit with status 2 on unconverged fits")
    g.add_argument("--surface-points", type=_positive_int, default=101,
                   help="kernel surface resolution per axis (default 101)")
    g.add_argument("--out", default=".", help="output directory")


def _lambda_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("penalty")
    g.add_argument("--lambda", dest="lam", type=_positive_float, default=None, help="penalty level")
    g.add_argument("--lambda-ratio", type=_positive_float, default=None,
                   help="penalty as a fraction of lambda_max")


def _path_opts(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("lambda path")
    g.add_argument("--grid-size", type=_positive_int, default=100)
    g.add_argument("--min-ratio", type=_positive_float, default=1e-4)
    g.add_argument("--cv", type=_positive_int, default=None, metavar="K", help="K-fold cross-validation")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fofsparse", description="Sparse function-on-function regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    f = sub.add_parser("fit", help="fit at a single lambda")
    f.add_argument("x", help="covariate curve CSV")
    f.add_argument("y", help="response curve CSV")
    _lambda_opts(f)
    _solver_opts(f)

    q = sub.add_parser("path", help="fit a lambda path and select by validation or CV")
    q.add_argument("x")
    q.add_argument("y")
    q.add_argument("x_val", nargs="?", default=None)
    q.add_argument("y_val", nargs="?", default=None)
    _path_opts(q)
    _solver_opts(q)

    a = sub.add_parser("ar", help="lag-one functional autoregression")
    a.add_argument("series", help="temporally ordered curve CSV")
    a.add_argument("--logh", action="store_true", help="apply the inverse logH transform first")
    _lambda_opts(a)
    _path_opts(a)
    _solver_opts(a)

    s = sub.add_parser("simulate", help="run a synthetic scenario")
    s.add_argument("scenario", help="scenario JSON")
    s.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    s.add_argument("--replicates", type=_positive_int, default=None)
    s.add_argument("--workers", type=_positive_int, default=1)
    s.add_argument("--tol", type=_positive_float, default=None)
    s.add_argument("--max-iters", type=_positive_int, default=500)
    s.add_argument("--out", default=".")

    e = sub.add_parser("export", help="write the kernel surface of a saved fit")
    e.add_argument("fit_json")
    e.add_argument("--surface-points", type=_positive_int, default=101)
    e.add_argument("--out", default=".")

    r = sub.add_parser("rerun", help="repeat a run from its manifest")
    r.add_argument("manifest")
    r.add_argument("--out", default=None, help="override the recorded output directory")
    return p


_PATH_ARGS = ("x", "y", "x_val", "y_val", "series", "scenario", "fit_json")


def _resolved(args: argparse.Namespace) -> dict:
    cfg = {k: v for k, v in vars(args).items()}
    for k in _PATH_ARGS + ("out",):
        if cfg.get(k) is not None:
            cfg[k] = str(Path(cfg[k]).resolve())
    return cfg


def _config(args) -> SolverConfig:
    try:
        return SolverConfig(tolerance=args.tol, max_iters=args.max_iters,
                            zero_threshold=args.zero_threshold, route=args.route)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _bases(args, x, y):
    try:
        bt = make_basis(x.grid.domain, args.num_basis_t, args.order)
        bs = make_basis(y.grid.domain, args.num_basis_s, args.order)
        structure = block_structure(args.num_basis_t, args.num_basis_s, args.order)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return bt, bs, structure


def _check_pair(x, y, names=("covariate", "response")) -> None:
    if x.n != y.n:
        raise UsageError(f"{names[0]} file has {x.n} curves but {names[1]} file has {y.n}")


def _prep(args, x, y):
    return (center(x), center(y)) if args.center else (x, y)


def _write_fit(out: Path, res, structure, lam_max, args, extra=None) -> None:
    write_json(out / "fit.json", fit_to_dict(res, structure, lam_max, extra))
    write_surface(out / "kernel_surface.csv", res.kernel, args.surface_points)


def _single_fit(args, x, y, out: Path, extra=None) -> list:
    _check_pair(x, y)
    xc, yc = _prep(args, x, y)
    bt, bs, structure = _bases(args, x, y)
    problem = build_design(xc, yc, bt, bs)
    lmax = lambda_max(problem, structure)
    if args.lam is not None and args.lambda_ratio is not None:
        raise UsageError("give either --lambda or --lambda-ratio, not both")
    lam = args.lam if args.lam is not None else (args.lambda_ratio or 0.1) * lmax
    if not lam > 0:
        raise UsageError("lambda_max is zero (responses are identically zero); pass --lambda explicitly")
    res = fit(problem, lam, structure, _config(args))
    _write_fit(out, res, structure, lmax, args, extra)
    return [res]


def _path_record(path, structure) -> dict:
    entries = []
    for i, (lam, res) in enumerate(zip(path.lambdas, path.fits)):
        entries.append({
            "index": i,
            "lambda": lam,
            "objective": res.objective,
            "iterations": res.iterations,
            "converged": res.converged,
            "active_groups": int(res.active_groups.size),
            "zero_rectangles": len(res.zero_set) if res.zero_set is not None else 0,
            "validation_score": None if path.selection_score is None else path.selection_score[i],
            "selected": i == path.selected,
            "psi": res.psi_hat.reshape(structure.dims[:2], order="F"),
        })
    return {"selected": path.selected, "selected_lambda": path.lambdas[path.selected], "entries": entries}


def _path_fit(args, x, y, out: Path, x_val=None, y_val=None, extra=None) -> list:
    _check_pair(x, y)
    bt, bs, structure = _bases(args, x, y)
    cfg = _config(args)
    xc, yc = _prep(args, x, y)
    problem = build_design(xc, yc, bt, bs)
    lmax = lambda_max(problem, structure)
    if args.cv is not None:
        if x_val is not None:
            raise UsageError("--cv and validation files are mutually exclusive")
        if args.cv < 2 or args.cv > x.n:
            raise UsageError(f"--cv {args.cv} needs between 2 and {x.n} folds")
        path = cross_validate(x, y, bt, bs, structure, args.cv, cfg, args.grid_size, args.min_ratio,
                              centered=args.center)
    else:
        if x_val is None:
            raise UsageError("validation files are required unless --cv is given")
        _check_pair(x_val, y_val, ("validation covariate", "validation response"))
        path = fit_path(problem, structure, cfg, args.grid_size, args.min_ratio)
        select_lambda(path, x_val, y_val)
    rec = _path_record(path, structure)
    rec["lambda_max"] = lmax
    rec["cv_folds"] = None if args.cv is None else [f.tolist() for f in fold_indices(x.n, args.cv)]
    write_json(out / "path.json", rec)
    _write_fit(out, path.best, structure, lmax, args, extra)
    return path.fits


def cmd_fit(args, out: Path) -> tuple[list, dict]:
    x, y = read_curves(args.x), read_curves(args.y)
    return _single_fit(args, x, y, out), {"n_curves": x.n}


def cmd_path(args, out: Path) -> tuple[list, dict]:
    x, y = read_curves(args.x), read_curves(args.y)
    if (args.x_val is None) != (args.y_val is None):
        raise UsageError("give both validation files or neither")
    xv = read_curves(args.x_val) if args.x_val else None
    yv = read_curves(args.y_val) if args.y_val else None
    return _path_fit(args, x, y, out, xv, yv), {"n_curves": x.n}


def cmd_ar(args, out: Path) -> tuple[list, dict]:
    series = read_curves(args.series)
    if series.n < 2:
        raise UsageError("an autoregressive fit needs at least two curves")
    if args.logh:
        series = logh_inverse(series)
    x, y = build_ar_pairs(series)
    info = {"n_curves": series.n, "n_pairs": x.n, "logh": args.logh}
    if args.lam is not None or args.lambda_ratio is not None:
        return _single_fit(args, x, y, out, extra={"n_pairs": x.n}), info
    if args.cv is None:
        raise UsageError("ar needs --lambda, --lambda-ratio or --cv K")
    return _path_fit(args, x, y, out, extra={"n_pairs": x.n}), info


def cmd_simulate(args, out: Path) -> tuple[list, dict]:
    cfg = read_json(args.scenario)
    if not isinstance(cfg, dict):
        raise ParseError(f"{args.scenario}: expected a JSON object")
    replicates = args.replicates or int(cfg.get("replicates", 1))
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        scenario = SimulationScenario.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{args.scenario}: {exc}") from None
    solver = SolverConfig(tolerance=args.tol, max_iters=args.max_iters)
    reports = run_scenario(scenario, replicates, solver, workers=args.workers)
    fields = ["replicate", "ise0", "ise1", "ise", "prediction_error", "zero_area", "zero_coverage",
              "selected_lambda", "realized_snr", "n_zero_rectangles"]
    with (out / "reports.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in reports:
            row = []
            for k in fields:
                v = getattr(r, k)
                row.append("" if v is None else (fmt(v) if isinstance(v, float) else v))
            w.writerow(row)
    summary = summarize(reports)
    summary["scenario"] = scenario.to_dict()
    write_json(out / "summary.json", summary)
    return [], {"replicates": replicates}


def cmd_export(args, out: Path) -> tuple[list, dict]:
    rec = read_json(args.fit_json)
    write_surface(out / "kernel_surface.csv", kernel_from_dict(rec), args.surface_points)
    return [], {}


_COMMANDS = {"fit": cmd_fit, "path": cmd_path, "ar": cmd_ar, "simulate": cmd_simulate, "export": cmd_export}


def _run(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    config = _resolved(args)
    fits, info = _COMMANDS[args.command](args, out)
    manifest = {"program": "fofsparse", "version": __version__, "command": args.command, "config": config}
    manifest.update(info)
    unconverged = [i for i, r in enumerate(fits) if not r.converged]
    manifest["unconverged_fits"] = len(unconverged)
    write_json(out / "manifest.json", manifest)
    if unconverged:
        log.warning("%d fit(s) did not converge", len(unconverged))
        if getattr(args, "strict", False):
            return EXIT_NUMERIC
    return EXIT_OK


def _from_manifest(path: str, out: str | None) -> argparse.Namespace:
    rec = read_json(path)
    try:
        cfg = dict(rec["config"])
        command = rec["command"]
    except (KeyError, TypeError):
        raise ParseError(f"{path}: not a fofsparse manifest") from None
    if command not in _COMMANDS:
        raise ParseError(f"{path}: unknown command {command!r}")
    # Fill options added since the manifest was written with their defaults.
    defaults = vars(build_parser().parse_args(_minimal_argv(command)))
    defaults.update(cfg)
    if out is not None:
        defaults["out"] = out
    return argparse.Namespace(**defaults)


def _minimal_argv(command: str) -> list[str]:
    positional = {"fit": ["x", "y"], "path": ["x", "y"], "ar": ["s"], "simulate": ["c"], "export": ["f"]}
    return [command, *positional[command]]


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if args.command == "rerun":
            args = _from_manifest(args.manifest, args.out)
        return _run(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ParseError, ValueError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
