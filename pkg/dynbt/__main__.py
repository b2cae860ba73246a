"""dynbt CLI
Example usage:
python3 -m dynbt fit --input matches.csv --bandwidth 0.03 --out beta.csv
python3 -m dynbt cv --input matches.csv --out cv.csv --jobs 4
python3 -m dynbt check --input matches.csv
python3 -m dynbt simulate --mode bt --n 50 --m 50 --seed 7 --out matches.csv --truth truth.json
python3 -m dynbt eval --input matches.csv --beta beta.csv --truth truth.json
python3 -m dynbt bench --table 1 --seeds 20 --seed 7 --jobs 4 --out table1.json

Exit codes: 0 success, 1 usage error, 2 data or model error (as JSON on stderr).
Outputs are created, never overwritten; without --out results go to stdout.
"""

import argparse
import json
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, TextIO

import numpy as np
import pandas as pd
from loguru import logger

from . import LOG_FORMAT, __version__
from .bench import (
    ComparisonConfig, DEFAULT_CV_SUBSAMPLE, cv_curve, runtime_study, table1, table2, table4, table5, table6, to_json,
)
from .config import Settings, load_settings
from .data import Dataset, load_csv, write_csv
from .errors import DynBTError, ParseError, ShapeMismatch, UsageError, ValidationError
from .graph import check_condition1, condition1_report
from .kernel import KernelSpec
from .metrics import EvalReport, score_estimators, theory_diagnostics, trajectory_error, win_rate_loo_prob
from .simulate import (
    GPSpec, MeanMode, ProbabilityField, bt_probability_field, center_paths, generate_agnostic_matches,
    generate_agnostic_probs, generate_bt_matches, gp_sample_beta, read_truth, win_rate_scores, write_truth,
)
from .solver import fit_static, fit_trajectory, projection, rank
from .tuning import loocv, select_bandwidth


class ArgumentParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@contextmanager
def cli_logging(debug: bool = False, quiet: bool = False) -> Iterator[None]:
    """Log to the current stderr for one command, then leave the library silent again."""
    logger.remove()
    level = "DEBUG" if debug else "WARNING" if quiet else "INFO"
    handler = logger.add(sys.stderr, format=LOG_FORMAT, colorize=sys.stderr.isatty(), level=level)
    logger.enable("dynbt")
    try:
        yield
    finally:
        logger.remove(handler)
        logger.disable("dynbt")


@contextmanager
def open_output(path: Optional[Path]) -> Iterator[TextIO]:
    """stdout for None, otherwise a newly created file."""
    if path is None:
        yield sys.stdout
        return
    try:
        f = open(path, "x", encoding="utf-8", newline="")
    except FileExistsError:
        raise UsageError(f"refusing to overwrite existing file {path}")
    with f:
        yield f


def _bandwidth_arg(value: str):
    if value == "loocv":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a positive number or 'loocv', got {value!r}")


def _grid_arg(value: str) -> List[float]:
    try:
        return [float(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {value!r}")


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML file with settings (flags win on conflict)")
    common.add_argument("--debug", action="store_true", help="Log at DEBUG level")
    common.add_argument("--quiet", action="store_true", help="Log warnings and errors only")
    common.add_argument("--jobs", type=int, help="Worker processes (default 1)")
    common.add_argument("--seed", type=int, help="RNG seed")
    common.add_argument("--tol", type=float, help="Convergence tolerance")
    common.add_argument("--max-iter", "--max_iter", dest="max_iter", type=int, help="Iteration cap per fit")
    common.add_argument("--method", choices=["mm", "gradient", "newton"], help="Solver")

    smoothing = ArgumentParser(add_help=False)
    smoothing.add_argument("--kernel", choices=["gaussian", "epanechnikov"], help="Kernel family")
    smoothing.add_argument("--bandwidth", type=_bandwidth_arg, help="Bandwidth h, or loocv")
    smoothing.add_argument("--h-grid", "--h_grid", dest="h_grid", type=_grid_arg, help="Comma-separated bandwidths for loocv")
    smoothing.add_argument("--cv-subsample", "--cv_subsample", dest="cv_subsample", type=int,
                           help="Hold out only this many games in loocv")

    parser = ArgumentParser(prog="dynbt", description="Kernel-smoothed dynamic Bradley-Terry ranking")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("fit", parents=[common, smoothing], help="Fit score trajectories")
    p.add_argument("-i", "--input", type=Path, required=True, help="Matches CSV")
    p.add_argument("-o", "--out", type=Path, help="Beta CSV (default: stdout)")
    p.add_argument("--ranks", type=Path, help="Ranks JSONL (default: next to --out)")
    p.add_argument("--grid-size", type=int, help="Evaluate on this many equally spaced points instead of the observed times")
    p.add_argument("--no-warm-start", dest="warm_start", action="store_false", default=None)

    p = sub.add_parser("rank", parents=[common], help="Rank teams from a beta CSV")
    p.add_argument("--beta", type=Path, required=True, help="Beta CSV written by fit")
    p.add_argument("-o", "--out", type=Path, help="Ranks JSONL (default: stdout)")

    p = sub.add_parser("cv", parents=[common, smoothing], help="LOOCV curve over the bandwidth grid")
    p.add_argument("-i", "--input", type=Path, required=True, help="Matches CSV")
    p.add_argument("-o", "--out", type=Path, help="cv CSV (default: stdout)")

    p = sub.add_parser("check", parents=[common, smoothing], help="Check existence of the MLE")
    p.add_argument("-i", "--input", type=Path, required=True, help="Matches CSV")
    p.add_argument("-o", "--out", type=Path, help="Report JSON (default: stdout)")

    p = sub.add_parser("simulate", parents=[common], help="Generate a synthetic tournament")
    p.add_argument("--mode", choices=["bt", "agnostic"], default="bt")
    p.add_argument("--n", type=int, default=50, help="Teams")
    p.add_argument("--m", type=int, default=50, help="Rounds")
    p.add_argument("--games", type=int, default=1, help="Games per pair per round")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--mean", choices=["uniform", "group"], help="Team means (default: uniform for bt, group for agnostic)")
    p.add_argument("--groups", type=int, default=5)
    p.add_argument("--p-l", "--p_l", dest="p_l", type=float, default=0.05)
    p.add_argument("--p-u", "--p_u", dest="p_u", type=float, default=0.95)
    p.add_argument("-o", "--out", type=Path, required=True, help="Matches CSV")
    p.add_argument("--truth", type=Path, required=True, help="Truth JSON")

    p = sub.add_parser("eval", parents=[common, smoothing], help="Score an estimate against a truth file")
    p.add_argument("-i", "--input", type=Path, required=True, help="Matches CSV")
    p.add_argument("--beta", type=Path, required=True, help="Beta CSV written by fit")
    p.add_argument("--truth", type=Path, required=True, help="Truth JSON written by simulate")
    p.add_argument("--p-min", "--p_min", dest="p_min", type=float, help="Lower bound on winning probabilities (default: from the truth)")
    p.add_argument("--c-s", "--c_s", dest="c_s", type=float, help="Smoothing constant of the oracle bounds")
    p.add_argument("--eta", type=float, help="Slack exponent of the bandwidth schedules")
    p.add_argument("-o", "--out", type=Path, help="Report JSON (default: stdout)")

    p = sub.add_parser("bench", parents=[common, smoothing], help="Reproduce the synthetic experiments")
    p.add_argument("--table", choices=["1", "2", "4", "5", "6", "cv", "runtime"], required=True)
    p.add_argument("--seeds", type=int, default=20, help="Repetitions for tables 1 and 2")
    p.add_argument("--repetitions", type=int, default=50, help="Repetitions for tables 4-6")
    p.add_argument("--n", type=int, default=50, help="Teams for tables 1, 2 and cv")
    p.add_argument("--m", type=int, default=50, help="Rounds for tables 1, 2 and cv")
    p.add_argument("--mode", choices=["bt", "agnostic"], default="bt", help="Setting for the cv curve")
    p.add_argument("-o", "--out", type=Path, help="Result JSON (default: stdout)")
    return parser


SETTING_KEYS = (
    "kernel", "bandwidth", "h_grid", "tol", "max_iter", "method", "warm_start", "jobs", "seed", "cv_subsample",
    "c_s", "eta", "p_min",
)


def settings_from(args: argparse.Namespace) -> Settings:
    overrides = {k: getattr(args, k, None) for k in SETTING_KEYS}
    return load_settings(args.config, overrides)


def _require_seed(settings: Settings) -> int:
    if settings.seed is None:
        raise UsageError("--seed is required for this command")
    return settings.seed


def _solver_kwargs(settings: Settings) -> Dict[str, Any]:
    return dict(tol=settings.tol, max_iter=settings.max_iter, method=settings.method)


def _choose_bandwidth(dataset: Dataset, settings: Settings) -> float:
    if settings.bandwidth != "loocv":
        return float(settings.bandwidth)
    h_star, _ = select_bandwidth(
        dataset, settings.h_grid, family=settings.kernel, subsample=settings.cv_subsample,
        seed=settings.seed or 0, jobs=settings.jobs, **_solver_kwargs(settings),
    )
    return h_star


def write_beta_csv(f: TextIO, teams: Sequence[str], times: Sequence[float], scores: np.ndarray) -> None:
    df = pd.DataFrame(np.asarray(scores, dtype=float), columns=list(teams))
    df.insert(0, "time", np.asarray(times, dtype=float))
    df.to_csv(f, index=False, float_format="%.17g", na_rep="")


def read_beta_csv(path: Path):
    try:
        df = pd.read_csv(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise ParseError(f"cannot read {path}: {e}")
    if df.columns[0] != "time" or len(df.columns) < 3:
        raise ValidationError(f"{path} must have a time column followed by one column per team")
    return [str(c) for c in df.columns[1:]], df["time"].to_numpy(float), df.iloc[:, 1:].to_numpy(float)


def write_ranks(f: TextIO, teams: Sequence[str], times: Sequence[float], scores: np.ndarray) -> None:
    for t, row in zip(times, scores):
        ranks = {team: int(r) for team, r in zip(teams, rank(row))} if np.all(np.isfinite(row)) else None
        f.write(json.dumps({"time": float(t), "ranks": ranks}) + "\n")


def cmd_fit(args, settings: Settings) -> int:
    dataset = load_csv(args.input)
    h = _choose_bandwidth(dataset, settings)
    spec = KernelSpec(settings.kernel, h)
    if args.grid_size:
        grid = np.linspace(0.0, 1.0, args.grid_size)
        times = grid
    else:
        grid, times = None, dataset.distinct_raw_times
    reports = fit_trajectory(
        dataset, spec, grid, warm_start=settings.warm_start, jobs=settings.jobs,
        eps=settings.eps_smoothed, **_solver_kwargs(settings),
    )
    scores = np.stack([r.scores for r in reports])
    failed = sum(not r.ok for r in reports)
    if failed:
        logger.warning(f"{failed}/{len(reports)} grid points have no estimate")
    ranks_path = args.ranks
    if ranks_path is None and args.out is not None:
        ranks_path = args.out.with_suffix(".ranks.jsonl")
    with open_output(args.out) as f:
        write_beta_csv(f, dataset.teams, times, scores)
    if ranks_path is not None:
        with open_output(ranks_path) as f:
            write_ranks(f, dataset.teams, times, scores)
    logger.info(f"Fitted {len(reports)} points with h={h:.4g}")
    return 0


def cmd_rank(args, settings: Settings) -> int:
    teams, times, scores = read_beta_csv(args.beta)
    with open_output(args.out) as f:
        write_ranks(f, teams, times, scores)
    return 0


def cmd_cv(args, settings: Settings) -> int:
    dataset = load_csv(args.input)
    h_star, curve = select_bandwidth(
        dataset, settings.h_grid, family=settings.kernel, subsample=settings.cv_subsample,
        seed=settings.seed or 0, jobs=settings.jobs, **_solver_kwargs(settings),
    )
    df = pd.DataFrame([(p.h, p.nll, p.folds_skipped) for p in curve], columns=["h", "nll", "folds_skipped"])
    with open_output(args.out) as f:
        df.to_csv(f, index=False, float_format="%.17g", na_rep="nan")
    logger.info(f"h* = {h_star:.4g}")
    if args.out is not None:
        print(json.dumps({"h_star": h_star}))
    return 0


def cmd_check(args, settings: Settings) -> int:
    dataset = load_csv(args.input)
    spec = None
    if settings.bandwidth != "loocv":
        spec = KernelSpec(settings.kernel, float(settings.bandwidth))
    report = condition1_report(dataset, spec)
    with open_output(args.out) as f:
        f.write(json.dumps(report, sort_keys=True) + "\n")
    # raises with the components and witness when the aggregated graph is disconnected
    check_condition1(dataset.total_count_matrix(), settings.eps_raw, dataset.teams)
    return 0


def cmd_simulate(args, settings: Settings) -> int:
    seed = _require_seed(settings)
    rng = np.random.default_rng(seed)
    mean = MeanMode(args.mean or ("uniform" if args.mode == "bt" else "group"))
    gp = GPSpec(args.m, args.alpha, args.r, mean=mean, groups=args.groups)
    times = np.arange(1, args.m + 1, dtype=float)
    if args.mode == "bt":
        beta = gp_sample_beta(args.n, gp, rng)
        dataset = generate_bt_matches(beta, args.games, rng)
        truth = dict(beta=beta)
    else:
        prob = generate_agnostic_probs(args.n, args.m, gp, args.p_l, args.p_u, rng)
        dataset = generate_agnostic_matches(prob, args.games, rng)
        truth = dict(p=prob.p)
    for path in (args.out, args.truth):
        if Path(path).exists():
            raise UsageError(f"refusing to overwrite existing file {path}")
    write_csv(dataset, args.out, mode="x")
    write_truth(args.truth, args.mode, dataset.teams, times, file_mode="x", **truth)
    logger.info(f"Wrote {dataset.n_records} records to {args.out}")
    return 0


def _truth_paths(truth: Dict[str, Any], settings: Settings) -> np.ndarray:
    """Centered truth, shape (M, N), on the truth file's time axis."""
    if truth["mode"] == "bt":
        return center_paths(truth["beta"]).T
    p = truth["p"]
    return np.stack([projection(p[:, :, k], settings.tol, settings.max_iter) for k in range(p.shape[2])])


def _truth_p_min(truth: Dict[str, Any]) -> float:
    field = bt_probability_field(truth["beta"]) if truth["mode"] == "bt" else ProbabilityField(truth["p"])
    return field.p_min


def cmd_eval(args, settings: Settings) -> int:
    dataset = load_csv(args.input)
    teams, times, est = read_beta_csv(args.beta)
    truth = read_truth(args.truth)
    if list(truth["teams"]) != teams:
        raise ShapeMismatch("beta and truth files list different teams")
    if set(teams) != set(dataset.teams):
        raise ShapeMismatch("beta file and matches list different teams")
    order = [dataset.index[t] for t in teams]
    truth_times = np.asarray(truth["times"], dtype=float)
    pos = np.searchsorted(truth_times, times)
    if np.any(pos >= len(truth_times)) or not np.allclose(truth_times[np.minimum(pos, len(truth_times) - 1)], times):
        raise ShapeMismatch("beta file times are not times of the truth file")
    true_paths = _truth_paths(truth, settings)[pos]

    observed = np.searchsorted(times, dataset.distinct_raw_times)
    if np.any(observed >= len(times)) or not np.allclose(times[np.minimum(observed, len(times) - 1)], dataset.distinct_raw_times):
        raise ShapeMismatch("beta file must contain every observed time of the matches")

    h = None if settings.bandwidth == "loocv" else float(settings.bandwidth)
    cv = dict(subsample=settings.cv_subsample, seed=settings.seed or 0,
              jobs=settings.jobs, **_solver_kwargs(settings))
    static = np.stack([r.scores for r in fit_static(dataset, **_solver_kwargs(settings))])[:, order]
    win_rate = win_rate_scores(dataset)[:, order]
    loo = {"win_rate": (win_rate_loo_prob(dataset), None)}
    try:
        result = loocv(dataset, None, **cv)
        loo["static_bt"] = (result.loo_prob, result.nll)
    except DynBTError as e:
        logger.warning(f"No static LOO metrics: {e.message}")
    if h is not None:
        result = loocv(dataset, KernelSpec(settings.kernel, h), **cv)
        loo["dynamic_bt"] = (result.loo_prob, result.nll)
    truth_obs = true_paths[observed]
    rows = score_estimators(dataset, truth_obs, {"win_rate": win_rate, "static_bt": static}, loo)
    rows += score_estimators(dataset, true_paths, {"dynamic_bt": est}, loo)
    uniform = trajectory_error(est, true_paths)[1] if np.all(np.isfinite(est)) else None
    theory = None
    if h is not None:
        p_min = settings.p_min if settings.p_min is not None else _truth_p_min(truth)
        try:
            theory = theory_diagnostics(
                dataset, KernelSpec(settings.kernel, h), truth_obs[:, np.argsort(order)], p_min,
                c_s=settings.c_s, eta=settings.eta,
            )
        except DynBTError as e:
            logger.warning(f"No oracle-bound diagnostics: {e.message}")
    report = EvalReport(
        mode=truth["mode"], n_teams=len(teams), n_times=len(times), bandwidth=h, rows=rows, uniform_error=uniform,
        theory=theory,
    )
    with open_output(args.out) as f:
        f.write(json.dumps(report.model_dump(mode="json"), sort_keys=True) + "\n")
    return 0


def cmd_bench(args, settings: Settings) -> int:
    seed = _require_seed(settings)
    jobs = settings.jobs
    h = None if settings.bandwidth == "loocv" else float(settings.bandwidth)
    cfg = dict(
        n_teams=args.n, n_times=args.m, bandwidth=h, h_grid=settings.h_grid, family=settings.kernel,
        tol=settings.tol, max_iter=settings.max_iter, method=settings.method,
        cv_subsample=settings.cv_subsample or DEFAULT_CV_SUBSAMPLE,
    )
    if args.table == "1":
        result = table1(args.seeds, seed, jobs, **cfg)
    elif args.table == "2":
        result = table2(args.seeds, seed, jobs, **cfg)
    elif args.table == "4":
        result = table4(args.repetitions, seed, jobs)
    elif args.table == "5":
        result = table5(args.repetitions, seed, jobs)
    elif args.table == "6":
        result = table6(args.repetitions, seed, jobs)
    elif args.table == "cv":
        result = cv_curve(seed, ComparisonConfig(mode=args.mode, **cfg), jobs)
    else:
        result = runtime_study([(args.n, m) for m in (10, 20, 50)], seed=seed, bandwidth=h or 0.03)
    with open_output(args.out) as f:
        f.write(to_json(result))
    return 0


COMMANDS = {
    "fit": cmd_fit,
    "rank": cmd_rank,
    "cv": cmd_cv,
    "check": cmd_check,
    "simulate": cmd_simulate,
    "eval": cmd_eval,
    "bench": cmd_bench,
}


def report_error(error: DynBTError) -> int:
    sys.stderr.write(json.dumps(error.to_dict(), sort_keys=True) + "\n")
    return error.exit_code


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except DynBTError as e:
        return report_error(e)
    with cli_logging(args.debug, args.quiet):
        try:
            settings = settings_from(args)
            return COMMANDS[args.command](args, settings)
        except DynBTError as e:
            logger.debug(f"{e.code}: {e.message}")
            return report_error(e)
        except FileNotFoundError as e:
            return report_error(UsageError(f"no such file: {e.filename}"))


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
