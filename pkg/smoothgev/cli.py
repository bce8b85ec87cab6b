"""
Command-line surface: simulate, ingest, fit, infer, cv, test and diagnose.

Every command reads its settings from ``smoothgev.config`` and writes CSV and
JSON artifacts to ``--out``. Without ``--region`` the data are processed one
region at a time. Exit codes: 0 success, 2 invalid input, 3 a fit that did
not converge.
"""

from __future__ import annotations

import argparse
import re
import warnings
from dataclasses import replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd

from smoothgev.config import RunConfig, resolve_config
from smoothgev.cv import ScoreReport, bonferroni_adjust, cross_validate, exchangeability_test, make_folds
from smoothgev.diagnostics import diagnose, gumbel_reference_quantiles
from smoothgev.errors import (
    DomainError,
    EstimationError,
    FitError,
    IngestionError,
    ScoreError,
    SingularPrecisionError,
    SpecError,
)
from smoothgev.fit import FitOptions, FitResult, aic, fit_smooth
from smoothgev.grid import GriddedDataset, extract_txx, ingest_dataset
from smoothgev.inference import (
    FUNCTIONALS,
    draw_functional,
    interval_excludes_zero,
    interval_field,
    return_period,
    sign_census,
    summarize_regions,
)
from smoothgev.logger import FitLogger, RunLogger
from smoothgev.model import CovariateSeries, ModelSpec, load_covariate
from smoothgev.synthetic import TruthScenario, load_scenario, save_scenario, simulate, write_scenario_outputs
from smoothgev.utils.io import coefficient_table, load_fit, save_fit, write_json, write_table

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_FIT = 3

VALIDATION_ERRORS = (
    DomainError,
    EstimationError,
    IngestionError,
    ScoreError,
    SingularPrecisionError,
    SpecError,
    FileNotFoundError,
)

# null value of each functional under no change
NULL_VALUES = {"rl_diff": 0.0, "risk_ratio": 1.0, "loc_change": 0.0, "scale_change": 0.0}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Flat KEY=value config file")
    inputs = common.add_argument_group("inputs")
    inputs.add_argument("--txx", help="Annual maxima table (box_id, year, txx_celsius)")
    inputs.add_argument("--grid", help="Grid table (box_id, lon, lat, elevation_km, region)")
    inputs.add_argument("--co2", help="Covariate table (year, co2_ppm)")
    inputs.add_argument("--daily", help="Daily table (box_id, date, tmax_celsius) for ingest")
    inputs.add_argument("--scenario", help="Simulation scenario file")
    inputs.add_argument("--fit", help="Saved fit JSON to reuse instead of refitting")
    inputs.add_argument("--scores-a", help="Score table of the first model (test)")
    inputs.add_argument("--scores-b", help="Score table of the second model (test)")
    inputs.add_argument("--spacing", type=float, help="Lattice spacing in degrees")

    settings = common.add_argument_group("settings")
    settings.add_argument("--model", help="Model name, mod1..mod5")
    settings.add_argument("--models", help="Comma-separated models for cv")
    settings.add_argument("--region", help="Restrict to one region label")
    settings.add_argument("--p", type=float, help="Exceedance probability")
    settings.add_argument("--year-from", type=int, help="Reference calendar year")
    settings.add_argument("--year-to", type=int, help="Comparison calendar year")
    settings.add_argument("--draws", type=int, help="Posterior draws for intervals")
    settings.add_argument("--level", type=float, help="Per-box interval level")
    settings.add_argument("--alpha", type=float, help="Family-wise level of regional intervals")
    settings.add_argument("--bonferroni-regions", type=int,
                          help="Regions the family-wise level is split over (default: all regions in --grid)")
    settings.add_argument("--folds", type=int, help="Cross-validation folds")
    settings.add_argument("--reps", type=int, help="Sign-flip replicates of the exchangeability test")
    settings.add_argument("--score-columns", help="Comma-separated score rules to test")
    settings.add_argument("--bins", type=int, help="PIT histogram bins")
    settings.add_argument("--grid-search", action="store_const", const=True, default=None,
                          help="Choose smoothing parameters by grid search only")

    run = common.add_argument_group("run control")
    run.add_argument("--seed", type=int, help="Random seed")
    run.add_argument("--threads", type=int, help="Worker threads")
    run.add_argument("--out", help="Output directory")
    run.add_argument("--quiet", action="store_const", const=True, default=None, help="Suppress console output")

    parser = argparse.ArgumentParser(
        prog="smoothgev",
        description="Spatially smooth GEV models for gridded annual maxima",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (
        ("simulate", "Simulate a synthetic dataset from a truth scenario"),
        ("ingest", "Validate txx/grid tables, or extract annual maxima from daily data"),
        ("fit", "Fit a smooth model and write coefficients"),
        ("infer", "Return-level, risk-ratio and parameter-change intervals"),
        ("cv", "K-fold cross-validated scores for several models"),
        ("test", "Exchangeability test of two score tables"),
        ("diagnose", "PIT, Gumbel residual and Pearson residual diagnostics"),
    ):
        sub.add_parser(name, parents=[common], help=helptext)
    return parser


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _load_inputs(cfg: RunConfig) -> tuple[GriddedDataset, CovariateSeries]:
    if not (cfg.txx and cfg.grid and cfg.co2):
        raise SpecError("--txx, --grid and --co2 are required")
    data = ingest_dataset(cfg.txx, cfg.grid, spacing=cfg.spacing)
    return data, load_covariate(cfg.co2)


def _region_datasets(cfg: RunConfig, data: GriddedDataset) -> list[tuple[str, GriddedDataset]]:
    if cfg.region is not None:
        return [(cfg.region, data.subset_region(cfg.region))]
    return [(label, data.subset_region(label)) for label in data.regions()]


def _fit_options(cfg: RunConfig, logger: Optional[FitLogger] = None) -> FitOptions:
    return FitOptions(threads=cfg.threads, force_grid=cfg.grid_search, logger=logger)


def _obtain_fit(cfg: RunConfig, log: RunLogger, data: GriddedDataset, cov: CovariateSeries,
                n_datasets: int) -> FitResult:
    if cfg.fit:
        if n_datasets != 1:
            raise SpecError("--fit applies to one region; pass --region as well")
        fit = load_fit(cfg.fit)
        if fit.frame.n != data.n:
            raise SpecError(f"saved fit has {fit.frame.n} boxes but the data has {data.n}")
        log.log_info(f"loaded {fit.spec.label} fit from {cfg.fit}")
        return fit
    trace = FitLogger(enabled=not cfg.quiet)
    fit = fit_smooth(data, ModelSpec.from_name(cfg.model), cov, None, _fit_options(cfg, trace))
    trace.display_summary(f"{fit.spec.label} optimizer trace")
    return fit


def _year_indices(cfg: RunConfig, data: GriddedDataset) -> tuple[int, int]:
    t_from = 1 if cfg.year_from is None else data.year_index(cfg.year_from)
    t_to = data.T if cfg.year_to is None else data.year_index(cfg.year_to)
    return t_from, t_to


def _bonferroni_regions(cfg: RunConfig, data: GriddedDataset) -> int:
    """Regions sharing the family-wise level; a --region run keeps the full count."""
    if cfg.bonferroni_regions is not None:
        return cfg.bonferroni_regions
    return len(data.regions())


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, log: RunLogger) -> None:
    scenario = load_scenario(cfg.scenario) if cfg.scenario else TruthScenario()
    scenario = replace(scenario, seed=cfg.seed)
    data, truth = simulate(scenario)
    out = _out_dir(cfg)
    paths = write_scenario_outputs(data, truth, scenario.covariate(), out)
    scenario_path = save_scenario(scenario, out / "scenario.env")
    log.log_table(
        "Simulated dataset",
        ["region", "boxes"],
        sorted(data.region_counts().items()),
    )
    for path in [*paths.values(), scenario_path]:
        log.log_artifact(path)


def cmd_ingest(cfg: RunConfig, log: RunLogger) -> None:
    if not cfg.grid:
        raise SpecError("--grid is required")
    if cfg.daily:
        data = extract_txx(cfg.daily, cfg.grid, spacing=cfg.spacing)
    elif cfg.txx:
        data = ingest_dataset(cfg.txx, cfg.grid, spacing=cfg.spacing)
    else:
        raise SpecError("either --txx or --daily is required")
    out = _out_dir(cfg)
    txx, grid = data.to_frames()
    log.log_table(
        "Ingested dataset",
        ["boxes", "years", "observations", "missing"],
        [[data.n, f"{data.years[0]}-{data.years[-1]}", data.n_obs, int(data.missing.sum())]],
    )
    log.log_artifact(write_table(txx, out / "txx.csv"))
    log.log_artifact(write_table(grid, out / "grid.csv"))


def cmd_fit(cfg: RunConfig, log: RunLogger) -> None:
    data, cov = _load_inputs(cfg)
    out = _out_dir(cfg)
    rows = []
    for label, ds in _region_datasets(cfg, data):
        log.log_info(f"fitting {cfg.model} to region {label} ({ds.n} boxes)")
        trace = FitLogger(enabled=not cfg.quiet)
        fit = fit_smooth(ds, ModelSpec.from_name(cfg.model), cov, None, _fit_options(cfg, trace))
        trace.display_summary(f"{fit.spec.label} / {label} optimizer trace")
        stem = f"{cfg.model}_{_slug(label)}"
        log.log_artifact(save_fit(fit, out / f"fit_{stem}.json", ds.grid.box_id, label))
        log.log_artifact(write_table(coefficient_table(fit, ds.grid.box_id), out / f"coefficients_{stem}.csv"))
        lambdas = ", ".join(f"{k}={v:.3g}" for k, v in fit.lambdas.values.items())
        rows.append([label, ds.n, fit.edf, fit.marginal_loglik, fit.outer_method, lambdas])
    log.log_table("Fits", ["region", "boxes", "edf", "laplace", "outer", "lambda"], rows)


def cmd_infer(cfg: RunConfig, log: RunLogger) -> None:
    data, cov = _load_inputs(cfg)
    out = _out_dir(cfg)
    datasets = _region_datasets(cfg, data)
    t_from, t_to = _year_indices(cfg, data)
    m = _bonferroni_regions(cfg, data)
    draws = {name: [] for name in FUNCTIONALS}
    estimates = {name: [] for name in FUNCTIONALS}
    tables = {name: [] for name in FUNCTIONALS}
    labels = []
    for r, (label, ds) in enumerate(datasets):
        fit = _obtain_fit(cfg, log, ds, cov, len(datasets))
        for name, func in FUNCTIONALS.items():
            values = draw_functional(fit, name, cfg.p, t_from, t_to, cfg.draws, (cfg.seed, r), cfg.threads)
            estimate = func(fit.field, fit.frame, cfg.p, t_from, t_to)
            table = interval_field(name, values, estimate, cfg.level).to_frame(ds.grid.box_id)
            table.insert(0, "region", label)
            draws[name].append(values)
            estimates[name].append(estimate)
            tables[name].append(table)
        labels.extend([label] * ds.n)

    summary = {
        "p": cfg.p,
        "return_period": return_period(cfg.p),
        "year_from": int(data.years[t_from - 1]),
        "year_to": int(data.years[t_to - 1]),
        "draws": cfg.draws,
        "level": cfg.level,
        "alpha": cfg.alpha,
        "bonferroni_regions": m,
        "functionals": {},
    }
    rows = []
    for name in FUNCTIONALS:
        table = pd.concat(tables[name], ignore_index=True)
        log.log_artifact(write_table(table, out / f"infer_{name}.csv"))
        regional = summarize_regions(
            np.hstack(draws[name]),
            np.concatenate(estimates[name]),
            labels,
            n_regions_for_bonferroni=m,
            alpha=cfg.alpha,
            labels=[label for label, _ in datasets],
            include_all=len(datasets) > 1,
        )
        null = NULL_VALUES[name]
        interval = interval_field(name, np.hstack(draws[name]), np.concatenate(estimates[name]), cfg.level)
        summary["functionals"][name] = {
            "sign_census": sign_census(table["estimate"].to_numpy() - null),
            "interval_excludes_null": interval_excludes_zero(interval, null),
            "regions": {
                k: {"boxes": v.boxes, "estimate": v.estimate, "lower": v.lower, "upper": v.upper}
                for k, v in regional.items()
            },
        }
        for v in regional.values():
            rows.append([name, v.region, v.estimate, v.lower, v.upper])
    log.log_table("Regional means", ["functional", "region", "estimate", "lower", "upper"], rows)
    log.log_artifact(write_json(summary, out / "infer_summary.json"))


def cmd_cv(cfg: RunConfig, log: RunLogger) -> None:
    data, cov = _load_inputs(cfg)
    out = _out_dir(cfg)
    options = _fit_options(cfg)
    per_model: dict[str, list[pd.DataFrame]] = {m: [] for m in cfg.model_list()}
    means = []
    for label, ds in _region_datasets(cfg, data):
        folds = make_folds(ds, cfg.folds, cfg.seed)
        reports = []
        for name in cfg.model_list():
            spec = ModelSpec.from_name(name)
            log.log_info(f"cross-validating {spec.label} on region {label}")
            report = cross_validate(ds, spec, cov, None, folds, options, cfg.threads)
            report.aic[spec.label] = aic(fit_smooth(ds, spec, cov, None, options))
            records = report.records.copy()
            records.insert(0, "region", label)
            per_model[name].append(records)
            reports.append(report)
        table = ScoreReport.concat(reports).mean_table().reset_index()
        table.insert(0, "region", label)
        means.append(table)

    for name, frames in per_model.items():
        log.log_artifact(write_table(pd.concat(frames, ignore_index=True), out / f"scores_{name}.csv"))
    mean_table = pd.concat(means, ignore_index=True)
    log.log_artifact(write_table(mean_table, out / "cv_means.csv"))
    log.log_table("Mean held-out scores", list(mean_table.columns), mean_table.itertuples(index=False))


def _paired(a: pd.DataFrame, b: pd.DataFrame, rules: Sequence[str]) -> pd.DataFrame:
    keys = ["region", "box_id", "year"]
    for frame, which in ((a, "A"), (b, "B")):
        missing = [c for c in keys + list(rules) if c not in frame.columns]
        if missing:
            raise SpecError(f"score table {which} is missing columns {missing}")
    a = a.assign(region=a["region"].astype(str), box_id=a["box_id"].astype(str))
    b = b.assign(region=b["region"].astype(str), box_id=b["box_id"].astype(str))
    merged = a[keys + list(rules)].merge(b[keys + list(rules)], on=keys, suffixes=("_a", "_b"))
    if len(merged) != len(a) or len(merged) != len(b):
        raise SpecError("score tables do not cover the same (region, box_id, year) cells")
    return merged.sort_values(keys, kind="stable")


def _model_name(frame: pd.DataFrame, path: str) -> str:
    if "model" in frame.columns and frame["model"].nunique() == 1:
        return str(frame["model"].iloc[0])
    return Path(path).stem


def cmd_test(cfg: RunConfig, log: RunLogger) -> None:
    if not (cfg.scores_a and cfg.scores_b):
        raise SpecError("--scores-a and --scores-b are required")
    for path in (cfg.scores_a, cfg.scores_b):
        if not Path(path).exists():
            raise FileNotFoundError(f"score table {path} does not exist")
    a = pd.read_csv(cfg.scores_a, float_precision="round_trip")
    b = pd.read_csv(cfg.scores_b, float_precision="round_trip")
    rules = cfg.score_list()
    merged = _paired(a, b, rules)
    model_a, model_b = _model_name(a, cfg.scores_a), _model_name(b, cfg.scores_b)
    regions = list(dict.fromkeys(merged["region"]))
    m = cfg.bonferroni_regions or len(regions)
    rows = []
    for label in regions:
        sub = merged[merged["region"] == label]
        for rule in rules:
            x, y = sub[f"{rule}_a"].to_numpy(), sub[f"{rule}_b"].to_numpy()
            ok = np.isfinite(x) & np.isfinite(y)
            if not ok.all():
                log.log_warning(f"{label}/{rule}: {int((~ok).sum())} undefined score(s) left out")
            result = exchangeability_test(x[ok], y[ok], cfg.reps, cfg.seed, cfg.threads)
            rows.append(
                {
                    "region": label,
                    "rule": rule,
                    "model_a": model_a,
                    "model_b": model_b,
                    "mean_a": float(x[ok].mean()),
                    "mean_b": float(y[ok].mean()),
                    "n": int(ok.sum()),
                    "p_value": result.p_value,
                    "p_bonferroni": bonferroni_adjust(result.p_value, m),
                    "swapped": result.swapped,
                    "degenerate": result.degenerate,
                }
            )
    table = pd.DataFrame(rows)
    out = _out_dir(cfg)
    log.log_table(
        "Exchangeability tests",
        ["region", "rule", "p", "p (Bonferroni)"],
        [[r["region"], r["rule"], r["p_value"], r["p_bonferroni"]] for r in rows],
    )
    log.log_artifact(write_table(table, out / "test_pvalues.csv"))


def cmd_diagnose(cfg: RunConfig, log: RunLogger) -> None:
    data, cov = _load_inputs(cfg)
    out = _out_dir(cfg)
    datasets = _region_datasets(cfg, data)
    pit_frames, hist_frames, plot_frames, pearson_frames, rows = [], [], [], [], []
    for label, ds in datasets:
        fit = _obtain_fit(cfg, log, ds, cov, len(datasets))
        report = diagnose(fit, ds, bins=cfg.bins)
        obs = ds.observations()
        pit_frames.append(pd.DataFrame({"region": label, "box_id": obs["box_id"], "year": obs["year"], "pit": report.pit}))
        hist_frames.append(report.histogram.assign(region=label))
        plot_frames.append(
            pd.DataFrame(
                {
                    "region": label,
                    "position": report.pp_points[:, 0],
                    "model_probability": report.pp_points[:, 1],
                    "residual": report.qq_points[:, 0],
                    "gumbel_quantile": report.qq_points[:, 1],
                }
            )
        )
        pearson_frames.append(report.pearson.summary.assign(region=label))
        rows.append([label, report.pit.size, report.ks_statistic, report.ks_pvalue,
                     report.support_violations, report.pearson.flagged])

    log.log_table("Diagnostics", ["region", "obs", "KS", "KS p", "outside support", "flagged"], rows)
    for frames, name in (
        (pit_frames, "pit"),
        (hist_frames, "pit_histogram"),
        (plot_frames, "pp_qq"),
        (pearson_frames, "pearson"),
    ):
        log.log_artifact(write_table(pd.concat(frames, ignore_index=True), out / f"diagnose_{name}.csv"))
    log.log_artifact(write_table(gumbel_reference_quantiles(), out / "gumbel_reference.csv"))


COMMANDS: dict[str, Callable[[RunConfig, RunLogger], None]] = {
    "simulate": cmd_simulate,
    "ingest": cmd_ingest,
    "fit": cmd_fit,
    "infer": cmd_infer,
    "cv": cmd_cv,
    "test": cmd_test,
    "diagnose": cmd_diagnose,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    cli = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    log = RunLogger()
    try:
        cfg = resolve_config(cli, args.config)
    except VALIDATION_ERRORS as exc:
        log.log_error(str(exc))
        return EXIT_VALIDATION
    log.enabled = not cfg.quiet
    log.log_command_start(args.command, {k: v for k, v in cfg.as_dict().items() if v is not None})

    code, message = EXIT_OK, ""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            COMMANDS[args.command](cfg, log)
        except FitError as exc:
            code = EXIT_FIT
            message = f"fit did not converge: {exc}"
            if exc.diagnostics:
                message += f" {exc.diagnostics}"
        except VALIDATION_ERRORS as exc:
            code, message = EXIT_VALIDATION, str(exc)
    for w in caught:
        log.log_warning(f"{w.category.__name__}: {w.message}")
    if code != EXIT_OK:
        log.log_error(message)
    log.log_final_status(code)
    return code


def run() -> None:
    raise SystemExit(main())
