"""Benchmark sweep: cells x runs x learners, aggregation and rank correlations."""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from .config import ORACLE, ExperimentConfig, derive_seed, knob_label
from .data import CovariateMatrix, load_covariates, split, synthesize_covariates
from .dgp import DGPConfig, SemiSyntheticDataset, generate
from .errors import AggregationError, UpliftBenchError
from .learners import NETWORKS
from .metrics import LOWER_IS_BETTER, METRICS, PRACTICAL, evaluate, spearman_rank_corr
from .tuning import search_space, tune

log = logging.getLogger(__name__)

ROW_FIELDS = ("setting", "knob", "model", "run", "k", "metric", "value")


class CellError(UpliftBenchError):
    """A component failure annotated with the (setting, knob, run, model) it happened in."""

    def __init__(self, context: dict[str, Any], cause: Exception):
        self.context = context
        self.cause = cause
        where = ", ".join(f"{k}={v}" for k, v in context.items())
        super().__init__(f"[{where}] {type(cause).__name__}: {cause}")


def load_base_covariates(config: ExperimentConfig) -> CovariateMatrix:
    if config.covariates:
        x = load_covariates(config.covariates, config.covariate_mapping)
    else:
        x = synthesize_covariates(
            config.synthetic_n, config.synthetic_d, config.synthetic_discrete,
            seed=derive_seed(config.master_seed, "covariates"),
        )
    if config.subsample_n and config.subsample_n < x.n:
        rng = np.random.default_rng(derive_seed(config.master_seed, "subsample"))
        rows = np.sort(rng.choice(x.n, config.subsample_n, replace=False))
        x = x.subset(rows)
    return x


class DatasetCache:
    """Generated datasets keyed by their full DGP configuration.

    Cells whose knob levels coincide (e.g. the default column shared by
    Settings B, C and D) reuse one dataset.
    """

    def __init__(self, x: CovariateMatrix):
        self.x = x
        self._store: dict[DGPConfig, SemiSyntheticDataset] = {}

    def get(self, cfg: DGPConfig) -> SemiSyntheticDataset:
        if cfg not in self._store:
            self._store[cfg] = generate(self.x, cfg)
        return self._store[cfg]


@dataclass
class CellOutcome:
    reports: dict[str, dict[float, dict[str, float]]]  # model -> k -> metric -> value
    best_params: dict[str, dict[str, Any]] = field(default_factory=dict)


def run_cell(setting: str, knob, run_index: int, config: ExperimentConfig,
             dataset: SemiSyntheticDataset | None = None,
             extra_models: dict[str, Callable] | None = None) -> CellOutcome:
    """Split, tune, fit and score every configured model for one (setting, knob, run).

    ``extra_models`` maps a name to ``f(dataset, test_idx) -> tau_hat`` for
    injected reference predictors; the name ``oracle`` is built in.
    """
    label = knob_label(setting, knob)
    context = {"setting": setting, "knob": label, "run": run_index}
    try:
        ds = dataset if dataset is not None else generate(load_base_covariates(config), config.dgp_config(setting, knob))
        split_run = run_index if config.resplit_per_run else 0
        parts = split(ds.n, seed=derive_seed(config.master_seed, "split", split_run))
    except Exception as exc:
        raise CellError(context, exc) from exc

    x, t, y, tau = ds.x_obs, ds.t, ds.y, ds.tau
    tr, va, te = parts.train, parts.val, parts.test
    train = (x[tr], t[tr], y[tr])
    val = (x[va], t[va], y[va], tau[va])
    predictors = dict(extra_models or {})
    if ORACLE in config.models:
        predictors[ORACLE] = lambda d, idx: d.tau[idx]

    outcome = CellOutcome({})
    for model_name in config.models:
        try:
            if model_name in predictors:
                tau_hat = np.asarray(predictors[model_name](ds, te), dtype=np.float64)
            else:
                model_seed = derive_seed(config.master_seed, "model", model_name, run_index)
                budget = config.net_tuning_budget if model_name in NETWORKS else config.tuning_budget
                result = tune(
                    model_name, search_space(model_name, config.base_learner), train, val, budget,
                    model_seed, oracle_tuning=config.oracle_tuning, tuning_k=config.tuning_k,
                    base_learner=config.base_learner, s_interactions=config.s_interactions,
                    max_epochs=config.max_epochs, patience=config.patience, clip_eps=config.clip_eps,
                )
                outcome.best_params[model_name] = result.best_params
                tau_hat = result.model.predict_tau(x[te])
            if not np.all(np.isfinite(tau_hat)):
                raise UpliftBenchError("non-finite test predictions")
        except Exception as exc:
            raise CellError({**context, "model": model_name}, exc) from exc
        per_k = {}
        for k in config.k_list:
            report = evaluate(tau_hat, t[te], y[te], k, tau_true=tau[te],
                              qini_permutations=config.qini_permutations)
            per_k[k] = report.as_dict()
        outcome.reports[model_name] = per_k
        log.info("%s %s run %d %s: PEHE@30=%.4g", setting, label, run_index, model_name,
                 per_k.get(0.3, next(iter(per_k.values())))["pehe"])
    return outcome


def bench(config: ExperimentConfig, extra_models: dict[str, Callable] | None = None,
          memo: dict | None = None) -> list[dict[str, Any]]:
    """Run the whole grid; returns long-format rows (setting, knob, model, run, k, metric, value).

    Cells with identical DGP configuration, split and model seeds give
    identical results, so they are computed once and copied. Pass the same
    ``memo`` dict to successive calls that share a config to reuse cells.
    """
    x = load_base_covariates(config)
    cache = DatasetCache(x)
    memo = {} if memo is None else memo
    rows = []
    for setting, knob in config.cells():
        dgp_cfg = config.dgp_config(setting, knob)
        label = knob_label(setting, knob)
        for run in range(config.n_runs):
            key = (dgp_cfg, run)
            if key not in memo:
                memo[key] = run_cell(setting, knob, run, config, cache.get(dgp_cfg), extra_models)
            for model, per_k in memo[key].reports.items():
                for k, metrics in per_k.items():
                    for metric in METRICS:
                        rows.append({
                            "setting": setting, "knob": label, "model": model, "run": run,
                            "k": k, "metric": metric, "value": metrics[metric],
                        })
    return rows


def fmt(value: float) -> str:
    return repr(float(value))


def write_rows(rows: list[dict[str, Any]], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([r["setting"], r["knob"], r["model"], r["run"], fmt(r["k"]), r["metric"], fmt(r["value"])])


def read_rows(path: str | Path) -> list[dict[str, Any]]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != ROW_FIELDS:
            raise AggregationError(f"{path} does not have the columns {ROW_FIELDS}")
        return [
            {"setting": r["setting"], "knob": r["knob"], "model": r["model"], "run": int(r["run"]),
             "k": float(r["k"]), "metric": r["metric"], "value": float(r["value"])}
            for r in reader
        ]


# ------------------------------------------------------------------ aggregation


@dataclass
class ResultsTable:
    cells: list[tuple[str, str]]          # (setting, knob label) in sweep order
    models: list[str]
    k_list: list[float]
    n_runs: int
    values: dict[tuple, list[float]]       # (setting, knob, model, k, metric) -> per-run values
    mean: dict[tuple, float]
    std: dict[tuple, float]
    ranks: dict[tuple, dict[str, int]]     # (setting, knob, k, metric) -> model -> rank


def _ordered_unique(items):
    seen = {}
    for it in items:
        seen.setdefault(it, None)
    return list(seen)


def aggregate(rows: list[dict[str, Any]], models: list[str] | None = None, n_runs: int | None = None) -> ResultsTable:
    """Mean and sample standard deviation over runs, plus per-cell model ranks.

    Rank 1 is best: lowest PEHE, highest value for the other metrics. Equal
    means are ordered by model position, so every rank vector is a permutation.
    """
    if not rows:
        raise AggregationError("no result rows to aggregate")
    cells = _ordered_unique((r["setting"], r["knob"]) for r in rows)
    models = models or _ordered_unique(r["model"] for r in rows)
    k_list = sorted(_ordered_unique(r["k"] for r in rows))
    runs_seen = sorted({r["run"] for r in rows})
    n_runs = n_runs or len(runs_seen)

    by_key: dict[tuple, dict[int, float]] = defaultdict(dict)
    for r in rows:
        by_key[(r["setting"], r["knob"], r["model"], r["k"], r["metric"])][r["run"]] = r["value"]

    values, mean, std = {}, {}, {}
    for (s, kn) in cells:
        for model in models:
            for k in k_list:
                for metric in METRICS:
                    key = (s, kn, model, k, metric)
                    got = by_key.get(key, {})
                    missing = [run for run in range(n_runs) if run not in got]
                    if missing:
                        raise AggregationError(
                            f"missing runs {missing} for setting={s} knob={kn} model={model} k={k} metric={metric}"
                        )
                    vals = [got[run] for run in range(n_runs)]
                    values[key] = vals
                    mean[key] = float(np.mean(vals))
                    std[key] = float(np.std(vals, ddof=1)) if n_runs > 1 else math.nan

    ranks = {}
    for (s, kn) in cells:
        for k in k_list:
            for metric in METRICS:
                sign = 1.0 if metric in LOWER_IS_BETTER else -1.0
                order = sorted(range(len(models)), key=lambda i: (sign * mean[(s, kn, models[i], k, metric)], i))
                ranks[(s, kn, k, metric)] = {models[i]: pos + 1 for pos, i in enumerate(order)}
    return ResultsTable(cells, list(models), k_list, n_runs, values, mean, std, ranks)


@dataclass
class RankCorrelation:
    value: float
    n_used: int
    n_excluded: int


def rank_correlation_table(results: ResultsTable, metrics=PRACTICAL, exclude=(ORACLE,)) -> dict[tuple, RankCorrelation]:
    """Per (setting, knob, k, metric): Spearman of the model vector against ATE_k, averaged over runs.

    Runs where either vector has no rank spread are left out and counted.
    """
    models = [m for m in results.models if m not in exclude]
    if len(models) < 2:
        raise ValueError("rank correlation needs at least two models")
    table = {}
    for (s, kn) in results.cells:
        for k in results.k_list:
            for metric in metrics:
                coeffs = []
                excluded = 0
                for run in range(results.n_runs):
                    a = [results.values[(s, kn, m, k, metric)][run] for m in models]
                    b = [results.values[(s, kn, m, k, "ate")][run] for m in models]
                    rho = spearman_rank_corr(a, b)
                    if math.isnan(rho):
                        excluded += 1
                    else:
                        coeffs.append(rho)
                value = float(np.mean(coeffs)) if coeffs else math.nan
                table[(s, kn, k, metric)] = RankCorrelation(value, len(coeffs), excluded)
    return table
