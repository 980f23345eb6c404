"""Hyperparameter search over the fixed search spaces of the benchmark.

Continuous ranges are searched by seeded random sampling; finite sets
(the network grids) are enumerated exhaustively when the budget allows and
sampled without replacement otherwise.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from . import learners as L
from .base_learners import RegressorSpec
from .errors import TuningError, UpliftBenchError
from .metrics import evaluate
from .nets import NetConfig

log = logging.getLogger(__name__)

# (low, high, scale, integer)
GBT_RANGES = {
    "n_estimators": (3, 10, "linear", True),
    "max_depth": (3, 10, "linear", True),
    "learning_rate": (0.01, 0.3, "log", False),
    "subsample": (0.6, 1.0, "linear", False),
    "colsample_bytree": (0.6, 1.0, "linear", False),
    "reg_alpha": (0.0, 1.0, "linear", False),
    "reg_lambda": (0.0, 1.0, "linear", False),
}
LOGISTIC_RANGES = {"C": (0.01, 10.0, "log", False)}

TARNET_GRID = {
    "hidden_layer": [50, 100, 200],
    "outcome_layer": [100, 200],
    "learning_rate": [1e-2, 1e-3],
    "batch_size": [200, 500],
}
DRAGONNET_GRID = {
    "alpha": [0.1, 0.5, 1, 2],
    "beta": [0.1, 0.5, 1, 2],
    "hidden_layer": [100, 200],
    "outcome_layer": [100, 200],
    "learning_rate": [1e-2, 1e-3],
    "batch_size": [200, 500],
}
USES_PROPENSITY = {"X", "R", "U", "DR"}


@dataclass(frozen=True)
class SearchSpace:
    ranges: dict[str, tuple] = field(default_factory=dict)
    grid: dict[str, list] = field(default_factory=dict)

    def grid_points(self) -> list[dict[str, Any]]:
        keys = list(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]

    def sample(self, rng: np.random.Generator) -> dict[str, Any]:
        point = {}
        for name, (lo, hi, scale, integer) in self.ranges.items():
            if integer:
                point[name] = int(rng.integers(lo, hi + 1))
            elif scale == "log":
                point[name] = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
            else:
                point[name] = float(rng.uniform(lo, hi))
        return point

    def contains(self, point: dict[str, Any]) -> bool:
        for name, (lo, hi, _, _) in self.ranges.items():
            if not lo <= point[name] <= hi:
                return False
        return all(point[name] in values for name, values in self.grid.items())

    def candidates(self, budget: int, rng: np.random.Generator) -> list[dict[str, Any]]:
        if budget < 1:
            raise ValueError("tuning budget must be >= 1")
        if self.grid and not self.ranges:
            points = self.grid_points()
            if budget >= len(points):
                return points
            pick = rng.choice(len(points), size=budget, replace=False)
            return [points[i] for i in pick]
        if self.grid:
            points = self.grid_points()
            return [{**points[int(rng.integers(len(points)))], **self.sample(rng)} for _ in range(budget)]
        return [self.sample(rng) for _ in range(budget)]


def search_space(model_name: str, base_learner: str = "gbdt") -> SearchSpace:
    if model_name == "TARNet":
        return SearchSpace(grid=TARNET_GRID)
    if model_name == "Dragonnet":
        return SearchSpace(grid=DRAGONNET_GRID)
    if model_name not in L.META_LEARNERS:
        raise ValueError(f"no search space for {model_name!r}")
    ranges = dict(GBT_RANGES) if base_learner == "gbdt" else {}
    if model_name in USES_PROPENSITY:
        ranges.update(LOGISTIC_RANGES)
    if base_learner == "ridge":
        ranges["lam"] = (1e-6, 10.0, "log", False)
    return SearchSpace(ranges=ranges)


def fit_learner(model_name: str, params: dict[str, Any], train: tuple, val: tuple | None = None,
                *, seed: int = 0, base_learner: str = "gbdt", s_interactions: bool = False,
                max_epochs: int = 300, patience: int = 10, clip_eps: float = 1e-3) -> L.UpliftModel:
    """Fit one learner from a flat hyperparameter dict."""
    x, t, y = train
    if model_name in L.NETWORKS:
        cfg = NetConfig(
            hidden_layer=int(params["hidden_layer"]), outcome_layer=int(params["outcome_layer"]),
            learning_rate=float(params["learning_rate"]), batch_size=int(params["batch_size"]),
            max_epochs=max_epochs, patience=patience, seed=seed,
        )
        if model_name == "TARNet":
            return L.fit_tarnet(x, t, y, cfg, val)
        return L.fit_dragonnet(x, t, y, cfg, float(params["alpha"]), float(params["beta"]), val)

    base_params = {k: v for k, v in params.items() if k in GBT_RANGES or k == "lam"}
    base = RegressorSpec(base_learner, base_params)
    prop = L.PropensitySpec(float(params.get("C", 1.0)))
    if model_name == "S":
        return L.fit_s_learner(x, t, y, base, interactions=s_interactions, seed=seed)
    if model_name == "T":
        return L.fit_t_learner(x, t, y, base, seed=seed)
    if model_name == "X":
        return L.fit_x_learner(x, t, y, base, prop, seed=seed)
    if model_name == "R":
        return L.fit_r_learner(x, t, y, base, prop, seed=seed, clip_eps=clip_eps)
    if model_name == "U":
        return L.fit_u_learner(x, t, y, base, prop, seed=seed, clip_eps=clip_eps)
    if model_name == "DR":
        return L.fit_dr_learner(x, t, y, base, prop, seed=seed, clip_eps=clip_eps)
    if model_name == "RA":
        return L.fit_ra_learner(x, t, y, base, seed=seed)
    raise ValueError(f"unknown learner {model_name!r}")


@dataclass
class TuningResult:
    best_params: dict[str, Any]
    best_score: float
    model: Any
    trials: list[tuple[dict[str, Any], float | None]]


def validation_score(tau_hat, val: tuple, oracle: bool, k: float) -> float:
    """Score to maximise: -PEHE over the whole holdout if oracle, else Uplift_k."""
    x, t, y, tau = val
    if oracle:
        return -evaluate(tau_hat, t, y, 1.0, tau_true=tau).pehe_k
    return evaluate(tau_hat, t, y, k).uplift_k


def tune(model_name: str, space: SearchSpace, train: tuple, val: tuple, budget: int, seed: int,
         *, oracle_tuning: bool = False, tuning_k: float = 0.3,
         fit: Callable[..., Any] | None = None, **fit_kwargs) -> TuningResult:
    """Try ``budget`` configurations and keep the best on the validation split.

    ``train`` is (x, t, y); ``val`` is (x, t, y, tau), with tau only read
    when ``oracle_tuning`` is set. The first trial wins ties.
    """
    fit = fit or fit_learner
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    candidates = space.candidates(budget, rng)
    best: TuningResult | None = None
    trials, failures = [], []
    for i, params in enumerate(candidates):
        try:
            model = fit(model_name, params, train, val[:3], seed=seed, **fit_kwargs)
            tau_hat = model.predict_tau(val[0])
            if not np.all(np.isfinite(tau_hat)):
                raise UpliftBenchError("non-finite validation predictions")
            score = validation_score(tau_hat, val, oracle_tuning, tuning_k)
        except (UpliftBenchError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            log.warning("trial %d of %s failed: %s", i, model_name, exc)
            failures.append(f"trial {i}: {exc}")
            trials.append((params, None))
            continue
        trials.append((params, score))
        if best is None or score > best.best_score:
            best = TuningResult(params, score, model, trials)
    if best is None:
        raise TuningError(model_name, failures)
    best.trials = trials
    return best
