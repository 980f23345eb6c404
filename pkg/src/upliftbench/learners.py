"""The nine uplift estimators behind one fit / predict_tau interface.

Meta-learners take a base regressor spec (anything with
``fit(x, y, sample_weight=None, seed=0)``) and a propensity spec (anything
with ``fit(x, t)``, or an already fitted model with ``predict_proba``).
Fitted nuisances can be injected through ``nuisances`` to bypass fitting.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .base_learners import ConstantModel, RegressorSpec, fit_logistic
from .nets import NetConfig, TrainResult, TwoHeadNet, fit_two_head

META_LEARNERS = ("S", "T", "X", "R", "U", "DR", "RA")
NETWORKS = ("TARNet", "Dragonnet")
ALL_LEARNERS = META_LEARNERS + NETWORKS

DEFAULT_CLIP_EPS = 1e-3


@dataclass(frozen=True)
class PropensitySpec:
    C: float = 1.0

    def fit(self, x, t):
        return fit_logistic(x, t, self.C)


def _as_2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-d feature matrix, got shape {x.shape}")
    return x


def _check_arms(x, t, y):
    x = _as_2d(x)
    t = np.asarray(t).astype(np.int64)
    y = np.asarray(y, dtype=np.float64)
    if not (len(x) == len(t) == len(y)):
        raise ValueError("x, t and y must have the same number of rows")
    if not set(np.unique(t)) <= {0, 1}:
        raise ValueError("treatment must be binary 0/1")
    if t.sum() == 0 or t.sum() == len(t):
        raise ValueError("both treatment arms must be present")
    return x, t, y


def _seed(seed: int, i: int) -> int:
    return int(np.random.SeedSequence([seed, i]).generate_state(1)[0])


def _fit_prop(prop, x, t):
    if hasattr(prop, "predict_proba"):
        return prop
    return prop.fit(x, t)


def _guard_denominator(values: np.ndarray, clip_eps: float, what: str) -> None:
    if np.min(np.abs(values)) < clip_eps:
        raise AssertionError(f"{what} below the clipping bound {clip_eps}")


@dataclass
class UpliftModel:
    name: str
    feature_dim: int
    components: dict[str, Any]
    clip_eps: float = DEFAULT_CLIP_EPS
    options: dict[str, Any] = field(default_factory=dict)

    def predict_tau(self, x) -> np.ndarray:
        x = _as_2d(x)
        if x.shape[1] != self.feature_dim:
            raise ValueError(f"{self.name}-learner was fit on {self.feature_dim} features, got {x.shape[1]}")
        tau = self._tau(x)
        return np.asarray(tau, dtype=np.float64)

    def _tau(self, x):
        c = self.components
        if self.name == "S":
            mu = c["mu"]
            return mu.predict(s_features(x, 1, self.options["interactions"])) - mu.predict(
                s_features(x, 0, self.options["interactions"])
            )
        if self.name == "T":
            return c["mu1"].predict(x) - c["mu0"].predict(x)
        if self.name == "X":
            pi = c["pi"].predict_proba(x)
            return (1 - pi) * c["tau1"].predict(x) + pi * c["tau0"].predict(x)
        if self.name in ("R", "U", "DR", "RA"):
            return c["tau"].predict(x)
        if self.name in NETWORKS:
            q0, q1 = c["net"].heads(x)
            return q1 - q0
        raise ValueError(f"unknown learner {self.name!r}")


def predict_tau(model: UpliftModel, x) -> np.ndarray:
    return model.predict_tau(x)


def s_features(x, t, interactions: bool = False) -> np.ndarray:
    t_col = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(x),))[:, None]
    cols = [x, t_col]
    if interactions:
        cols.append(x * t_col)
    return np.hstack(cols)


def fit_s_learner(x, t, y, base=RegressorSpec(), *, interactions: bool = False, seed: int = 0) -> UpliftModel:
    """One regression on [x, t] (plus t*x columns if ``interactions``)."""
    x, t, y = _check_arms(x, t, y)
    mu = base.fit(s_features(x, t, interactions), y, seed=_seed(seed, 0))
    return UpliftModel("S", x.shape[1], {"mu": mu}, options={"interactions": interactions})


def _fit_arm(base, x, y, seed):
    # a single-unit arm cannot be split or regressed; fall back to its mean
    if len(y) < 2:
        return ConstantModel(float(np.mean(y)), x.shape[1])
    return base.fit(x, y, seed=seed)


def _arm_models(x, t, y, base, seed, nuisances):
    nuisances = nuisances or {}
    mu1 = nuisances.get("mu1") or _fit_arm(base, x[t == 1], y[t == 1], _seed(seed, 1))
    mu0 = nuisances.get("mu0") or _fit_arm(base, x[t == 0], y[t == 0], _seed(seed, 0))
    return mu0, mu1


def fit_t_learner(x, t, y, base=RegressorSpec(), *, seed: int = 0) -> UpliftModel:
    x, t, y = _check_arms(x, t, y)
    mu0, mu1 = _arm_models(x, t, y, base, seed, None)
    return UpliftModel("T", x.shape[1], {"mu0": mu0, "mu1": mu1})


def fit_x_learner(x, t, y, base=RegressorSpec(), prop=PropensitySpec(), *, seed: int = 0,
                  nuisances: dict | None = None) -> UpliftModel:
    x, t, y = _check_arms(x, t, y)
    mu0, mu1 = _arm_models(x, t, y, base, seed, nuisances)
    treated, control = t == 1, t == 0
    d1 = y[treated] - mu0.predict(x[treated])
    d0 = mu1.predict(x[control]) - y[control]
    tau1 = _fit_arm(base, x[treated], d1, _seed(seed, 2))
    tau0 = _fit_arm(base, x[control], d0, _seed(seed, 3))
    pi = (nuisances or {}).get("pi") or _fit_prop(prop, x, t)
    return UpliftModel("X", x.shape[1], {"mu0": mu0, "mu1": mu1, "tau0": tau0, "tau1": tau1, "pi": pi})


def _residuals(x, t, y, base, prop, seed, nuisances):
    nuisances = nuisances or {}
    mu = nuisances.get("mu") or base.fit(x, y, seed=_seed(seed, 4))
    pi = nuisances.get("pi") or _fit_prop(prop, x, t)
    return mu, pi, y - mu.predict(x), t - pi.predict_proba(x)


def r_learner_objective(tau_hat, r_y, r_t) -> float:
    return float(np.mean((r_y - tau_hat * r_t) ** 2))


def fit_r_learner(x, t, y, base=RegressorSpec(), prop=PropensitySpec(), *, seed: int = 0,
                  nuisances: dict | None = None, clip_eps: float = DEFAULT_CLIP_EPS) -> UpliftModel:
    """Minimise sum (r_y - tau(x) r_t)^2 as a regression of r_y/r_t weighted by r_t^2.

    Rows with r_t == 0 get zero weight.
    """
    x, t, y = _check_arms(x, t, y)
    mu, pi, r_y, r_t = _residuals(x, t, y, base, prop, seed, nuisances)
    weight = r_t * r_t
    target = np.zeros(len(y))
    nz = r_t != 0
    target[nz] = r_y[nz] / r_t[nz]
    tau = base.fit(x, target, sample_weight=weight, seed=_seed(seed, 5))
    return UpliftModel("R", x.shape[1], {"mu": mu, "pi": pi, "tau": tau}, clip_eps)


def clip_signed(values: np.ndarray, clip_eps: float) -> np.ndarray:
    """sign(v) * max(|v|, clip_eps), with sign(0) taken as +1."""
    sign = np.where(values >= 0, 1.0, -1.0)
    return sign * np.maximum(np.abs(values), clip_eps)


def fit_u_learner(x, t, y, base=RegressorSpec(), prop=PropensitySpec(), *, seed: int = 0,
                  nuisances: dict | None = None, clip_eps: float = DEFAULT_CLIP_EPS) -> UpliftModel:
    x, t, y = _check_arms(x, t, y)
    mu, pi, r_y, r_t = _residuals(x, t, y, base, prop, seed, nuisances)
    r_t = clip_signed(r_t, clip_eps)
    _guard_denominator(r_t, clip_eps, "treatment residual")
    tau = base.fit(x, r_y / r_t, seed=_seed(seed, 5))
    return UpliftModel("U", x.shape[1], {"mu": mu, "pi": pi, "tau": tau}, clip_eps)


def dr_pseudo_outcomes(t, y, mu0_hat, mu1_hat, pi_hat, clip_eps: float = DEFAULT_CLIP_EPS):
    """Return (Y1_DR, Y0_DR) with the propensity clipped to [clip_eps, 1 - clip_eps]."""
    pi = np.clip(pi_hat, clip_eps, 1 - clip_eps)
    _guard_denominator(pi, clip_eps, "propensity")
    _guard_denominator(1 - pi, clip_eps * (1 - 1e-12), "1 - propensity")
    y1 = mu1_hat + t / pi * (y - mu1_hat)
    y0 = mu0_hat + (1 - t) / (1 - pi) * (y - mu0_hat)
    return y1, y0


def fit_dr_learner(x, t, y, base=RegressorSpec(), prop=PropensitySpec(), *, seed: int = 0,
                   nuisances: dict | None = None, clip_eps: float = DEFAULT_CLIP_EPS) -> UpliftModel:
    x, t, y = _check_arms(x, t, y)
    mu0, mu1 = _arm_models(x, t, y, base, seed, nuisances)
    pi = (nuisances or {}).get("pi") or _fit_prop(prop, x, t)
    y1, y0 = dr_pseudo_outcomes(t, y, mu0.predict(x), mu1.predict(x), pi.predict_proba(x), clip_eps)
    tau = base.fit(x, y1 - y0, seed=_seed(seed, 5))
    return UpliftModel("DR", x.shape[1], {"mu0": mu0, "mu1": mu1, "pi": pi, "tau": tau}, clip_eps)


def ra_pseudo_outcomes(t, y, mu0_hat, mu1_hat) -> np.ndarray:
    return t * (y - mu0_hat) + (1 - t) * (mu1_hat - y)


def fit_ra_learner(x, t, y, base=RegressorSpec(), *, seed: int = 0, nuisances: dict | None = None) -> UpliftModel:
    x, t, y = _check_arms(x, t, y)
    mu0, mu1 = _arm_models(x, t, y, base, seed, nuisances)
    pseudo = ra_pseudo_outcomes(t, y, mu0.predict(x), mu1.predict(x))
    tau = base.fit(x, pseudo, seed=_seed(seed, 5))
    return UpliftModel("RA", x.shape[1], {"mu0": mu0, "mu1": mu1, "tau": tau})


def fit_tarnet(x, t, y, net_config: NetConfig = NetConfig(), val: tuple | None = None) -> UpliftModel:
    """Shared trunk with two outcome heads; each unit's loss passes through its own arm's head.

    ``val`` is an optional (x, t, y) holdout for early stopping.
    """
    x, t, y = _check_arms(x, t, y)
    net, history = fit_two_head(x, t, y, net_config, val)
    return UpliftModel("TARNet", x.shape[1], {"net": net, "history": history})


def fit_dragonnet(x, t, y, net_config: NetConfig = NetConfig(), alpha: float = 1.0, beta: float = 1.0,
                  val: tuple | None = None) -> UpliftModel:
    """TARNet plus a propensity head (weight ``alpha``) and targeted regularisation (weight ``beta``)."""
    if alpha < 0 or beta < 0:
        raise ValueError("alpha and beta must be non-negative")
    x, t, y = _check_arms(x, t, y)
    net, history = fit_two_head(x, t, y, net_config, val, alpha=alpha, beta=beta, with_propensity=True)
    return UpliftModel("Dragonnet", x.shape[1], {"net": net, "history": history},
                       options={"alpha": alpha, "beta": beta})
