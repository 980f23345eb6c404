"""Regression and propensity primitives the uplift learners are assembled from."""
from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np
from scipy.special import expit

# ---------------------------------------------------------------- ridge


@dataclass(frozen=True)
class RidgeModel:
    intercept: float
    coef: np.ndarray
    kind: str = "ridge_linear"

    @property
    def feature_dim(self) -> int:
        return len(self.coef)

    def predict(self, x) -> np.ndarray:
        x = _check_dim(x, self.feature_dim)
        return self.intercept + x @ self.coef


def _check_dim(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"expected inputs with {d} features, got shape {x.shape}")
    return x


def fit_ridge(x, y, lam: float = 0.0, sample_weight=None) -> RidgeModel:
    """Weighted least squares with an unpenalised intercept and L2 penalty ``lam`` on slopes."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if w.sum() <= 0:
        raise ValueError("sample weights sum to zero")
    x_mean = w @ x / w.sum()
    y_mean = w @ y / w.sum()
    sw = np.sqrt(w)
    a = (x - x_mean) * sw[:, None]
    b = (y - y_mean) * sw
    if lam > 0:
        a = np.vstack([a, np.sqrt(lam) * np.eye(d)])
        b = np.concatenate([b, np.zeros(d)])
    coef, _, rank, sv = np.linalg.lstsq(a, b, rcond=None)
    if rank < d:
        raise np.linalg.LinAlgError(f"singular least-squares system (rank {rank} < {d}); use lam > 0")
    return RidgeModel(float(y_mean - x_mean @ coef), coef)


@dataclass(frozen=True)
class ConstantModel:
    value: float
    feature_dim: int
    kind: str = "constant"

    def predict(self, x) -> np.ndarray:
        x = _check_dim(x, self.feature_dim)
        return np.full(x.shape[0], self.value)


# ---------------------------------------------------------------- logistic


@dataclass(frozen=True)
class PropensityModel:
    weights: np.ndarray  # intercept first
    C: float

    @property
    def feature_dim(self) -> int:
        return len(self.weights) - 1

    def predict_proba(self, x) -> np.ndarray:
        x = _check_dim(x, self.feature_dim)
        return expit(self.weights[0] + x @ self.weights[1:])


def _logistic_objective(w, xa, t, penalty):
    z = xa @ w
    # mean negative log-likelihood, computed stably
    nll = np.mean(np.logaddexp(0.0, z) - t * z)
    return nll + 0.5 * penalty * (w[1:] @ w[1:])


def logistic_gradient(w, xa, t, penalty) -> np.ndarray:
    p = expit(xa @ w)
    grad = xa.T @ (p - t) / len(t)
    grad[1:] += penalty * w[1:]
    return grad


def fit_logistic(x, t, C: float = 1.0, tol: float = 1e-8, max_iter: int = 100) -> PropensityModel:
    """L2-penalised logistic regression by damped Newton steps.

    Minimises mean log-loss + ||w||^2 / (2C) with the intercept unpenalised.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if not (np.any(t == 1) and np.any(t == 0)):
        raise ValueError("logistic fit needs both classes present")
    if not C > 0:
        raise ValueError("C must be positive")
    n, d = x.shape
    xa = np.hstack([np.ones((n, 1)), x])
    penalty = 1.0 / C
    w = np.zeros(d + 1)
    obj = _logistic_objective(w, xa, t, penalty)
    for _ in range(max_iter):
        grad = logistic_gradient(w, xa, t, penalty)
        if np.max(np.abs(grad)) < tol:
            break
        p = expit(xa @ w)
        hess = (xa * (p * (1 - p))[:, None]).T @ xa / n
        hess[1:, 1:] += penalty * np.eye(d)
        hess[0, 0] += 1e-12
        step = np.linalg.solve(hess, grad)
        scale = 1.0
        while scale > 1e-10:
            cand = w - scale * step
            cand_obj = _logistic_objective(cand, xa, t, penalty)
            if cand_obj <= obj:
                break
            scale *= 0.5
        else:
            break
        w, obj = cand, cand_obj
    return PropensityModel(w, C)


@dataclass(frozen=True)
class ConstantPropensity:
    """Fixed propensity for every unit; useful as a known nuisance."""

    p: float
    feature_dim: int

    def predict_proba(self, x) -> np.ndarray:
        x = _check_dim(x, self.feature_dim)
        return np.full(x.shape[0], float(self.p))


# ---------------------------------------------------------------- boosted trees


@dataclass(frozen=True)
class GBTConfig:
    n_estimators: int = 10
    max_depth: int = 6
    learning_rate: float = 0.3
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    min_child_weight: float = 1.0

    def __post_init__(self):
        if self.n_estimators < 0 or self.max_depth < 0:
            raise ValueError("n_estimators and max_depth must be non-negative")
        if not 0 < self.subsample <= 1 or not 0 < self.colsample_bytree <= 1:
            raise ValueError("subsample and colsample_bytree must lie in (0, 1]")
        if self.reg_alpha < 0 or self.reg_lambda < 0:
            raise ValueError("leaf penalties must be non-negative")


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray  # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x: np.ndarray) -> np.ndarray:
        node = np.zeros(x.shape[0], dtype=np.int64)
        while True:
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                return self.value[node]
            idx = np.flatnonzero(inner)
            go_left = x[idx, feat[idx]] <= self.threshold[node[idx]]
            node[idx] = np.where(go_left, self.left[node[idx]], self.right[node[idx]])


def _soft_threshold(g: np.ndarray, alpha: float) -> np.ndarray:
    if alpha == 0:
        return g
    return np.sign(g) * np.maximum(np.abs(g) - alpha, 0.0)


def _leaf_score(g, h, alpha, lam):
    tg = _soft_threshold(g, alpha)
    den = h + lam
    out = np.zeros(np.shape(g))
    np.divide(tg * tg, den, out=out, where=den > 0)
    return out


def _leaf_value(g, h, alpha, lam):
    den = h + lam
    return -_soft_threshold(np.asarray(g, dtype=np.float64), alpha) / den if den > 0 else 0.0


def build_tree(x, grad, hess, features, cfg: GBTConfig) -> Tree:
    """Exact greedy regression tree grown level by level.

    Ties in gain go to the lower feature index, then the lower threshold.
    Leaf values already include the learning-rate shrinkage.
    """
    m = x.shape[0]
    alpha, lam = cfg.reg_alpha, cfg.reg_lambda
    feature, threshold, left, right, value = [-1], [0.0], [-1], [-1], [0.0]
    node_of = np.zeros(m, dtype=np.int64)
    presorted = {f: np.argsort(x[:, f], kind="stable") for f in features}
    active = [0]
    for _depth in range(cfg.max_depth):
        if not active:
            break
        # compact ids for nodes split at this level; -1 for settled rows
        local = np.full(len(feature), -1, dtype=np.int16)
        local[active] = np.arange(len(active))
        row_lid = local[node_of]
        n_act = len(active)
        in_play = row_lid >= 0
        if not in_play.any():
            break
        g_tot = np.bincount(row_lid[in_play], weights=grad[in_play], minlength=n_act)
        h_tot = np.bincount(row_lid[in_play], weights=hess[in_play], minlength=n_act)
        parent_score = _leaf_score(g_tot, h_tot, alpha, lam)

        best_gain = np.zeros(n_act)
        best_feat = np.full(n_act, -1, dtype=np.int64)
        best_thr = np.zeros(n_act)
        for f in features:
            pre = presorted[f]
            pre = pre[in_play[pre]]
            # stable radix sort on node id keeps rows x-sorted within each node
            order = pre[np.argsort(row_lid[pre], kind="stable")]
            sl = row_lid[order].astype(np.int64)
            sx = x[order, f]
            cg = np.cumsum(grad[order])
            ch = np.cumsum(hess[order])
            # subtract totals of preceding groups so sums restart per node
            starts = np.searchsorted(sl, np.arange(n_act))
            base_g = np.where(starts > 0, cg[starts - 1], 0.0)[sl]
            base_h = np.where(starts > 0, ch[starts - 1], 0.0)[sl]
            gl = cg - base_g
            hl = ch - base_h
            gr = g_tot[sl] - gl
            hr = h_tot[sl] - hl
            valid = np.zeros(len(sl), dtype=bool)
            valid[:-1] = (sl[:-1] == sl[1:]) & (sx[:-1] < sx[1:])
            valid &= (hl >= cfg.min_child_weight) & (hr >= cfg.min_child_weight)
            if not valid.any():
                continue
            pos = np.flatnonzero(valid)
            gain = (
                _leaf_score(gl[pos], hl[pos], alpha, lam)
                + _leaf_score(gr[pos], hr[pos], alpha, lam)
                - parent_score[sl[pos]]
            )
            grp = sl[pos]
            top = np.full(n_act, -np.inf)
            np.maximum.at(top, grp, gain)
            hit = np.flatnonzero(gain == top[grp])
            first_grp, first_idx = np.unique(grp[hit], return_index=True)
            cand = hit[first_idx]
            better = gain[cand] > best_gain[first_grp]
            upd = first_grp[better]
            p = pos[cand[better]]
            lo, hi = sx[p], sx[p + 1]
            thr = lo + (hi - lo) / 2.0
            thr = np.where(thr >= hi, lo, thr)
            best_gain[upd] = gain[cand[better]]
            best_feat[upd] = f
            best_thr[upd] = thr

        next_active = []
        for a, node in enumerate(active):
            if best_feat[a] < 0:
                continue
            li, ri = len(feature), len(feature) + 1
            feature[node], threshold[node] = int(best_feat[a]), float(best_thr[a])
            left[node], right[node] = li, ri
            feature += [-1, -1]
            threshold += [0.0, 0.0]
            left += [-1, -1]
            right += [-1, -1]
            value += [0.0, 0.0]
            next_active += [li, ri]
        split_rows = np.flatnonzero(in_play)
        split_rows = split_rows[best_feat[row_lid[split_rows]] >= 0]
        if len(split_rows):
            nodes = node_of[split_rows]
            f_arr = np.asarray(feature)[nodes]
            go_left = x[split_rows, f_arr] <= np.asarray(threshold)[nodes]
            node_of[split_rows] = np.where(go_left, np.asarray(left)[nodes], np.asarray(right)[nodes])
        active = next_active

    feature_a = np.asarray(feature, dtype=np.int64)
    leaves = np.flatnonzero(feature_a < 0)
    g_leaf = np.bincount(node_of, weights=grad, minlength=len(feature))
    h_leaf = np.bincount(node_of, weights=hess, minlength=len(feature))
    value_a = np.zeros(len(feature))
    for leaf in leaves:
        value_a[leaf] = cfg.learning_rate * _leaf_value(g_leaf[leaf], h_leaf[leaf], alpha, lam)
    return Tree(
        feature_a, np.asarray(threshold), np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64), value_a,
    )


@dataclass(frozen=True)
class GBDTModel:
    base_score: float
    trees: tuple[Tree, ...]
    feature_dim: int
    config: GBTConfig
    kind: str = "gbdt"

    def predict(self, x, n_trees: int | None = None) -> np.ndarray:
        x = _check_dim(x, self.feature_dim)
        out = np.full(x.shape[0], self.base_score)
        for tree in self.trees[:n_trees]:
            out += tree.predict(x)
        return out


def fit_gbdt(x, y, config: GBTConfig = GBTConfig(), seed: int = 0, sample_weight=None) -> GBDTModel:
    """Squared-error gradient boosting with per-tree row and column subsampling."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = x.shape
    if n < 2:
        raise ValueError("boosting needs at least two rows")
    w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)
    base = float(w @ y / w.sum()) if w.sum() > 0 else 0.0
    if np.all(y == y[0]):
        base = float(y[0])
    rng = np.random.default_rng(seed)
    pred = np.full(n, base)
    trees = []
    n_rows = max(1, int(round(config.subsample * n)))
    n_cols = max(1, int(round(config.colsample_bytree * d)))
    for _ in range(config.n_estimators):
        rows = np.sort(rng.choice(n, n_rows, replace=False)) if n_rows < n else np.arange(n)
        cols = np.sort(rng.choice(d, n_cols, replace=False)) if n_cols < d else np.arange(d)
        grad = w[rows] * (pred[rows] - y[rows])
        hess = w[rows]
        tree = build_tree(x[rows], grad, hess, cols, config)
        trees.append(tree)
        pred += tree.predict(x)
    return GBDTModel(base, tuple(trees), d, config)


# ---------------------------------------------------------------- factory


@dataclass(frozen=True)
class RegressorSpec:
    """Names a base-learner family and its hyperparameters.

    ``kind`` is one of ``ridge``, ``gbdt`` or ``mlp``.
    """

    kind: str = "gbdt"
    params: dict[str, Any] = field(default_factory=dict)

    def fit(self, x, y, sample_weight=None, seed: int = 0):
        if self.kind == "ridge":
            return fit_ridge(x, y, self.params.get("lam", 0.0), sample_weight)
        if self.kind == "gbdt":
            return fit_gbdt(x, y, GBTConfig(**self.params), seed=seed, sample_weight=sample_weight)
        if self.kind == "mlp":
            from .nets import MLPConfig, fit_mlp

            if sample_weight is not None:
                raise ValueError("the mlp base learner does not take sample weights")
            return fit_mlp(x, y, MLPConfig(**{**self.params, "seed": seed}))
        raise ValueError(f"unknown base learner kind {self.kind!r}")


def describe(model) -> dict:
    """Debug summary of a fitted model; not a stable format."""
    if isinstance(model, GBDTModel):
        return {
            "kind": "gbdt",
            "base_score": model.base_score,
            "config": asdict(model.config),
            "trees": [
                {"n_nodes": len(t.feature), "splits": [(int(f), float(h)) for f, h in zip(t.feature, t.threshold) if f >= 0]}
                for t in model.trees
            ],
        }
    if isinstance(model, RidgeModel):
        return {"kind": "ridge", "intercept": model.intercept, "coef": model.coef.tolist()}
    if isinstance(model, PropensityModel):
        return {"kind": "logistic", "C": model.C, "weights": model.weights.tolist()}
    params = getattr(model, "params", None)
    if params is not None:
        return {
            "kind": type(model).__name__,
            "shapes": {k: list(v.shape) for k, v in params.items()},
            "sha256": hashlib.sha256(b"".join(params[k].tobytes() for k in sorted(params))).hexdigest(),
        }
    return {"kind": type(model).__name__}
