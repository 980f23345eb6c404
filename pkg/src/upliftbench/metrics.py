"""Top-k uplift metrics over a population ranked by predicted effect.

Oracle metrics (PEHE_k, ATE_k) need the true effects; practical metrics
(Uplift_k, AUUC_k, Qini_k) use only observed treatment and outcome.
Prefix means of an arm with no units yet are taken as 0, and the Qini
control-to-treated ratio is 0 while the control arm is empty.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

METRICS = ("pehe", "ate", "uplift", "auuc", "qini")
PRACTICAL = ("uplift", "auuc", "qini")
# Lower is better for these; higher for everything else.
LOWER_IS_BETTER = frozenset({"pehe"})


def top_k_count(n: int, k_fraction: float) -> int:
    return max(1, math.floor(n * k_fraction + 1e-9))


@dataclass(frozen=True)
class RankedPopulation:
    order: np.ndarray
    tau_hat: np.ndarray
    tau_true: np.ndarray | None
    t: np.ndarray
    y: np.ndarray
    k_fraction: float
    n_k: int

    @property
    def n(self) -> int:
        return len(self.order)


def rank_population(tau_hat, tau_true, t, y, k_fraction: float) -> RankedPopulation:
    """Sort units by predicted effect, descending; ties keep original order."""
    tau_hat = np.asarray(tau_hat, dtype=np.float64)
    t = np.asarray(t).astype(np.int64)
    y = np.asarray(y, dtype=np.float64)
    n = len(tau_hat)
    lengths = {len(t), len(y)} | ({len(tau_true)} if tau_true is not None else set())
    if lengths != {n}:
        raise ValueError("tau_hat, tau_true, t and y must have equal lengths")
    if n == 0:
        raise ValueError("empty population")
    if not 0 < k_fraction <= 1:
        raise ValueError(f"k_fraction must lie in (0, 1], got {k_fraction}")
    if tau_true is not None:
        tau_true = np.asarray(tau_true, dtype=np.float64)
    order = np.argsort(-tau_hat, kind="stable")
    return RankedPopulation(order, tau_hat, tau_true, t, y, k_fraction, top_k_count(n, k_fraction))


def _require_truth(rp: RankedPopulation) -> np.ndarray:
    if rp.tau_true is None:
        raise ValueError("this metric needs the true effects")
    return rp.tau_true


def pehe_at_k(rp: RankedPopulation) -> float:
    top = rp.order[:rp.n_k]
    err = rp.tau_hat[top] - _require_truth(rp)[top]
    return float(np.sqrt(np.mean(err * err)))


def ate_at_k(rp: RankedPopulation) -> float:
    return float(np.mean(_require_truth(rp)[rp.order[:rp.n_k]]))


@dataclass(frozen=True)
class PrefixCounts:
    """Cumulative arm counts and outcome sums; entry i-1 covers the top-i units."""

    n_treated: np.ndarray
    n_control: np.ndarray
    sum_treated: np.ndarray
    sum_control: np.ndarray

    @property
    def n(self) -> int:
        return len(self.n_treated)

    def arm_means(self) -> tuple[np.ndarray, np.ndarray]:
        return _safe_div(self.sum_treated, self.n_treated), _safe_div(self.sum_control, self.n_control)


def _safe_div(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros(len(num))
    np.divide(num, den, out=out, where=den > 0)
    return out


def build_prefix_counts(rp: RankedPopulation) -> PrefixCounts:
    t = rp.t[rp.order]
    y = rp.y[rp.order]
    treated = t == 1
    return PrefixCounts(
        np.cumsum(treated).astype(np.int64),
        np.cumsum(~treated).astype(np.int64),
        np.cumsum(np.where(treated, y, 0.0)),
        np.cumsum(np.where(treated, 0.0, y)),
    )


def uplift_curve(pc: PrefixCounts) -> np.ndarray:
    mean_t, mean_c = pc.arm_means()
    return (mean_t - mean_c) * (pc.n_treated + pc.n_control)


def qini_curve(pc: PrefixCounts) -> np.ndarray:
    return pc.sum_treated - pc.sum_control * _safe_div(pc.n_treated.astype(np.float64), pc.n_control)


def _trapezoid(values: np.ndarray, n_k: int) -> float:
    v = values[:n_k]
    return float(np.sum((v[:-1] + v[1:]) / 2.0))


def uplift_at_k(pc: PrefixCounts, n_k: int) -> float:
    mean_t, mean_c = pc.arm_means()
    return float(mean_t[n_k - 1] - mean_c[n_k - 1])


def auuc_at_k(pc: PrefixCounts, n_k: int) -> float:
    """Trapezoid area under the uplift curve over the top n_k units, divided by n_k."""
    if n_k < 1:
        raise ValueError("n_k must be >= 1")
    return _trapezoid(uplift_curve(pc), n_k) / n_k


def random_qini_curve(pc: PrefixCounts) -> np.ndarray:
    """Expected Qini curve of random targeting: the diagonal to the whole-sample value."""
    full = qini_curve(pc)[-1]
    i = np.arange(1, pc.n + 1)
    return (i / pc.n) * full


def qini_at_k(
    pc: PrefixCounts,
    n_k: int,
    *,
    random_permutations: int = 0,
    t: np.ndarray | None = None,
    y: np.ndarray | None = None,
    seed: int = 0,
) -> float:
    """(model Qini area - random-targeting area) over the top n_k units, divided by n_k.

    With ``random_permutations > 0`` the random baseline is averaged over that
    many seeded shuffles of (t, y) instead of the analytic diagonal.
    """
    if n_k < 1:
        raise ValueError("n_k must be >= 1")
    model_area = _trapezoid(qini_curve(pc), n_k)
    if random_permutations <= 0:
        random_area = _trapezoid(random_qini_curve(pc), n_k)
    else:
        if t is None or y is None:
            raise ValueError("permutation baseline needs t and y")
        rng = np.random.default_rng(seed)
        areas = []
        for _ in range(random_permutations):
            perm = rng.permutation(len(t))
            rp = RankedPopulation(perm, np.zeros(len(t)), None, np.asarray(t), np.asarray(y), 1.0, len(t))
            areas.append(_trapezoid(qini_curve(build_prefix_counts(rp)), n_k))
        random_area = float(np.mean(areas))
    return (model_area - random_area) / n_k


@dataclass(frozen=True)
class MetricReport:
    uplift_k: float
    auuc_k: float
    qini_k: float
    k_fraction: float
    n_k: int
    pehe_k: float | None = None
    ate_k: float | None = None

    def as_dict(self) -> dict[str, float]:
        out = {"uplift": self.uplift_k, "auuc": self.auuc_k, "qini": self.qini_k}
        if self.pehe_k is not None:
            out["pehe"] = self.pehe_k
        if self.ate_k is not None:
            out["ate"] = self.ate_k
        return out


def evaluate(tau_hat, t, y, k_fraction: float, tau_true=None, qini_permutations: int = 0) -> MetricReport:
    """All five metrics at one k (oracle ones only when tau_true is given)."""
    rp = rank_population(tau_hat, tau_true, t, y, k_fraction)
    pc = build_prefix_counts(rp)
    return MetricReport(
        uplift_k=uplift_at_k(pc, rp.n_k),
        auuc_k=auuc_at_k(pc, rp.n_k),
        qini_k=qini_at_k(pc, rp.n_k, random_permutations=qini_permutations, t=rp.t, y=rp.y),
        k_fraction=k_fraction,
        n_k=rp.n_k,
        pehe_k=pehe_at_k(rp) if tau_true is not None else None,
        ate_k=ate_at_k(rp) if tau_true is not None else None,
    )


def midranks(values) -> np.ndarray:
    """1-based ranks with tied values sharing the average of their positions."""
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    start = 0
    n = len(values)
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        ranks[order[start:stop]] = (start + stop + 1) / 2.0
        start = stop
    return ranks


def spearman_rank_corr(a, b) -> float:
    """Pearson correlation of mid-ranks; NaN when either input has no rank spread."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) != len(b) or len(a) < 2:
        raise ValueError("need two equal-length vectors of length >= 2")
    ra = midranks(a)
    rb = midranks(b)
    ra -= ra.mean()
    rb -= rb.mean()
    den = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if den == 0:
        return math.nan
    return float(np.clip((ra @ rb) / den, -1.0, 1.0))
