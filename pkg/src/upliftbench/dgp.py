"""Semi-synthetic data-generating process with four bias knobs.

Ground truth (neighbourhoods, propensities, potential outcomes) is always
computed on the true covariates; measurement error and masking only change
the matrix that learners get to see.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .data import CovariateMatrix

# One independent random stream per purpose, so moving one knob never
# shifts the draws used by another.
COEFFICIENTS, TREATMENT, OUTCOME_NOISE, MEASUREMENT, MASKING = 1, 2, 3, 4, 5


def stream(seed: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), purpose]))


@dataclass(frozen=True)
class DGPConfig:
    xi: float = 0.0
    theta0: float = 0.4
    theta1: float = 0.8
    omega: float = 1.2
    m: float = 0.1
    radius: float = 0.1
    outcome_noise_var: float = 0.1
    coeff_seed: int = 0
    treat_seed: int = 0
    noise_seed: int = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"radius must be positive, got {self.radius}")
        if self.omega < 0:
            raise ValueError(f"omega must be non-negative, got {self.omega}")
        if not 0 <= self.m < 1:
            raise ValueError(f"m must lie in [0, 1), got {self.m}")
        if self.outcome_noise_var < 0:
            raise ValueError(f"outcome_noise_var must be non-negative, got {self.outcome_noise_var}")


@dataclass(frozen=True)
class CoefficientSet:
    beta_T: np.ndarray
    beta0_lin: np.ndarray
    beta0_quad: np.ndarray
    beta1_lin: np.ndarray
    beta1_quad: np.ndarray
    beta1_cubic: np.ndarray

    @property
    def d(self) -> int:
        return len(self.beta_T)

    def checksums(self) -> dict[str, str]:
        return {
            name: hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()
            for name, arr in asdict(self).items()
        }


def draw_coefficients(d: int, coeff_seed: int) -> CoefficientSet:
    if d < 1:
        raise ValueError(f"d must be >= 1, got {d}")
    rng = stream(coeff_seed, COEFFICIENTS)
    beta_T = rng.normal(-0.2, math.sqrt(0.01), size=d)

    def bern(p, shape):
        return (rng.random(shape) < p).astype(np.float64)

    return CoefficientSet(
        beta_T=beta_T,
        beta0_lin=bern(0.3, d),
        beta0_quad=bern(0.2, (d, d)),
        beta1_lin=bern(0.2, d),
        beta1_quad=bern(0.5, (d, d)),
        beta1_cubic=bern(0.6, (d, d, d)),
    )


@dataclass(frozen=True)
class NeighborIndex:
    """Fixed-radius neighbourhoods in CSR layout (self included, sorted)."""

    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def sizes(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Average of ``values`` over each unit's neighbourhood."""
        adj = sp.csr_matrix(
            (np.ones(len(self.indices)), self.indices, self.indptr), shape=(self.n, self.n)
        )
        return (adj @ np.asarray(values, dtype=np.float64)) / self.sizes


def pair_distance(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance with a fixed column-by-column accumulation order."""
    acc = np.zeros(a.shape[0])
    for j in range(a.shape[1]):
        diff = a[:, j] - b[:, j]
        acc += diff * diff
    return np.sqrt(acc)


def build_neighbor_index(x: CovariateMatrix | np.ndarray, radius: float) -> NeighborIndex:
    """Exact fixed-radius neighbourhoods: j in N(i) iff ||x_i - x_j|| <= radius.

    Duplicate rows are collapsed first. A k-d tree proposes candidate pairs
    with a slightly inflated radius and every candidate is re-checked with
    :func:`pair_distance`, so the result does not depend on tree rounding.
    """
    if not radius > 0:
        raise ValueError(f"radius must be positive, got {radius}")
    values = x.values if isinstance(x, CovariateMatrix) else np.asarray(x, dtype=np.float64)
    n = values.shape[0]
    uniq, inverse = np.unique(values, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    u = uniq.shape[0]

    pairs = cKDTree(uniq).query_pairs(radius * (1 + 1e-6) + 1e-12, output_type="ndarray")
    if len(pairs):
        keep = pair_distance(uniq[pairs[:, 0]], uniq[pairs[:, 1]]) <= radius
        pairs = pairs[keep]
    rows = np.concatenate([np.arange(u), pairs[:, 0], pairs[:, 1]])
    cols = np.concatenate([np.arange(u), pairs[:, 1], pairs[:, 0]])
    groups = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(u, u))
    member = sp.csr_matrix((np.ones(n), (np.arange(n), inverse)), shape=(n, u))
    adj = (member @ groups @ member.T).tocsr()
    adj.sum_duplicates()
    adj.sort_indices()
    return NeighborIndex(adj.indptr.astype(np.int64), adj.indices.astype(np.int64))


def compute_baselines(
    x: CovariateMatrix | np.ndarray, coeffs: CoefficientSet
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return (zeta, gamma0, gamma1) for every unit.

    Sums run over all ordered index tuples. Terms are accumulated one index
    tuple at a time in lexicographic order, which fixes the floating-point
    result independently of the array layout.
    """
    values = x.values if isinstance(x, CovariateMatrix) else np.asarray(x, dtype=np.float64)
    n, d = values.shape
    if d != coeffs.d:
        raise ValueError(f"covariates have d={d}, coefficients have d={coeffs.d}")
    cols = [values[:, j] for j in range(d)]

    zeta = np.zeros(n)
    for j in range(d):
        zeta += coeffs.beta_T[j] * cols[j]

    def lin_quad(b_lin, b_quad):
        acc = np.zeros(n)
        for j in range(d):
            acc += b_lin[j] * cols[j]
        for j in range(d):
            for k in range(d):
                acc += b_quad[j, k] * cols[j] * cols[k]
        return acc

    gamma0 = lin_quad(coeffs.beta0_lin, coeffs.beta0_quad)
    gamma1 = lin_quad(coeffs.beta1_lin, coeffs.beta1_quad)
    for j in range(d):
        for k in range(d):
            jk = cols[j] * cols[k]
            for l in range(d):
                gamma1 += coeffs.beta1_cubic[j, k, l] * jk * cols[l]
    return zeta, gamma0, gamma1


def propensity_score(zeta: np.ndarray, sigma: np.ndarray, xi: float) -> np.ndarray:
    logit = xi * (zeta + 0.2 * sigma + 0.3)
    return 1.0 / (1.0 + np.exp(-logit))


def assign_treatment(
    zeta: np.ndarray, nbr: NeighborIndex, xi: float, treat_seed: int
) -> tuple[np.ndarray, np.ndarray]:
    sigma = nbr.mean(zeta)
    p = propensity_score(zeta, sigma, xi)
    u = stream(treat_seed, TREATMENT).random(len(zeta))
    t = (u < p).astype(np.int64)
    return t, p


def generate_outcomes(
    gamma0: np.ndarray,
    gamma1: np.ndarray,
    nbr: NeighborIndex,
    theta0: float,
    theta1: float,
    t: np.ndarray,
    noise_var: float,
    noise_seed: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return (y0, y1, y, tau); the noise draw is y - where(t, y1, y0)."""
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    y0 = gamma0 + theta0 * nbr.mean(gamma0)
    y1 = gamma1 + theta1 * nbr.mean(gamma1)
    eps = stream(noise_seed, OUTCOME_NOISE).normal(0.0, math.sqrt(noise_var), len(t))
    y = np.where(np.asarray(t) == 1, y1, y0) + eps
    return y0, y1, y, y1 - y0


def apply_measurement_error(
    x: CovariateMatrix | np.ndarray, omega: float, d_total: int | None = None, noise_seed: int = 0
) -> np.ndarray:
    """Add i.i.d. N(0, omega / d_total) noise (variance) to every entry."""
    if omega < 0:
        raise ValueError("omega must be non-negative")
    values = x.values if isinstance(x, CovariateMatrix) else np.asarray(x, dtype=np.float64)
    d_total = values.shape[1] if d_total is None else d_total
    if omega == 0:
        return values.copy()
    noise = stream(noise_seed, MEASUREMENT).normal(0.0, math.sqrt(omega / d_total), values.shape)
    return values + noise


def n_masked(d: int, m: float) -> int:
    return math.floor(m * d + 1e-9)


def mask_confounders(
    x: CovariateMatrix | np.ndarray, m: float, mask_seed: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Drop floor(m*d) columns chosen uniformly; return (matrix, kept column indices)."""
    if not 0 <= m < 1:
        raise ValueError(f"m must lie in [0, 1), got {m}")
    values = x.values if isinstance(x, CovariateMatrix) else np.asarray(x, dtype=np.float64)
    d = values.shape[1]
    drop = stream(mask_seed, MASKING).choice(d, size=n_masked(d, m), replace=False)
    kept = np.array([j for j in range(d) if j not in set(drop.tolist())], dtype=np.int64)
    return values[:, kept].copy(), kept


@dataclass(frozen=True)
class SemiSyntheticDataset:
    x_true: CovariateMatrix
    x_obs: np.ndarray
    t: np.ndarray
    y: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    tau: np.ndarray
    propensity: np.ndarray
    zeta: np.ndarray
    gamma0: np.ndarray
    gamma1: np.ndarray
    sigma: np.ndarray
    gamma0_nbr: np.ndarray
    gamma1_nbr: np.ndarray
    noise: np.ndarray
    observed_columns: np.ndarray
    config: DGPConfig
    coefficients: CoefficientSet
    neighbors: NeighborIndex = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.t)

    def save(self, path: str | Path) -> Path:
        """Write the unit table as CSV plus a ``.meta.json`` sidecar."""
        path = Path(path)
        d, d_obs = self.x_true.d, self.x_obs.shape[1]
        header = (
            ["id"] + [f"x{j + 1}" for j in range(d)] + [f"xobs{j + 1}" for j in range(d_obs)]
            + ["t", "propensity", "y", "y0", "y1", "tau"]
        )
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(header) + "\n")
            for i in range(self.n):
                cells = [str(i)]
                cells += [repr(float(v)) for v in self.x_true.values[i]]
                cells += [repr(float(v)) for v in self.x_obs[i]]
                cells.append(str(int(self.t[i])))
                cells += [repr(float(a[i])) for a in (self.propensity, self.y, self.y0, self.y1, self.tau)]
                fh.write(",".join(cells) + "\n")
        meta = {
            "config": asdict(self.config),
            "n": self.n,
            "d": d,
            "d_obs": d_obs,
            "observed_columns": self.observed_columns.tolist(),
            "covariate_names": list(self.x_true.column_names),
            "coefficient_sha256": self.coefficients.checksums(),
        }
        meta_path = path.with_name(path.name + ".meta.json")
        meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return meta_path


def generate(x: CovariateMatrix, config: DGPConfig) -> SemiSyntheticDataset:
    coeffs = draw_coefficients(x.d, config.coeff_seed)
    nbr = build_neighbor_index(x, config.radius)
    zeta, gamma0, gamma1 = compute_baselines(x, coeffs)
    t, p = assign_treatment(zeta, nbr, config.xi, config.treat_seed)
    y0, y1, y, tau = generate_outcomes(
        gamma0, gamma1, nbr, config.theta0, config.theta1, t,
        config.outcome_noise_var, config.noise_seed,
    )
    x_err = apply_measurement_error(x, config.omega, x.d, config.noise_seed)
    x_obs, kept = mask_confounders(x_err, config.m, config.noise_seed)
    return SemiSyntheticDataset(
        x_true=x, x_obs=x_obs, t=t, y=y, y0=y0, y1=y1, tau=tau, propensity=p,
        zeta=zeta, gamma0=gamma0, gamma1=gamma1,
        sigma=nbr.mean(zeta), gamma0_nbr=nbr.mean(gamma0), gamma1_nbr=nbr.mean(gamma1),
        noise=y - np.where(t == 1, y1, y0), observed_columns=kept,
        config=config, coefficients=coeffs, neighbors=nbr,
    )


def read_dataset_table(path: str | Path) -> dict[str, np.ndarray]:
    """Load a dataset CSV written by :meth:`SemiSyntheticDataset.save`."""
    frame = pd.read_csv(path, float_precision="round_trip")
    xobs = [c for c in frame.columns if c.startswith("xobs")]
    xtrue = [c for c in frame.columns if c.startswith("x") and c[1:].isdigit()]
    out = {
        "id": frame["id"].to_numpy(),
        "x": frame[xtrue].to_numpy(dtype=np.float64),
        "x_obs": frame[xobs].to_numpy(dtype=np.float64),
        "t": frame["t"].to_numpy(dtype=np.int64),
    }
    for col in ("propensity", "y", "y0", "y1", "tau"):
        out[col] = frame[col].to_numpy(dtype=np.float64)
    return out
