"""Experiment configuration, the bias-setting grid and derived seeds."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .dgp import DGPConfig
from .learners import ALL_LEARNERS

ORACLE = "oracle"

# setting -> (knob name, grid); the knob for B is the (theta0, theta1) pair
SETTINGS: dict[str, tuple[str, list]] = {
    "A": ("xi", [0.8, 1.6, 2.4]),
    "B": ("theta", [(0.4, 0.8), (0.5, 0.95), (0.6, 1.1)]),
    "C": ("omega", [1.2, 2.4, 3.6]),
    "D": ("m", [0.1, 0.3, 0.5]),
}

# knob levels held fixed while another knob varies
FIXED_KNOBS = {"xi": 0.0, "theta0": 0.4, "theta1": 0.8, "omega": 1.2, "m": 0.1}


def knob_label(setting: str, knob) -> str:
    if setting == "B":
        return f"{float(knob[0]):g}"
    return f"{float(knob):g}"


def parse_knob(setting: str, text: str):
    """Inverse of :func:`knob_label`; a Setting-B label names theta0 from the grid."""
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; expected one of {sorted(SETTINGS)}")
    if setting == "B":
        if "," in text:
            a, b = (float(v) for v in text.split(","))
            return (a, b)
        for pair in SETTINGS["B"][1]:
            if abs(pair[0] - float(text)) < 1e-12:
                return pair
        raise ValueError(f"theta0={text} is not on the Setting B grid; pass 'theta0,theta1'")
    return float(text)


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit seed from the master seed and any labels."""
    text = "|".join([str(int(master_seed))] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


@dataclass
class ExperimentConfig:
    settings: list[str] = field(default_factory=lambda: ["A", "B", "C", "D"])
    knobs: dict[str, list] = field(default_factory=dict)
    n_runs: int = 10
    k_list: list[float] = field(default_factory=lambda: [0.1, 0.3, 0.5, 0.7])
    models: list[str] = field(default_factory=lambda: list(ALL_LEARNERS))
    base_learner: str = "gbdt"
    s_interactions: bool = False
    tuning_budget: int = 3
    net_tuning_budget: int = 2
    oracle_tuning: bool = False
    tuning_k: float = 0.3
    master_seed: int = 0
    resplit_per_run: bool = True
    subsample_n: int | None = None
    covariates: str | None = None
    covariate_mapping: str | None = None
    synthetic_n: int = 64000
    synthetic_d: int = 8
    synthetic_discrete: int = 7
    radius: float = 0.1
    outcome_noise_var: float = 0.1
    fixed_knobs: dict[str, float] = field(default_factory=lambda: dict(FIXED_KNOBS))
    max_epochs: int = 300
    patience: int = 10
    qini_permutations: int = 0
    clip_eps: float = 1e-3

    def __post_init__(self):
        unknown = [s for s in self.settings if s not in SETTINGS]
        if unknown:
            raise ValueError(f"unknown settings {unknown}")
        if self.n_runs < 1:
            raise ValueError("n_runs must be >= 1")
        bad = [m for m in self.models if m not in ALL_LEARNERS and m != ORACLE]
        if bad:
            raise ValueError(f"unknown models {bad}; expected a subset of {list(ALL_LEARNERS)}")
        if not self.models:
            raise ValueError("at least one model is required")
        if not self.k_list or any(not 0 < k <= 1 for k in self.k_list):
            raise ValueError("k_list values must lie in (0, 1]")
        if self.tuning_budget < 1 or self.net_tuning_budget < 1:
            raise ValueError("tuning budgets must be >= 1")
        self.fixed_knobs = {**FIXED_KNOBS, **(self.fixed_knobs or {})}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ValueError(f"unknown config keys: {unknown}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path} must contain a key-value mapping")
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def dump(self, path: str | Path) -> None:
        Path(path).write_text(yaml.safe_dump(self.to_dict(), sort_keys=True), encoding="utf-8")

    def grid(self, setting: str) -> list:
        if setting in self.knobs:
            values = self.knobs[setting]
            return [tuple(v) if setting == "B" else float(v) for v in values]
        return SETTINGS[setting][1]

    def cells(self) -> list[tuple[str, Any]]:
        return [(s, k) for s in self.settings for k in self.grid(s)]

    def dgp_config(self, setting: str, knob) -> DGPConfig:
        """Knob levels for one cell; random streams depend on the master seed only."""
        levels = dict(self.fixed_knobs)
        if setting == "A":
            levels["xi"] = float(knob)
        elif setting == "B":
            levels["theta0"], levels["theta1"] = float(knob[0]), float(knob[1])
        elif setting == "C":
            levels["omega"] = float(knob)
        elif setting == "D":
            levels["m"] = float(knob)
        return DGPConfig(
            xi=levels["xi"], theta0=levels["theta0"], theta1=levels["theta1"],
            omega=levels["omega"], m=levels["m"], radius=self.radius,
            outcome_noise_var=self.outcome_noise_var,
            coeff_seed=derive_seed(self.master_seed, "coefficients"),
            treat_seed=derive_seed(self.master_seed, "treatment"),
            noise_seed=derive_seed(self.master_seed, "noise"),
        )
