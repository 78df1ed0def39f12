"""Experiment configuration, presets and config hashing."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .classifier import NetworkSpec, TrainConfig

__all__ = ["ExperimentConfig", "PRESETS", "load_config", "preset"]

# fields that never influence results
_RUNTIME_FIELDS = ("workers", "out")


@dataclass
class ExperimentConfig:
    scenario: str = "fixed"  # "fixed": Q = q; "variable": Q ~ U{1..q_max}
    q: int = 2
    q_max: int = 4
    snr_db: float = 10.0
    theta_min: float = -60.0
    theta_max: float = 60.0
    M: int = 60
    k: int = 3
    L: int = 3
    sensor_count: int = 8
    spacing_wavelengths: float = 0.5
    hidden_sizes: list = field(default_factory=lambda: [64, 36])
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 32
    patience_epochs: int = 3
    max_epochs: int = 200
    T: int = 100
    D_trn: int = 20000
    split_fractions: list = field(default_factory=lambda: [0.8, 0.1, 0.1])
    D_tst: int = 5000
    threshold_include_zero: bool = False
    music_high_step: float = 0.1
    seed: int = 0
    workers: int = 1
    out: str = "runs"

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.scenario not in ("fixed", "variable"):
            raise ValueError("scenario must be 'fixed' or 'variable'")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9 or len(self.split_fractions) != 3:
            raise ValueError("split_fractions must be three values summing to 1")
        counts = [self.M, self.k, self.L, self.T, self.D_trn, self.D_tst, self.sensor_count]
        if min(counts) < 1 or min(self.split_sizes()) < 1:
            raise ValueError("all counts and split sizes must be positive")
        if not 1 <= self.k < self.M:
            raise ValueError("need 1 <= k < M")

    @property
    def delta_theta(self) -> float:
        return (self.theta_max - self.theta_min) / self.M

    def split_sizes(self) -> tuple[int, int, int]:
        """(classifier training, validation, threshold) instance counts."""
        n_trn = int(round(self.split_fractions[0] * self.D_trn))
        n_val = int(round(self.split_fractions[1] * self.D_trn))
        return n_trn, n_val, self.D_trn - n_trn - n_val

    def network_spec(self, output_size: int) -> NetworkSpec:
        return NetworkSpec(self.sensor_count**2, tuple(self.hidden_sizes), output_size)

    def train_config(self, seed=0) -> TrainConfig:
        return TrainConfig(
            alpha=self.alpha,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
            batch_size=self.batch_size,
            patience_epochs=self.patience_epochs,
            max_epochs=self.max_epochs,
            seed=seed,
        )

    @property
    def fixed_q(self):
        return self.q if self.scenario == "fixed" else None

    @property
    def source_counts(self) -> list[int]:
        return [self.q] if self.scenario == "fixed" else list(range(1, self.q_max + 1))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def result_dict(self) -> dict:
        d = self.to_dict()
        for key in _RUNTIME_FIELDS:
            d.pop(key)
        return d

    def digest(self) -> str:
        text = json.dumps(self.result_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def run_dir(self) -> Path:
        return Path(self.out) / self.digest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


_SCENARIO_I = dict(scenario="fixed", q=2, hidden_sizes=[64, 36])
_SCENARIO_II = dict(scenario="variable", q_max=4, hidden_sizes=[100, 100, 100, 100, 50])

PRESETS = {
    "paper-I": dict(_SCENARIO_I, L=5, D_trn=80000, D_tst=50000),
    "paper-II": dict(_SCENARIO_II, L=5, D_trn=320000, D_tst=50000),
    "desk-I": dict(_SCENARIO_I, L=3, D_trn=20000, D_tst=5000),
    "desk-II": dict(_SCENARIO_II, L=3, D_trn=40000, D_tst=5000),
}


def preset(name: str, **overrides) -> ExperimentConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ExperimentConfig(**{**base, **overrides})


def load_config(path=None, preset_name: str | None = None, **overrides) -> ExperimentConfig:
    """Preset values, then the YAML file, then explicit overrides."""
    if preset_name and preset_name not in PRESETS:
        raise ValueError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
    values = dict(PRESETS[preset_name]) if preset_name else {}
    if path is not None:
        doc = yaml.safe_load(Path(path).read_text()) or {}
        unknown = set(doc) - {f.name for f in dataclasses.fields(ExperimentConfig)}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        values.update(doc)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)
