"""
From classifier outputs to joint (source number, AOA) estimates.

Predictions of all classifiers are merged into a per-segment probability
spectrum; peaks above a learned threshold give the source-number estimate
and their plateau centres give the AOA estimates.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .array_signal import (
    FeatureStats,
    SnapshotBatch,
    feature_vectors,
    sample_covariances,
    standardize,
)
from .classifier import Network, _Stack, load_network, save_network
from .framework import FovGrid, Framework, load_framework, save_framework

__all__ = [
    "JointEstimate",
    "Peak",
    "ThresholdResult",
    "Ensemble",
    "assemble_spectrum",
    "assemble_spectra",
    "find_peaks",
    "detect_peaks",
    "count_peaks",
    "default_thresholds",
    "optimize_threshold",
    "estimate",
    "estimate_record",
]


@dataclass
class JointEstimate:
    q_hat: int
    aoas_deg: list = field(default_factory=list)

    def __post_init__(self):
        self.aoas_deg = sorted(float(a) for a in self.aoas_deg)
        if len(self.aoas_deg) != self.q_hat:
            raise ValueError("q_hat must equal the number of AOA estimates")


@dataclass(frozen=True)
class Peak:
    start: int  # 0-based first segment of the plateau
    stop: int  # exclusive
    height: float


@dataclass
class ThresholdResult:
    level: float
    levels: list
    correct_counts: list

    @property
    def correct_count(self) -> int:
        return int(self.correct_counts[self.levels.index(self.level)])

    def to_dict(self) -> dict:
        return {
            "level": self.level,
            "correct_count": self.correct_count,
            "levels": self.levels,
            "correct_counts": self.correct_counts,
        }


def _check_predictions(framework: Framework, predictions):
    if len(predictions) != framework.classifier_count:
        raise ValueError(
            f"expected {framework.classifier_count} prediction vectors, got {len(predictions)}"
        )


def assemble_spectrum(framework: Framework, predictions: Sequence) -> np.ndarray:
    """Segment probabilities P_1..P_M from one prediction vector per classifier.

    P_i sums, over the classifiers whose labelset holds label i, the mass of
    the subsets containing i, divided by the layer count L.
    """
    _check_predictions(framework, predictions)
    P = np.zeros(framework.grid.segment_count)
    for pred, member in zip(predictions, framework.membership):
        P += np.asarray(pred, dtype=np.float64) @ member
    return P / framework.L


def assemble_spectra(framework: Framework, predictions: Sequence[np.ndarray]) -> np.ndarray:
    """Batched version: ``predictions[j]`` is (B, 2^k_j); returns (B, M)."""
    _check_predictions(framework, predictions)
    B = np.asarray(predictions[0]).shape[0]
    P = np.zeros((B, framework.grid.segment_count))
    for pred, member in zip(predictions, framework.membership):
        P += np.asarray(pred) @ member
    return P / framework.L


def find_peaks(spectrum) -> list[Peak]:
    """Maximal equal-valued runs strictly above both neighbours.

    A run touching the spectrum edge only has to beat its inner neighbour.
    Peaks do not depend on the threshold; thresholding filters by height.
    """
    p = np.asarray(spectrum, dtype=np.float64)
    M = p.size
    if M == 0:
        return []
    starts = np.concatenate(([0], np.flatnonzero(np.diff(p) != 0) + 1))
    stops = np.concatenate((starts[1:], [M]))
    v = p[starts]
    above_left = np.concatenate(([True], v[1:] > v[:-1]))
    above_right = np.concatenate((v[:-1] > v[1:], [True]))
    keep = np.flatnonzero(above_left & above_right)
    return [Peak(int(starts[i]), int(stops[i]), float(v[i])) for i in keep]


def detect_peaks(spectrum, threshold: float, grid: FovGrid) -> JointEstimate:
    """Joint estimate from the peaks whose height exceeds ``threshold`` strictly.

    Each estimate is the mean of the plateau's segment centres.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    p = np.asarray(spectrum, dtype=np.float64)
    if p.size != grid.segment_count:
        raise ValueError("spectrum length does not match the grid")
    centers = grid.centers
    aoas = [
        float(np.mean(centers[pk.start : pk.stop])) for pk in find_peaks(p) if pk.height > threshold
    ]
    return JointEstimate(len(aoas), aoas)


def count_peaks(spectra, levels) -> np.ndarray:
    """Q-hat for every spectrum (rows) at every level; shape (B, len(levels))."""
    levels = np.asarray(levels, dtype=np.float64)
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    out = np.zeros((spectra.shape[0], levels.size), dtype=np.int64)
    for row, p in enumerate(spectra):
        heights = np.array([pk.height for pk in find_peaks(p)])
        if heights.size:
            out[row] = (heights[:, None] > levels[None, :]).sum(axis=0)
    return out


def default_thresholds(include_zero: bool = False) -> list[float]:
    """0.01, 0.02, ..., 1.00 (optionally preceded by 0)."""
    levels = [round(i / 100, 2) for i in range(1, 101)]
    return ([0.0] if include_zero else []) + levels


def optimize_threshold(spectra, true_counts, candidate_levels=None) -> ThresholdResult:
    """Level maximising the number of spectra with Q-hat == Q (lowest on ties)."""
    if candidate_levels is None:
        candidate_levels = default_thresholds()
    levels = [float(c) for c in candidate_levels]
    if not levels:
        raise ValueError("candidate level list is empty")
    if any(b < a for a, b in zip(levels, levels[1:])) or levels[0] < 0 or levels[-1] > 1:
        raise ValueError("candidate levels must be ascending within [0, 1]")
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    q = np.asarray(true_counts, dtype=np.int64)
    if spectra.shape[0] != q.size:
        raise ValueError("spectra and true_counts differ in length")
    if not np.any(spectra):
        warnings.warn("all spectra are zero; threshold choice is degenerate", RuntimeWarning)
    correct = (count_peaks(spectra, levels) == q[:, None]).sum(axis=0)
    best = int(np.argmax(correct))  # first maximum = lowest level
    return ThresholdResult(levels[best], levels, [int(c) for c in correct])


class Ensemble:
    """Trained classifiers aligned with a framework, plus feature stats."""

    def __init__(self, framework: Framework, networks: Sequence[Network], stats: FeatureStats):
        if len(networks) != framework.classifier_count:
            raise ValueError("network count does not match the framework")
        for net, size in zip(networks, framework.output_sizes()):
            if net.spec.output_size != size:
                raise ValueError("network output size does not match its labelset")
        self.framework = framework
        self.networks = list(networks)
        self.stats = stats
        groups = {}
        for j, net in enumerate(self.networks):
            groups.setdefault(net.spec, []).append(j)
        self._groups = [(idx, _Stack.from_networks([self.networks[j] for j in idx])) for idx in groups.values()]

    def predict(self, standardized: np.ndarray) -> list[np.ndarray]:
        """Per-classifier probability matrices (B, 2^k_j) for standardized rows."""
        X = np.atleast_2d(standardized)
        out = [None] * len(self.networks)
        for idx, stack in self._groups:
            probs = stack.predict(X)
            for pos, j in enumerate(idx):
                out[j] = probs[pos]
        return out

    def spectra_from_features(self, features: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Raw (unstandardized) feature rows to angle spectra."""
        features = np.atleast_2d(features)
        parts = []
        for s in range(0, features.shape[0], chunk):
            X = standardize(features[s : s + chunk], self.stats)
            parts.append(assemble_spectra(self.framework, self.predict(X)))
        return np.concatenate(parts) if parts else np.zeros((0, self.framework.grid.segment_count))

    def spectra(self, snapshots: np.ndarray) -> np.ndarray:
        """Angle spectra for a B x T x N snapshot stack."""
        return self.spectra_from_features(feature_vectors(sample_covariances(snapshots)))

    def save(self, directory) -> Path:
        directory = Path(directory)
        (directory / "models").mkdir(parents=True, exist_ok=True)
        save_framework(self.framework, directory / "framework.json")
        digest = self.framework.digest()
        for j, net in enumerate(self.networks):
            save_network(directory / "models" / f"model_{j:04d}.npz", net, self.stats, digest, j)
        return directory

    @classmethod
    def load(cls, directory) -> "Ensemble":
        directory = Path(directory)
        framework = load_framework(directory / "framework.json")
        digest = framework.digest()
        networks, stats = [], None
        for j in range(framework.classifier_count):
            net, meta = load_network(directory / "models" / f"model_{j:04d}.npz")
            if meta["framework_digest"] != digest:
                raise ValueError(f"model {j} was trained against a different framework")
            networks.append(net)
            stats = meta.get("stats", stats)
        if stats is None:
            raise ValueError("model files carry no feature statistics")
        return cls(framework, networks, stats)


def estimate(ensemble: Ensemble, framework: Framework, stats: FeatureStats, batch: SnapshotBatch, threshold: float) -> JointEstimate:
    """Full deployment chain for one instance.

    covariance -> features -> standardize -> classifiers -> spectrum -> peaks
    """
    if ensemble.framework.digest() != framework.digest():
        raise ValueError("ensemble was trained for a different framework")
    feats = feature_vectors(sample_covariances(batch.snapshots[None]))
    X = standardize(feats, stats)
    spectrum = assemble_spectra(framework, ensemble.predict(X))[0]
    return detect_peaks(spectrum, threshold, framework.grid)


def estimate_record(instance_id, q_true, aoas_true, est: JointEstimate, threshold=None, spectrum=None, **tags) -> str:
    """One JSONL line describing an estimate."""
    rec = dict(tags)
    rec.update(
        {
            "instance_id": int(instance_id),
            "q_true": int(q_true),
            "aoas_true": [float(a) for a in sorted(aoas_true)],
            "q_hat": int(est.q_hat),
            "aoas_hat": [float(a) for a in est.aoas_deg],
            "threshold": threshold,
        }
    )
    if spectrum is not None:
        rec["spectrum"] = [float(x) for x in spectrum]
    return json.dumps(rec)
