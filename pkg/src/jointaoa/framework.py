"""
Field-of-view discretisation and the layered random k-labelset framework.

Labels are the integers 1..M naming FOV segments (label i covers
[theta_min + (i-1)*delta, theta_min + i*delta)). Arrays indexed by segment
(spectra, centers) are 0-based, so label i lives at position i - 1.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from ._rng import as_generator

__all__ = [
    "FovGrid",
    "Framework",
    "build_grid",
    "segment_of",
    "segments_of",
    "subset_index",
    "generate_framework",
    "active_labels",
    "target_vector",
    "target_index",
    "save_framework",
    "load_framework",
]


@dataclass(frozen=True)
class FovGrid:
    theta_min_deg: float
    theta_max_deg: float
    segment_count: int

    @property
    def resolution_deg(self) -> float:
        return (self.theta_max_deg - self.theta_min_deg) / self.segment_count

    @property
    def lower_bounds(self) -> np.ndarray:
        return self.theta_min_deg + np.arange(self.segment_count) * self.resolution_deg

    @property
    def upper_bounds(self) -> np.ndarray:
        return self.theta_min_deg + np.arange(1, self.segment_count + 1) * self.resolution_deg

    @property
    def centers(self) -> np.ndarray:
        return self.theta_min_deg + (np.arange(self.segment_count) + 0.5) * self.resolution_deg

    def contains(self, aoa_deg) -> np.ndarray:
        a = np.asarray(aoa_deg, dtype=np.float64)
        return (a >= self.theta_min_deg) & (a < self.theta_max_deg)


def build_grid(theta_min: float, theta_max: float, M: int) -> FovGrid:
    if not theta_max > theta_min:
        raise ValueError("theta_max must exceed theta_min")
    if int(M) != M or M < 1:
        raise ValueError("M must be a positive integer")
    return FovGrid(float(theta_min), float(theta_max), int(M))


def segments_of(grid: FovGrid, aoas_deg) -> np.ndarray:
    """Vectorized :func:`segment_of`; returns 1-based labels."""
    a = np.asarray(aoas_deg, dtype=np.float64)
    if not np.all(grid.contains(a)):
        raise ValueError(
            f"AOA outside FOV [{grid.theta_min_deg}, {grid.theta_max_deg})"
        )
    idx = np.floor((a - grid.theta_min_deg) / grid.resolution_deg).astype(np.int64)
    # floor can land one off next to a segment boundary; fix against the bounds
    idx = np.clip(idx, 0, grid.segment_count - 1)
    lower = grid.theta_min_deg + idx * grid.resolution_deg
    idx = np.where(a < lower, idx - 1, idx)
    upper = grid.theta_min_deg + (idx + 1) * grid.resolution_deg
    idx = np.where((a >= upper) & (idx < grid.segment_count - 1), idx + 1, idx)
    return idx + 1


def segment_of(grid: FovGrid, aoa_deg: float) -> int:
    """1-based label i with theta_i,min <= aoa < theta_i,max."""
    return int(segments_of(grid, [aoa_deg])[0])


def subset_index(labelset) -> list[tuple[int, ...]]:
    """All subsets of ``labelset``, ordered by size then lexicographically.

    Entry 0 is the empty set; position in this list is the output neuron
    of the corresponding classifier.
    """
    labels = sorted(labelset)
    return [
        combo for size in range(len(labels) + 1) for combo in itertools.combinations(labels, size)
    ]


@dataclass(frozen=True)
class Framework:
    grid: FovGrid
    k: int
    layers: tuple  # tuple of layers; a layer is a tuple of sorted label tuples
    seed: int | None = None

    @property
    def L(self) -> int:
        return len(self.layers)

    @cached_property
    def labelsets(self) -> list[tuple[int, ...]]:
        return [ls for layer in self.layers for ls in layer]

    @property
    def classifier_count(self) -> int:
        return len(self.labelsets)

    @cached_property
    def subsets(self) -> list[list[tuple[int, ...]]]:
        return [subset_index(ls) for ls in self.labelsets]

    @cached_property
    def membership(self) -> list[np.ndarray]:
        """Per classifier, a 2^|R_j| x M 0/1 matrix: subset k~ contains label i."""
        out = []
        M = self.grid.segment_count
        for subsets in self.subsets:
            mat = np.zeros((len(subsets), M))
            for row, sub in enumerate(subsets):
                for label in sub:
                    mat[row, label - 1] = 1.0
            out.append(mat)
        return out

    def output_sizes(self) -> list[int]:
        return [2 ** len(ls) for ls in self.labelsets]

    def to_dict(self) -> dict:
        return {
            "theta_min": self.grid.theta_min_deg,
            "theta_max": self.grid.theta_max_deg,
            "M": self.grid.segment_count,
            "k": self.k,
            "L": self.L,
            "seed": self.seed,
            "layers": [[list(ls) for ls in layer] for layer in self.layers],
        }

    def digest(self) -> str:
        """Stable hash used to tie trained models to this exact framework."""
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> "Framework":
        grid = build_grid(doc["theta_min"], doc["theta_max"], doc["M"])
        layers = tuple(tuple(tuple(sorted(ls)) for ls in layer) for layer in doc["layers"])
        fw = cls(grid, int(doc["k"]), layers, doc.get("seed"))
        _validate(fw)
        if "L" in doc and doc["L"] != fw.L:
            raise ValueError("L does not match the number of layers")
        return fw


def _validate(fw: Framework):
    M = fw.grid.segment_count
    expected = list(range(1, M + 1))
    for n, layer in enumerate(fw.layers):
        labels = sorted(label for ls in layer for label in ls)
        if labels != expected:
            raise ValueError(f"layer {n} is not a partition of 1..{M}")
        if any(len(ls) > fw.k or len(ls) == 0 for ls in layer):
            raise ValueError(f"layer {n} has a labelset of invalid size")


def generate_framework(grid: FovGrid, k: int, L: int, seed=None) -> Framework:
    """L independent disjoint layers: shuffle 1..M and cut into chunks of k.

    When k does not divide M the last chunk of each layer is smaller.
    """
    M = grid.segment_count
    if not 1 <= k < M:
        raise ValueError(f"need 1 <= k < M, got k={k}, M={M}")
    if L < 1:
        raise ValueError("L must be >= 1")
    rng = as_generator(seed)
    layers = []
    for _ in range(L):
        perm = rng.permutation(M) + 1
        layer = tuple(tuple(sorted(int(x) for x in perm[s : s + k])) for s in range(0, M, k))
        layers.append(layer)
    fw = Framework(grid, int(k), tuple(layers), seed if isinstance(seed, int) else None)
    assert fw.classifier_count == L * math.ceil(M / k)
    return fw


def active_labels(grid: FovGrid, aoas_deg) -> frozenset[int]:
    """Labels of the segments holding at least one AOA."""
    aoas = np.atleast_1d(np.asarray(aoas_deg, dtype=np.float64))
    if aoas.size == 0:
        return frozenset()
    return frozenset(int(i) for i in segments_of(grid, aoas))


def target_index(labelset, active, subsets=None) -> int:
    """Position of R_j intersected with the active set in the subset index."""
    if subsets is None:
        subsets = subset_index(labelset)
    inter = tuple(sorted(set(labelset) & set(active)))
    return subsets.index(inter)


def target_vector(labelset, active, subsets=None) -> np.ndarray:
    """One-hot prediction target over the 2^|R_j| label subsets."""
    if subsets is None:
        subsets = subset_index(labelset)
    out = np.zeros(len(subsets))
    out[target_index(labelset, active, subsets)] = 1.0
    return out


def save_framework(fw: Framework, path) -> Path:
    path = Path(path)
    path.write_text(json.dumps(fw.to_dict(), indent=1) + "\n")
    return path


def load_framework(path) -> Framework:
    return Framework.from_dict(json.loads(Path(path).read_text()))
