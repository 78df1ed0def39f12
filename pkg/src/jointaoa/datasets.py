"""
Simulated instance collections and their on-disk format.

Binary layout (little-endian)::

    header    b"AOAD" | version u32 | N u32 | T u32 | instance_count u64
    instance  Q u32 | Q x float64 AOAs (deg) | T x N complex snapshots as
              interleaved float64 (re, im), row-major (time, sensor)
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ._rng import as_generator
from .array_signal import ArrayGeometry, SourceScene, synthesize_snapshots

__all__ = [
    "Dataset",
    "draw_source_counts",
    "draw_aoas",
    "simulate",
    "write_dataset",
    "read_dataset",
    "export_features_csv",
    "MAGIC",
    "VERSION",
]

MAGIC = b"AOAD"
VERSION = 1
_HEADER = struct.Struct("<4sIIIQ")
_U32 = struct.Struct("<I")


@dataclass
class Dataset:
    snapshots: np.ndarray  # (B, T, N) complex128
    aoas: list  # B ascending float arrays
    snr_db: float | None = None

    @property
    def source_counts(self) -> np.ndarray:
        return np.array([len(a) for a in self.aoas], dtype=np.int64)

    def __len__(self) -> int:
        return self.snapshots.shape[0]

    @property
    def sensor_count(self) -> int:
        return self.snapshots.shape[2]

    @property
    def snapshot_count(self) -> int:
        return self.snapshots.shape[1]


def draw_source_counts(rng, count: int, fixed_q: int | None = None, q_max: int | None = None) -> np.ndarray:
    """Fixed Q, or Q drawn from the discrete uniform distribution on 1..q_max."""
    if fixed_q is not None:
        return np.full(count, int(fixed_q), dtype=np.int64)
    return rng.integers(1, int(q_max) + 1, size=count)


def draw_aoas(rng, q: int, theta_min: float, theta_max: float) -> np.ndarray:
    return np.sort(rng.uniform(theta_min, theta_max, size=int(q)))


def simulate(
    geometry: ArrayGeometry,
    count: int,
    T: int,
    snr_db: float,
    theta_min: float,
    theta_max: float,
    seed=None,
    fixed_q: int | None = 2,
    q_max: int | None = None,
) -> Dataset:
    """Independent instances: new source count and AOAs per instance, new
    waveforms and noise per snapshot."""
    rng = as_generator(seed)
    qs = draw_source_counts(rng, count, fixed_q, q_max)
    snaps = np.empty((count, T, geometry.sensor_count), dtype=np.complex128)
    aoas = []
    for n, q in enumerate(qs):
        a = draw_aoas(rng, q, theta_min, theta_max)
        scene = SourceScene.from_snr(a, snr_db)
        snaps[n] = synthesize_snapshots(geometry, scene, T, rng).snapshots
        aoas.append(a)
    return Dataset(snaps, aoas, snr_db)


def write_dataset(path, dataset: Dataset) -> Path:
    path = Path(path)
    B, T, N = dataset.snapshots.shape
    tmp = path.with_suffix(path.suffix + ".part")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, N, T, B))
        for n in range(B):
            a = np.asarray(dataset.aoas[n], dtype="<f8")
            fh.write(_U32.pack(a.size))
            fh.write(a.tobytes())
            fh.write(np.ascontiguousarray(dataset.snapshots[n], dtype="<c16").tobytes())
    tmp.replace(path)
    return path


def read_dataset(path) -> Dataset:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read dataset {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, N, T, B = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    snaps = np.empty((B, T, N), dtype=np.complex128)
    aoas = []
    off = _HEADER.size
    block = T * N * 16
    for n in range(B):
        (q,) = _U32.unpack_from(raw, off)
        off += 4
        aoas.append(np.frombuffer(raw, dtype="<f8", count=q, offset=off).copy())
        off += 8 * q
        if off + block > len(raw):
            raise ValueError(f"{path}: truncated at instance {n}")
        snaps[n] = np.frombuffer(raw, dtype="<c16", count=T * N, offset=off).reshape(T, N)
        off += block
    if off != len(raw):
        raise ValueError(f"{path}: {len(raw) - off} trailing bytes")
    return Dataset(snaps, aoas)


def export_features_csv(path, features: np.ndarray, aoas: Sequence, active: Sequence | None = None) -> Path:
    """Feature vectors with their labels, one row per instance, for inspection."""
    path = Path(path)
    F = features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["instance_id", "q", "aoas_deg"] + [f"r{i}" for i in range(F)]
        if active is not None:
            header.append("active_labels")
        w.writerow(header)
        for n, row in enumerate(features):
            rec = [n, len(aoas[n]), " ".join(f"{a:.6f}" for a in aoas[n])]
            rec += [repr(float(x)) for x in row]
            if active is not None:
                rec.append(" ".join(str(i) for i in sorted(active[n])))
            w.writerow(rec)
    return path
