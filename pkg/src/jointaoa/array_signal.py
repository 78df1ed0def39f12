"""
Narrowband far-field signal model for a uniform linear array.

Snapshots follow y(t) = A s(t) + n(t) with uncorrelated, equal-power,
circularly-symmetric complex Gaussian sources and spatially white noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._rng import as_generator

__all__ = [
    "ArrayGeometry",
    "SourceScene",
    "SnapshotBatch",
    "CovarianceEstimate",
    "FeatureStats",
    "steering_vector",
    "steering_matrix",
    "synthesize_snapshots",
    "exact_covariance",
    "sample_covariance",
    "sample_covariances",
    "feature_vector",
    "feature_vectors",
    "matrix_from_features",
    "fit_feature_stats",
    "standardize",
    "complex_gaussian",
]


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform linear array of ``sensor_count`` isotropic elements."""

    sensor_count: int = 8
    spacing_wavelengths: float = 0.5

    def __post_init__(self):
        if int(self.sensor_count) != self.sensor_count or self.sensor_count < 2:
            raise ValueError(f"sensor_count must be an integer >= 2, got {self.sensor_count}")
        if not self.spacing_wavelengths > 0:
            raise ValueError("spacing_wavelengths must be positive")


@dataclass(frozen=True)
class SourceScene:
    """Ground truth of one instance.

    ``signal_variance`` is fixed at 1 by :meth:`from_snr`; only the ratio to
    the noise variance matters for the data.
    """

    aoas_deg: tuple
    snr_db: float
    signal_variance: float = 1.0
    noise_variance: float = 1.0

    def __post_init__(self):
        aoas = tuple(float(a) for a in self.aoas_deg)
        object.__setattr__(self, "aoas_deg", aoas)
        for a in aoas:
            _check_aoa(a)
        if not (self.signal_variance > 0 and self.noise_variance > 0):
            raise ValueError("variances must be positive")
        implied = 10.0 * np.log10(self.signal_variance / self.noise_variance)
        if not np.isclose(implied, self.snr_db, rtol=0, atol=1e-9):
            raise ValueError(
                f"snr_db={self.snr_db} inconsistent with variances (implies {implied})"
            )

    @classmethod
    def from_snr(cls, aoas_deg: Sequence[float], snr_db: float) -> "SourceScene":
        return cls(
            aoas_deg=tuple(aoas_deg),
            snr_db=float(snr_db),
            signal_variance=1.0,
            noise_variance=10.0 ** (-float(snr_db) / 10.0),
        )

    @property
    def source_count(self) -> int:
        return len(self.aoas_deg)


@dataclass
class SnapshotBatch:
    """T x N complex snapshots, one row per time sample."""

    snapshots: np.ndarray
    scene: SourceScene | None = None

    def __post_init__(self):
        self.snapshots = np.asarray(self.snapshots, dtype=np.complex128)
        if self.snapshots.ndim != 2 or self.snapshots.shape[0] < 1:
            raise ValueError("snapshots must be a non-empty T x N matrix")

    @property
    def snapshot_count(self) -> int:
        return self.snapshots.shape[0]


@dataclass
class CovarianceEstimate:
    matrix: np.ndarray
    snapshot_count: int


@dataclass
class FeatureStats:
    """Element-wise standardization constants."""

    means: np.ndarray
    std_devs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.std_devs = np.asarray(self.std_devs, dtype=np.float64)
        if self.means.shape != self.std_devs.shape:
            raise ValueError("means and std_devs must have the same shape")
        if np.any(self.std_devs <= 0):
            raise ValueError("std_devs must be strictly positive")


def _check_aoa(aoa_deg: float):
    if not (-90.0 <= aoa_deg < 90.0):
        raise ValueError(f"AOA {aoa_deg} deg outside [-90, 90)")


def steering_vector(geometry: ArrayGeometry, aoa_deg: float) -> np.ndarray:
    """Array response to a plane wave from ``aoa_deg`` (broadside = 0).

    Element n is exp(j 2 pi (d/lambda) n sin(theta)); element 0 is exactly 1.
    """
    _check_aoa(aoa_deg)
    n = np.arange(geometry.sensor_count)
    phase_step = 2.0 * np.pi * geometry.spacing_wavelengths * np.sin(np.deg2rad(aoa_deg))
    return np.exp(1j * phase_step * n)


def steering_matrix(geometry: ArrayGeometry, aoas_deg) -> np.ndarray:
    """N x Q matrix whose columns are steering vectors."""
    aoas = np.atleast_1d(np.asarray(aoas_deg, dtype=np.float64))
    if aoas.size and (aoas.min() < -90.0 or aoas.max() >= 90.0):
        raise ValueError("AOAs must lie in [-90, 90)")
    n = np.arange(geometry.sensor_count)[:, None]
    phase_step = 2.0 * np.pi * geometry.spacing_wavelengths * np.sin(np.deg2rad(aoas))
    return np.exp(1j * n * phase_step[None, :])


def complex_gaussian(rng: np.random.Generator, shape, variance: float) -> np.ndarray:
    """Circularly-symmetric complex Gaussian draws with E|z|^2 = variance."""
    scale = np.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_snapshots(
    geometry: ArrayGeometry,
    scene: SourceScene,
    T: int,
    seed=None,
) -> SnapshotBatch:
    """Draw ``T`` snapshots of y(t) = A s(t) + n(t).

    Parameters
    ----------
    seed : int, SeedSequence or Generator
        Passing a Generator consumes draws from it; ints and seed sequences
        give bit-reproducible batches.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = as_generator(seed)
    N = geometry.sensor_count
    Q = scene.source_count
    # signals first, noise second: fixed draw order keeps batches reproducible
    s = complex_gaussian(rng, (T, Q), scene.signal_variance)
    noise = complex_gaussian(rng, (T, N), scene.noise_variance)
    y = noise
    if Q:
        A = steering_matrix(geometry, scene.aoas_deg)
        y = s @ A.T + noise
    return SnapshotBatch(y, scene)


def exact_covariance(geometry: ArrayGeometry, scene: SourceScene) -> np.ndarray:
    """R = A (sigma^2 I) A^H + nu^2 I."""
    N = geometry.sensor_count
    R = scene.noise_variance * np.eye(N, dtype=np.complex128)
    if scene.source_count:
        A = steering_matrix(geometry, scene.aoas_deg)
        R = R + scene.signal_variance * (A @ A.conj().T)
    return R


def sample_covariance(batch: SnapshotBatch) -> CovarianceEstimate:
    """Maximum likelihood estimate (1/T) sum y(t) y(t)^H."""
    Y = batch.snapshots
    T = Y.shape[0]
    R = Y.T @ Y.conj() / T
    # enforce exact Hermitian symmetry against rounding
    R = 0.5 * (R + R.conj().T)
    return CovarianceEstimate(R, T)


def sample_covariances(snapshots: np.ndarray) -> np.ndarray:
    """Batched sample covariance for a B x T x N stack of snapshots."""
    Y = np.asarray(snapshots)
    T = Y.shape[-2]
    R = np.einsum("btn,btm->bnm", Y, Y.conj()) / T
    return 0.5 * (R + np.conj(np.swapaxes(R, -1, -2)))


def _triu_indices(N: int):
    return np.triu_indices(N, k=1)


def feature_vector(cov) -> np.ndarray:
    """Real length-N^2 vector from a Hermitian covariance.

    Layout: the N diagonal entries, then (Re, Im) pairs of the strictly
    upper-triangular entries in row-major order.
    """
    R = cov.matrix if isinstance(cov, CovarianceEstimate) else np.asarray(cov)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {R.shape}")
    return feature_vectors(R[None])[0]


def feature_vectors(covs: np.ndarray) -> np.ndarray:
    """Batched :func:`feature_vector` for a B x N x N stack."""
    covs = np.asarray(covs)
    if covs.ndim != 3 or covs.shape[1] != covs.shape[2]:
        raise ValueError(f"expected a B x N x N stack, got shape {covs.shape}")
    B, N, _ = covs.shape
    iu, ju = _triu_indices(N)
    out = np.empty((B, N * N), dtype=np.float64)
    out[:, :N] = np.real(np.diagonal(covs, axis1=1, axis2=2))
    upper = covs[:, iu, ju]
    out[:, N::2] = upper.real
    out[:, N + 1 :: 2] = upper.imag
    return out


def matrix_from_features(values) -> np.ndarray:
    """Inverse of :func:`feature_vector`."""
    values = np.asarray(values, dtype=np.float64)
    N = int(round(np.sqrt(values.size)))
    if N * N != values.size:
        raise ValueError("feature length is not a perfect square")
    iu, ju = _triu_indices(N)
    R = np.zeros((N, N), dtype=np.complex128)
    R[np.arange(N), np.arange(N)] = values[:N]
    upper = values[N::2] + 1j * values[N + 1 :: 2]
    R[iu, ju] = upper
    R[ju, iu] = upper.conj()
    return R


def fit_feature_stats(features) -> FeatureStats:
    """Element-wise mean and (population) standard deviation.

    Constant features get std 1 so they standardize to 0 instead of dividing
    by zero.
    """
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors")
    means = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return FeatureStats(means, std)


def standardize(features, stats: FeatureStats) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    if X.shape[-1] != stats.means.shape[0]:
        raise ValueError(
            f"feature length {X.shape[-1]} does not match stats length {stats.means.shape[0]}"
        )
    return (X - stats.means) / stats.std_devs
