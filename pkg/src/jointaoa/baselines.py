"""
Subspace baselines: Hermitian eigendecomposition, MDL/AIC model-order
selection and the MUSIC pseudospectrum.

Order selection uses the Wax-Kailath criteria. For q hypothesised sources
and eigenvalues l_1 >= ... >= l_N, with g and a the geometric and arithmetic
means of the N - q smallest eigenvalues,

    MDL(q) = -T (N - q) log(g / a) + 0.5 q (2N - q) log T
    AIC(q) = -2 T (N - q) log(g / a) + 2 q (2N - q)

and the estimate is the minimiser over q = 0, ..., N - 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .array_signal import ArrayGeometry, CovarianceEstimate, steering_matrix
from .estimator import JointEstimate, find_peaks

__all__ = [
    "EigenDecomposition",
    "hermitian_eig",
    "jacobi_eig",
    "mdl",
    "aic",
    "information_criteria",
    "music_spectrum",
    "music_spectra",
    "music_estimate",
    "pick_music_peaks",
    "uniform_search_grid",
]


@dataclass
class EigenDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns


def _as_matrix(matrix) -> np.ndarray:
    R = matrix.matrix if isinstance(matrix, CovarianceEstimate) else matrix
    return np.asarray(R, dtype=np.complex128)


def _check_hermitian(R: np.ndarray, tol: float = 1e-10):
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ValueError("expected a square matrix")
    scale = max(np.abs(R).max(), 1.0)
    if np.abs(R - R.conj().T).max() > tol * scale:
        raise ValueError("matrix is not Hermitian")


def jacobi_eig(matrix, tol: float = 1e-14, max_sweeps: int = 100) -> EigenDecomposition:
    """Cyclic complex Jacobi eigendecomposition of a Hermitian matrix."""
    A = _as_matrix(matrix).copy()
    _check_hermitian(A)
    n = A.shape[0]
    V = np.eye(n, dtype=np.complex128)
    norm = np.linalg.norm(A)
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * max(norm, 1e-300):
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if abs(apq) < 1e-300:
                    continue
                # phase-align a_pq to a real value, then a real Givens rotation
                app, aqq = A[p, p].real, A[q, q].real
                phase = apq / abs(apq)
                theta = 0.5 * np.arctan2(2.0 * abs(apq), app - aqq)
                c, s = np.cos(theta), np.sin(theta)
                J = np.array([[c, -s], [s * np.conj(phase), c * np.conj(phase)]])
                A[:, [p, q]] = A[:, [p, q]] @ J
                A[[p, q], :] = J.conj().T @ A[[p, q], :]
                V[:, [p, q]] = V[:, [p, q]] @ J
        A = 0.5 * (A + A.conj().T)
    w = np.real(np.diag(A))
    order = np.argsort(w)[::-1]
    return EigenDecomposition(w[order], V[:, order])


def hermitian_eig(matrix, method: str = "lapack") -> EigenDecomposition:
    """Eigenvalues (descending) and orthonormal eigenvectors of a Hermitian matrix.

    ``method="lapack"`` uses numpy's ``eigh``; ``method="jacobi"`` runs the
    in-house cyclic Jacobi solver.
    """
    R = _as_matrix(matrix)
    _check_hermitian(R)
    if method == "jacobi":
        return jacobi_eig(R)
    if method != "lapack":
        raise ValueError(f"unknown method {method!r}")
    w, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    return EigenDecomposition(w[::-1].copy(), V[:, ::-1].copy())


def information_criteria(eigenvalues, T: int, N: int | None = None):
    """MDL and AIC values for q = 0..N-1; returns (mdl_values, aic_values).

    Accepts one descending eigenvalue vector or a (B, N) stack of them.
    """
    lam = np.asarray(eigenvalues, dtype=np.float64)
    single = lam.ndim == 1
    lam = np.atleast_2d(lam)
    N = lam.shape[1] if N is None else N
    if lam.shape[1] != N:
        raise ValueError("eigenvalue count does not match N")
    if np.any(lam <= 0):
        raise ValueError("eigenvalues must be strictly positive")
    if T < 1:
        raise ValueError("T must be >= 1")
    q = np.arange(N)
    log_lam = np.log(lam)
    # tail sums over the N - q smallest eigenvalues
    tail_log = np.cumsum(log_lam[:, ::-1], axis=1)[:, ::-1]
    tail_sum = np.cumsum(lam[:, ::-1], axis=1)[:, ::-1]
    count = N - q
    log_ratio = tail_log / count - np.log(tail_sum / count)
    # AM-GM: log_ratio <= 0 with equality iff the tail is flat. Snap rounding
    # residue to 0 so equal eigenvalues tie exactly, whatever their scale.
    log_ratio = np.where(log_ratio > -64 * np.finfo(float).eps, 0.0, log_ratio)
    free = q * (2 * N - q)
    mdl_v = -T * count * log_ratio + 0.5 * free * np.log(T)
    aic_v = -2.0 * T * count * log_ratio + 2.0 * free
    if single:
        return mdl_v[0], aic_v[0]
    return mdl_v, aic_v


def mdl(eigenvalues, T: int, N: int | None = None):
    """Minimum description length source-number estimate."""
    values, _ = information_criteria(eigenvalues, T, N)
    return _argmin(values)


def aic(eigenvalues, T: int, N: int | None = None):
    """Akaike information criterion source-number estimate."""
    _, values = information_criteria(eigenvalues, T, N)
    return _argmin(values)


def _argmin(values):
    values = np.asarray(values)
    if values.ndim == 1:
        return int(np.argmin(values))
    return np.argmin(values, axis=1)


def uniform_search_grid(theta_min: float, theta_max: float, step: float) -> np.ndarray:
    """Angles theta_min, theta_min + step, ... strictly below theta_max."""
    count = int(np.floor((theta_max - theta_min) / step + 1e-9))
    grid = theta_min + step * np.arange(count)
    return np.round(grid, 10)


def music_spectra(covs: np.ndarray, q_hat, geometry: ArrayGeometry, search_grid, eig=None) -> np.ndarray:
    """Batched MUSIC pseudospectra; covs is (B, N, N), q_hat scalar or (B,).

    ``eig`` may pass precomputed ``np.linalg.eigh`` output (ascending).
    """
    covs = np.asarray(covs, dtype=np.complex128)
    B, N, _ = covs.shape
    q_hat = np.broadcast_to(np.asarray(q_hat, dtype=np.int64), (B,))
    if np.any(q_hat < 0) or np.any(q_hat >= N):
        raise ValueError("q_hat must satisfy 0 <= q_hat < N")
    if eig is None:
        eig = np.linalg.eigh(covs)
    _, V = eig
    # ascending order: the noise subspace is the first N - q_hat columns
    mask = (np.arange(N)[None, :] < (N - q_hat)[:, None]).astype(np.float64)
    En = V * mask[:, None, :]
    A = steering_matrix(geometry, search_grid)  # N x G
    proj = np.einsum("bnk,ng->bkg", En.conj(), A)  # E_n^H a
    denom = np.sum(np.abs(proj) ** 2, axis=1)
    return 1.0 / np.maximum(denom, 1e-300)


def music_spectrum(cov, q_hat: int, geometry: ArrayGeometry, search_grid) -> np.ndarray:
    """1 / (a^H E_n E_n^H a) over ``search_grid`` for one covariance."""
    R = _as_matrix(cov)
    _check_hermitian(R)
    N = R.shape[0]
    if not 0 <= q_hat < N:
        raise ValueError("q_hat must satisfy 0 <= q_hat < N")
    eigd = hermitian_eig(R)
    En = eigd.eigenvectors[:, q_hat:]
    A = steering_matrix(geometry, search_grid)
    denom = np.sum(np.abs(En.conj().T @ A) ** 2, axis=0)
    return 1.0 / np.maximum(denom, 1e-300)


def pick_music_peaks(spectrum, search_grid, q_hat: int) -> np.ndarray:
    """Arguments of the ``q_hat`` highest local maxima, ascending.

    Local maxima use the same plateau rule as the angle-spectrum peak
    detector. With too few maxima the remaining slots take the largest
    spectrum values not already chosen.
    """
    grid = np.asarray(search_grid, dtype=np.float64)
    if q_hat <= 0:
        return np.zeros(0)
    p = np.asarray(spectrum, dtype=np.float64)
    peaks = sorted(find_peaks(p), key=lambda pk: (-pk.height, pk.start))
    chosen = [pk for pk in peaks[:q_hat]]
    args = [float(np.mean(grid[pk.start : pk.stop])) for pk in chosen]
    if len(args) < q_hat:
        taken = np.zeros(p.size, dtype=bool)
        for pk in chosen:
            taken[pk.start : pk.stop] = True
        for i in np.argsort(-p, kind="stable"):
            if len(args) == q_hat:
                break
            if not taken[i]:
                taken[i] = True
                args.append(float(grid[i]))
    return np.sort(np.asarray(args))


def music_estimate(cov, q_hat: int, geometry: ArrayGeometry, search_grid) -> JointEstimate:
    """MUSIC AOA estimates for a given source-number estimate."""
    if q_hat == 0:
        return JointEstimate(0, [])
    spec = music_spectrum(cov, q_hat, geometry, search_grid)
    return JointEstimate(int(q_hat), list(pick_music_peaks(spec, search_grid, q_hat)))
