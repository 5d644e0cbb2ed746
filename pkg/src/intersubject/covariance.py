"""Covariance estimators: sample covariance, the block-diagonal plug-in with
its positive-definiteness ridge, and the Kendall's tau correlation estimator
for nonparanormal data."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, GroupPartition, block_diagonal, symmetrize

PERTURB_TRIGGER = 1e-8


@dataclass(frozen=True)
class CovariancePair:
    """Full covariance and its (possibly ridged) block-diagonal part."""

    full: np.ndarray
    blocked: np.ndarray
    partition: GroupPartition
    n: int
    perturbation_applied: bool = False
    epsilon: float = 0.0

    @property
    def d(self) -> int:
        return self.partition.d


def _check_data(data) -> np.ndarray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"data must be 2-D (n x d), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data has non-finite entries")
    return x


def sample_covariance(data, center: bool = False) -> np.ndarray:
    """``(1/n) X^T X``, optionally after column centering.

    The default is uncentered because the simulated model is zero-mean.
    """
    x = _check_data(data)
    n, d = x.shape
    if n < 2 or d < 2:
        raise ValueError("need at least 2 samples and 2 variables")
    if center:
        x = x - x.mean(axis=0)
    return symmetrize(x.T @ x / n)


def blocked_covariance(full, partition: GroupPartition, n: int) -> CovariancePair:
    """Pair ``full`` with its block diagonal, ridged by ``sqrt(log d / n) I``
    when the smallest eigenvalue of the block diagonal is below 1e-8."""
    full = np.asarray(full, dtype=np.float64)
    if full.shape != (partition.d, partition.d):
        raise DimensionError(
            f"covariance of shape {full.shape} does not match partition dimension {partition.d}"
        )
    blocked = block_diagonal(full, partition)
    lam_min = np.linalg.eigvalsh(blocked)[0]
    if lam_min >= PERTURB_TRIGGER:
        return CovariancePair(full, blocked, partition, n)
    eps = float(np.sqrt(np.log(partition.d) / n))
    blocked = blocked + eps * np.eye(partition.d)
    return CovariancePair(full, blocked, partition, n, True, eps)


def covariance_pair(data, partition: GroupPartition, center: bool = False,
                    method: str = "sample") -> CovariancePair:
    """Estimate the covariance of ``data`` and block it by ``partition``."""
    if method == "sample":
        full = sample_covariance(data, center=center)
    elif method == "kendall":
        full = kendall_covariance(data)
    else:
        raise ValueError(f"unknown covariance method {method!r}")
    return blocked_covariance(full, partition, np.asarray(data).shape[0])


def kendall_tau(data, block: int = 64) -> np.ndarray:
    """Matrix of Kendall's tau-a statistics (ties contribute zero).

    Counts ``sum_{i<i'} sign(x_ij - x_i'j) sign(x_ik - x_i'k)`` over all
    sample pairs, ``block`` anchor rows at a time. Every partial sum is an
    integer below 2**53, so the float64 accumulation is exact.
    """
    x = _check_data(data)
    n, d = x.shape
    if n < 2:
        raise ValueError("need at least 2 samples")
    acc = np.zeros((d, d))
    for start in range(0, n - 1, block):
        stop = min(start + block, n - 1)
        signs = np.sign(x[start:stop, None, :] - x[None, start + 1:, :])
        # keep only partners i' > i
        later = np.arange(start + 1, n)[None, :] > np.arange(start, stop)[:, None]
        signs *= later[:, :, None]
        flat = signs.reshape(-1, d)
        acc += flat.T @ flat
    return acc / (n * (n - 1) / 2.0)


def kendall_covariance(data) -> np.ndarray:
    """Rank-based correlation ``sin(pi/2 * tau)`` with a unit diagonal."""
    tau = kendall_tau(data)
    out = np.sin(np.pi / 2.0 * tau)
    np.fill_diagonal(out, 1.0)
    return np.clip(symmetrize(out), -1.0, 1.0)
