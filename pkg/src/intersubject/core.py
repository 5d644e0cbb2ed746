"""Shared numerical types: symmetric matrices, group partitions, block
extraction and the ground-truth model bundle.

Indices are 0-based everywhere inside the package. The 1-based convention
is applied only when reading or writing files (see :mod:`intersubject.io`).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

ZERO_TOL = 1e-10
ASYMMETRY_RTOL = 1e-6


class DimensionError(ValueError):
    """Raised when matrix and partition dimensions disagree."""


def as_symmetric(a, rtol: float = ASYMMETRY_RTOL) -> np.ndarray:
    """Validate and symmetrize a square matrix.

    Parameters
    ----------
    a : array-like, shape (d, d)
        Input matrix. Must be finite.
    rtol : float
        Maximum allowed asymmetry ``max|A - A^T|`` relative to ``max|A|``.

    Returns
    -------
    numpy.ndarray
        ``(A + A^T) / 2`` as a fresh float64 array.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    scale = np.abs(a).max() if a.size else 0.0
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > rtol * max(scale, 1e-300):
        raise ValueError(f"matrix is not symmetric (asymmetry {asym:.3g})")
    return (a + a.T) / 2.0


def symmetrize(a: np.ndarray) -> np.ndarray:
    """Return ``(A + A^T) / 2`` without any checks."""
    return (a + a.T) / 2.0


@dataclass(frozen=True)
class GroupPartition:
    """Ordered disjoint groups covering ``{0, ..., d-1}``."""

    groups: tuple[tuple[int, ...], ...]
    d: int
    labels: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if len(groups) < 2:
            raise ValueError("a partition needs at least two groups")
        if any(len(g) == 0 for g in groups):
            raise ValueError("groups must be nonempty")
        flat = [i for g in groups for i in g]
        if sorted(flat) != list(range(self.d)):
            raise ValueError("groups must be disjoint and cover 0..d-1")
        labels = np.empty(self.d, dtype=np.intp)
        for a, g in enumerate(groups):
            labels[list(g)] = a
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_sizes(cls, sizes: Sequence[int]) -> "GroupPartition":
        """Contiguous groups of the given sizes."""
        bounds = np.cumsum([0, *sizes])
        groups = [tuple(range(bounds[i], bounds[i + 1])) for i in range(len(sizes))]
        return cls(tuple(groups), int(bounds[-1]))

    @classmethod
    def equal(cls, d: int, n_groups: int = 2) -> "GroupPartition":
        """Split ``range(d)`` into ``n_groups`` contiguous groups.

        Earlier groups receive the remainder, so ``equal(5)`` gives sizes
        (3, 2).
        """
        base, extra = divmod(d, n_groups)
        sizes = [base + (1 if a < extra else 0) for a in range(n_groups)]
        return cls.from_sizes(sizes)

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(g) for g in self.groups)

    def same_group_mask(self) -> np.ndarray:
        """Boolean d x d mask, True on within-group index pairs."""
        return self.labels[:, None] == self.labels[None, :]

    def group_of(self, i: int) -> int:
        return int(self.labels[i])

    def inter_pairs(self) -> list["InterBlockIndex"]:
        """All index pairs ``(j, k)`` with ``group(j) < group(k)``.

        For two groups this is ``G1 x G2`` in row-major order.
        """
        pairs = []
        for a in range(self.n_groups):
            for b in range(a + 1, self.n_groups):
                for j in self.groups[a]:
                    for k in self.groups[b]:
                        pairs.append(InterBlockIndex(j, k))
        return pairs

    def to_json(self) -> dict:
        return {"groups": [[i + 1 for i in g] for g in self.groups]}

    @classmethod
    def from_json(cls, obj: dict) -> "GroupPartition":
        groups = [tuple(int(i) - 1 for i in g) for g in obj["groups"]]
        return cls(tuple(groups), sum(len(g) for g in groups))


class InterBlockIndex(NamedTuple):
    """A cross-group entry ``(j, k)``, 0-based, with j in an earlier group."""

    j: int
    k: int


def block_diagonal(m: np.ndarray, partition: GroupPartition) -> np.ndarray:
    """Keep within-group entries of ``m`` and zero the cross-group ones."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (partition.d, partition.d):
        raise DimensionError(
            f"matrix of shape {m.shape} does not match partition dimension {partition.d}"
        )
    return np.where(partition.same_group_mask(), m, 0.0)


def block_inverse(m: np.ndarray, partition: GroupPartition) -> np.ndarray:
    """Inverse of ``block_diagonal(m)``, computed block by block."""
    out = np.zeros((partition.d, partition.d))
    for g in partition.groups:
        idx = np.ix_(g, g)
        try:
            out[idx] = np.linalg.inv(m[idx])
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"singular diagonal block {list(g)}") from exc
    return symmetrize(out)


def theta_from_omega(omega, sigma, partition: GroupPartition) -> np.ndarray:
    """``Omega - (Sigma_G)^{-1}`` where ``Sigma_G`` is the block diagonal of ``Sigma``.

    Cross-group entries are copied from ``omega`` verbatim, since the block
    diagonal inverse has none.
    """
    omega = as_symmetric(omega)
    sigma = as_symmetric(sigma)
    if omega.shape != (partition.d, partition.d) or sigma.shape != omega.shape:
        raise DimensionError("omega, sigma and partition dimensions disagree")
    theta = omega - block_inverse(sigma, partition)
    cross = ~partition.same_group_mask()
    theta[cross] = omega[cross]
    return theta


def count_nonzero(m: np.ndarray, threshold: float = ZERO_TOL) -> int:
    return int(np.count_nonzero(np.abs(m) > threshold))


@dataclass(frozen=True)
class IsaModel:
    """Ground-truth bundle produced by the generator."""

    sigma: np.ndarray
    omega: np.ndarray
    theta: np.ndarray
    support: frozenset
    partition: GroupPartition
    s: int
    raw_condition_number: float = float("nan")
    condition_number: float = float("nan")

    def __post_init__(self):
        for name in ("sigma", "omega", "theta"):
            getattr(self, name).flags.writeable = False

    def support_pairs(self) -> list[InterBlockIndex]:
        return sorted(self.support)


def support_from_omega(omega: np.ndarray, partition: GroupPartition,
                       threshold: float = ZERO_TOL) -> frozenset:
    return frozenset(
        idx for idx in partition.inter_pairs() if abs(omega[idx.j, idx.k]) > threshold
    )


def make_model(omega, partition: GroupPartition, s: int | None = None, **extra) -> IsaModel:
    """Build an :class:`IsaModel` from a precision matrix."""
    omega = as_symmetric(omega)
    sigma = as_symmetric(symmetrize(np.linalg.inv(omega)), rtol=1e-6)
    theta = theta_from_omega(omega, sigma, partition)
    support = support_from_omega(omega, partition)
    return IsaModel(sigma=sigma, omega=omega, theta=theta, support=support,
                    partition=partition, s=len(support) if s is None else s, **extra)


def pairs_to_array(pairs: Iterable[InterBlockIndex]) -> np.ndarray:
    return np.array([tuple(p) for p in pairs], dtype=np.intp).reshape(-1, 2)
