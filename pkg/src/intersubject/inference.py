"""Untangle-and-chord de-biasing: sample splitting, CLIME-type correction
matrices, the de-biased estimator, plug-in variances, confidence intervals,
tests and Bonferroni edge selection."""
from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .core import DimensionError, GroupPartition, InterBlockIndex, block_diagonal
from .covariance import CovariancePair, covariance_pair
from .simplex import LPInfeasible, linprog_bland
from .strings import AdmmConfig, StringsFit, fit_strings, lambda_grid, select_lambda

log = logging.getLogger(__name__)

DEFAULT_ALPHA = 0.05
VARIANCE_FLOOR = 1e-12


class ClimeInfeasibleError(ValueError):
    """A CLIME row has no feasible point at the requested ``lambda_prime``."""

    def __init__(self, row: int, lambda_prime: float):
        self.row = row
        self.lambda_prime = lambda_prime
        self.suggested = 2.0 * lambda_prime
        super().__init__(
            f"CLIME row {row + 1} is infeasible at lambda'={lambda_prime:.4g}; "
            f"try lambda' >= {self.suggested:.4g}"
        )


def normal_quantile(p) -> float:
    """Standard normal quantile ``Phi^{-1}(p)`` for ``0 < p < 1``."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must lie in (0, 1), got {p}")
    return float(ndtri(p))


def default_lambda_prime(d: int, n: int) -> float:
    return 0.5 * float(np.sqrt(np.log(d) / n))


def split_sample(data, seed=None, shuffle: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Split ``2n`` rows into two halves of ``n``; first/second half unless shuffled."""
    x = np.asarray(data, dtype=np.float64)
    rows = x.shape[0]
    if rows % 2:
        raise ValueError(f"need an even number of rows, got {rows}")
    if shuffle:
        x = x[np.random.default_rng(seed).permutation(rows)]
    half = rows // 2
    return x[:half].copy(), x[half:].copy()


# ---------------------------------------------------------------------------
# CLIME-type correction matrices


@dataclass
class ClimeSolution:
    m: np.ndarray
    lambda_prime: float
    max_row_l1: float
    feasibility_gap: float
    row_objectives: np.ndarray = field(repr=False, default=None)


def _clime_row(target: np.ndarray, j: int, lambda_prime: float, cols: np.ndarray) -> np.ndarray:
    d = target.shape[0]
    sub = target[:, cols]
    e = np.zeros(d)
    e[j] = 1.0
    # m = u - v with u, v >= 0;  -lp <= sub m - e <= lp
    a_ub = np.block([[sub, -sub], [-sub, sub]])
    b_ub = np.concatenate([e + lambda_prime, lambda_prime - e])
    res = linprog_bland(np.ones(2 * cols.size), a_ub, b_ub)
    row = np.zeros(d)
    row[cols] = res.x[:cols.size] - res.x[cols.size:]
    return row


def solve_clime_rows(target, lambda_prime: float,
                     partition: GroupPartition | None = None) -> ClimeSolution:
    """Row-wise ``min ||m_j||_1  s.t.  ||target m_j - e_j||_inf <= lambda_prime``.

    With ``partition`` given, row ``j`` may only use columns of its own group
    (the block-diagonal variant); other entries are exactly zero. Because
    the max-row-l1 objective decouples over rows, solving each row
    separately minimizes ``||M||_inf`` under the joint constraint.
    """
    target = np.asarray(target, dtype=np.float64)
    if not lambda_prime > 0:
        raise ValueError("lambda_prime must be positive")
    if target.ndim != 2 or target.shape[0] != target.shape[1]:
        raise DimensionError("target must be square")
    if not np.allclose(target, target.T, rtol=0, atol=1e-10 * max(1.0, np.abs(target).max())):
        raise ValueError("target must be symmetric")
    d = target.shape[0]
    if partition is not None and partition.d != d:
        raise DimensionError("partition does not match target")
    m = np.zeros((d, d))
    for j in range(d):
        cols = (np.asarray(partition.groups[partition.group_of(j)]) if partition is not None
                else np.arange(d))
        try:
            m[j] = _clime_row(target, j, lambda_prime, cols)
        except LPInfeasible:
            raise ClimeInfeasibleError(j, lambda_prime) from None
    row_l1 = np.abs(m).sum(axis=1)
    gap = float(np.abs(m @ target - np.eye(d)).max())
    return ClimeSolution(m, float(lambda_prime), float(row_l1.max()), gap, row_l1)


# ---------------------------------------------------------------------------
# de-biasing and variance


def debias(theta_hat, s, sg, m, p) -> np.ndarray:
    """``Theta - M (S Theta S_G + S - S_G) P^T``."""
    theta_hat = np.asarray(theta_hat)
    if not (theta_hat.shape == s.shape == sg.shape == m.shape == p.shape):
        raise DimensionError("all matrices must share one square shape")
    return theta_hat - m @ (s @ theta_hat @ sg + s - sg) @ p.T


def variance_estimate(theta_hat, s, sg, m, p, partition: GroupPartition,
                      pairs: Sequence[InterBlockIndex] | None = None,
                      floor: float = VARIANCE_FLOOR):
    """Plug-in asymptotic variance of each de-biased cross-group entry.

    For ``j`` in group ``a`` and ``k`` in group ``b``::

        (M_j S M_j')(P_k (I + S_G T) S_G P_k') + (M_j S_G P_k')^2
          - (M_j S P_k')^2 - (M_j (I - S T) S_b (I - T S) M_j')(P_k S_G P_k')

    where ``S_b`` keeps only group ``b``'s diagonal block of ``S_G``. With two
    groups this is ``diag(0, S_2)``.

    Returns
    -------
    values : dict
        ``InterBlockIndex -> variance``, floored at ``floor``.
    clamped : list
        Indices whose raw value fell below ``floor``.
    """
    d = partition.d
    eye = np.eye(d)
    pairs = partition.inter_pairs() if pairs is None else list(pairs)
    m_s_m = np.einsum("ij,jk,ik->i", m, s, m)
    p_mid = np.einsum("ij,jk,ik->i", p, (eye + sg @ theta_hat) @ sg, p)
    p_sg_p = np.einsum("ij,jk,ik->i", p, sg, p)
    m_sg_p = m @ sg @ p.T
    m_s_p = m @ s @ p.T
    left = m @ (eye - s @ theta_hat)
    last = {}
    for b in range(partition.n_groups):
        g = list(partition.groups[b])
        last[b] = np.einsum("ij,jk,ik->i", left[:, g], sg[np.ix_(g, g)], left[:, g])

    values, clamped = {}, []
    for idx in pairs:
        j, k = idx
        if partition.group_of(j) == partition.group_of(k):
            raise ValueError(f"{idx} is not a cross-group pair")
        v = (m_s_m[j] * p_mid[k] + m_sg_p[j, k] ** 2 - m_s_p[j, k] ** 2
             - last[partition.group_of(k)][j] * p_sg_p[k])
        if not v >= floor:
            clamped.append(idx)
            v = floor
        values[idx] = float(v)
    if clamped:
        log.warning("%d variance estimates clamped to %.0e", len(clamped), floor)
    return values, clamped


def leading_remainder(theta_hat, s, sg, m, p, sigma_true, theta_true, partition):
    """Split ``theta_u - theta*`` into its leading and remainder terms.

    Needs the ground truth, so it is a simulation diagnostic only.
    """
    eye = np.eye(partition.d)
    sg_true = block_diagonal(sigma_true, partition)
    ds, dsg = s - sigma_true, sg - sg_true
    leading = -m @ (ds @ (eye + theta_true @ sg_true) - (eye - sigma_true @ theta_true) @ dsg) @ p.T
    remainder = (-m @ ds @ theta_true @ dsg @ p.T + theta_hat - theta_true
                 - m @ s @ (theta_hat - theta_true) @ sg @ p.T)
    return leading, remainder


# ---------------------------------------------------------------------------
# results


@dataclass
class EdgeInference:
    index: InterBlockIndex
    estimate: float
    std_err: float
    ci_low: float
    ci_high: float
    z_stat: float
    reject: bool

    def csv_row(self) -> list:
        return [self.index.j + 1, self.index.k + 1, self.estimate, self.std_err,
                self.ci_low, self.ci_high, self.z_stat, int(self.reject)]


@dataclass
class InferenceResult:
    theta_u: np.ndarray
    xi_hat_sq: dict
    n_split: int
    alpha: float
    partition: GroupPartition
    lam: float
    lambda_prime: float
    clamped: list = field(default_factory=list)
    fit: StringsFit | None = field(default=None, repr=False)
    m: ClimeSolution | None = field(default=None, repr=False)
    p: ClimeSolution | None = field(default=None, repr=False)
    leading_remainder_diag: tuple | None = field(default=None, repr=False)

    def edges(self, alpha: float | None = None) -> list[EdgeInference]:
        return [edge_inference(self, idx, alpha) for idx in self.xi_hat_sq]

    def to_json(self) -> dict:
        return {
            "theta_u": self.theta_u.tolist(),
            "xi_hat_sq": [[i.j + 1, i.k + 1, v] for i, v in self.xi_hat_sq.items()],
            "n": self.n_split,
            "alpha": self.alpha,
            "lambda": self.lam,
            "lambda_prime": self.lambda_prime,
            "clamp_warnings": [[i.j + 1, i.k + 1] for i in self.clamped],
        }


def edge_inference(result: InferenceResult, index: InterBlockIndex,
                   alpha: float | None = None) -> EdgeInference:
    """Wald interval and two-sided test for one cross-group entry."""
    alpha = result.alpha if alpha is None else alpha
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    index = InterBlockIndex(*index)
    q = normal_quantile(1.0 - alpha / 2.0)
    est = float(result.theta_u[index.j, index.k])
    xi = float(np.sqrt(result.xi_hat_sq[index]))
    se = xi / np.sqrt(result.n_split)
    z = est / se
    return EdgeInference(index, est, se, est - q * se, est + q * se, z, bool(abs(z) > q))


def bonferroni_select(result: InferenceResult, alpha: float = DEFAULT_ALPHA) -> list[InterBlockIndex]:
    """Entries with ``|theta_u| > Phi^{-1}(1 - 4 alpha / d^2) * xi / sqrt(n)``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    d = result.partition.d
    level = 4.0 * alpha / d ** 2
    if not level < 1.0:
        raise ValueError(f"Bonferroni level 4*alpha/d^2 = {level:.3g} must be below 1")
    q = normal_quantile(1.0 - level)
    root_n = np.sqrt(result.n_split)
    return [idx for idx, v in result.xi_hat_sq.items()
            if abs(result.theta_u[idx.j, idx.k]) > q * np.sqrt(v) / root_n]


# ---------------------------------------------------------------------------
# pipeline


def run_untangle_and_chord(data, partition: GroupPartition, lam=None,
                           lambda_prime: float | None = None, cfg: AdmmConfig | None = None,
                           alpha: float = DEFAULT_ALPHA, val_data=None, shuffle: bool = False,
                           seed=None, center: bool = False, truth=None) -> InferenceResult:
    """Full de-biasing pipeline on ``2n`` rows.

    ``lam`` may be a float, a grid (then ``val_data`` picks the value) or
    ``None`` for the default grid with ``val_data``. ``truth`` is an optional
    ``(sigma, theta)`` pair; when given, the leading and remainder terms are
    attached for diagnostics.
    """
    cfg = cfg or AdmmConfig()
    x = np.asarray(data, dtype=np.float64)
    if x.shape[1] != partition.d:
        raise DimensionError("data columns do not match the partition")
    d1, d2 = split_sample(x, seed=seed, shuffle=shuffle)
    n = d1.shape[0]
    if n < 2:
        raise ValueError("each half needs at least 2 rows")

    cov1 = covariance_pair(d1, partition, center=center)
    if lam is None or isinstance(lam, (Sequence, np.ndarray)):
        if val_data is None:
            raise ValueError("choosing lambda from a grid needs validation data")
        grid = lambda_grid(partition.d, n) if lam is None else lam
        cov_val = covariance_pair(val_data, partition, center=center)
        fit = select_lambda(cov1, cov_val, grid, cfg).best
    else:
        fit = fit_strings(cov1, float(lam), cfg)
        fit.state = None
    if not fit.converged:
        log.info("STRINGS fit did not converge (kkt=%.3g)", fit.kkt_residual)

    cov2 = covariance_pair(d2, partition, center=center)
    s2, sg2 = cov2.full, block_diagonal(cov2.full, partition)
    lp = default_lambda_prime(partition.d, n) if lambda_prime is None else float(lambda_prime)
    m_sol = solve_clime_rows(s2, lp)
    p_sol = solve_clime_rows(sg2, lp, partition)

    s1, sg1 = cov1.full, block_diagonal(cov1.full, partition)
    theta_hat = fit.theta_hat
    theta_u = debias(theta_hat, s1, sg1, m_sol.m, p_sol.m)
    xi, clamped = variance_estimate(theta_hat, s1, sg1, m_sol.m, p_sol.m, partition)
    diag = None
    if truth is not None:
        diag = leading_remainder(theta_hat, s1, sg1, m_sol.m, p_sol.m, truth[0], truth[1],
                                 partition)
    return InferenceResult(theta_u=theta_u, xi_hat_sq=xi, n_split=n, alpha=alpha,
                           partition=partition, lam=fit.lam, lambda_prime=lp, clamped=clamped,
                           fit=fit, m=m_sol, p=p_sol, leading_remainder_diag=diag)
