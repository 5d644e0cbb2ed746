"""STRINGS estimator of the sparse reparametrized precision matrix.

Minimizes::

    Tr(Theta S) - log|S_G Theta S_G + S_G| + lam * ||Theta||_{1,1}

by ADMM on the split ``W = Z``, ``S_G W S_G + S_G = Y``. The W-step is a
Stein-type equation solved in the eigenbasis of ``S_G``, the Y-step is a
closed-form log-det prox and the Z-step is entry-wise soft thresholding.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .core import symmetrize
from .covariance import CovariancePair

log = logging.getLogger(__name__)

SUPPORT_THRESHOLD = 1e-4


class InfeasiblePointError(ValueError):
    """The log-det argument is not positive definite at this Theta."""


class SelectionError(RuntimeError):
    """Every fit on a lambda path failed."""


@dataclass(frozen=True)
class AdmmConfig:
    rho: float = 1.0
    max_iters: int = 2000
    tol: float = 1e-4
    symmetrize_each_iter: bool = True
    # how often (in iterations) the KKT certificate is evaluated
    kkt_every: int = 10

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1 or self.kkt_every < 1:
            raise ValueError("max_iters and kkt_every must be positive")

    @property
    def kkt_tol(self) -> float:
        return 10.0 * self.tol


@dataclass
class AdmmState:
    w: np.ndarray
    y: np.ndarray
    z: np.ndarray
    u1: np.ndarray
    u2: np.ndarray
    iter: int = 0
    primal_residual: float = float("inf")
    dual_residual: float = float("inf")

    @classmethod
    def initial(cls, cov: CovariancePair) -> "AdmmState":
        d = cov.d
        zero = np.zeros((d, d))
        return cls(w=zero.copy(), y=cov.blocked.copy(), z=zero.copy(),
                   u1=zero.copy(), u2=zero.copy())

    def copy(self) -> "AdmmState":
        return AdmmState(self.w.copy(), self.y.copy(), self.z.copy(), self.u1.copy(),
                         self.u2.copy(), self.iter, self.primal_residual, self.dual_residual)


@dataclass
class StringsFit:
    theta_hat: np.ndarray
    lam: float
    iters_used: int
    final_residuals: tuple[float, float]
    objective: float
    converged: bool
    kkt_residual: float = float("inf")
    stop_reason: str = "max_iters"
    state: AdmmState | None = field(default=None, repr=False)

    def support(self, threshold: float = SUPPORT_THRESHOLD) -> np.ndarray:
        return np.abs(self.theta_hat) > threshold

    def to_json(self) -> dict:
        return {
            "lambda": self.lam,
            "converged": self.converged,
            "iters": self.iters_used,
            "objective": self.objective,
            "residuals": list(self.final_residuals),
            "kkt_residual": self.kkt_residual,
            "stop_reason": self.stop_reason,
            "theta": self.theta_hat.tolist(),
        }


@dataclass
class LambdaSelection:
    grid: list[float]
    val_losses: list[float]
    chosen_index: int
    fits: list[StringsFit]

    @property
    def best(self) -> StringsFit:
        return self.fits[self.chosen_index]

    @property
    def lam(self) -> float:
        return self.grid[self.chosen_index]

    def to_json(self) -> dict:
        return {
            "grid": list(self.grid),
            "val_losses": list(self.val_losses),
            "chosen_index": self.chosen_index,
            "chosen_lambda": self.lam,
            "converged": [f.converged for f in self.fits],
        }


# ---------------------------------------------------------------------------
# loss, gradient, optimality


def _logdet_pd(m: np.ndarray) -> float:
    try:
        chol = np.linalg.cholesky(symmetrize(m))
    except np.linalg.LinAlgError as exc:
        raise InfeasiblePointError("S_G Theta S_G + S_G is not positive definite") from exc
    return 2.0 * float(np.log(np.diag(chol)).sum())


def empirical_loss(theta, cov: CovariancePair) -> float:
    """``Tr(Theta S) - log|S_G Theta S_G + S_G|``.

    Raises :class:`InfeasiblePointError` outside the domain.
    """
    theta = np.asarray(theta, dtype=np.float64)
    sg = cov.blocked
    return float(np.sum(theta * cov.full)) - _logdet_pd(sg @ theta @ sg + sg)


def loss_gradient(theta, cov: CovariancePair) -> np.ndarray:
    """``S - S_G (Theta S_G + I)^{-1}``, symmetrized."""
    theta = np.asarray(theta, dtype=np.float64)
    sg = cov.blocked
    d = cov.d
    inv = np.linalg.solve(theta @ sg + np.eye(d), np.eye(d))
    return symmetrize(cov.full - sg @ inv)


def penalized_objective(theta, cov: CovariancePair, lam: float) -> float:
    """Loss plus ``lam * ||Theta||_{1,1}``; ``inf`` outside the domain."""
    try:
        return empirical_loss(theta, cov) + lam * float(np.abs(theta).sum())
    except InfeasiblePointError:
        return float("inf")


def kkt_residual(theta, cov: CovariancePair, lam: float,
                 active_tol: float = SUPPORT_THRESHOLD) -> float:
    """Largest violation of the subgradient optimality condition.

    Entries with ``|theta| > active_tol`` need ``grad + lam*sign(theta) = 0``;
    all others need ``|grad| <= lam``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    grad = loss_gradient(theta, cov)
    active = np.abs(theta) > active_tol
    on = np.abs(grad + lam * np.sign(theta))
    off = np.maximum(np.abs(grad) - lam, 0.0)
    return float(np.where(active, np.maximum(on, off), off).max())


# ---------------------------------------------------------------------------
# ADMM building blocks


@dataclass(frozen=True)
class BlockedEigen:
    """Eigendecomposition ``S_G = V diag(e) V^T``; ``A = S_G^2`` shares ``V``."""

    values: np.ndarray
    vectors: np.ndarray

    @classmethod
    def of(cls, blocked: np.ndarray) -> "BlockedEigen":
        e, v = np.linalg.eigh(blocked)
        return cls(e, v)

    @property
    def a_values(self) -> np.ndarray:
        return self.values ** 2


def solve_stein(b: np.ndarray, a_values: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Solve ``W + A W A = B`` for symmetric ``A = V diag(a_values) V^T``."""
    t = (vectors.T @ b @ vectors) / (1.0 + np.outer(a_values, a_values))
    return vectors @ t @ vectors.T


def admm_w_update(state: AdmmState, cov: CovariancePair, rho: float,
                  eig: BlockedEigen) -> np.ndarray:
    sg, s = cov.blocked, cov.full
    # Z - S_G (S_G - Y) S_G - (S + U1 + S_G U2 S_G) / rho, with the S_G sandwiches merged
    b = state.z - (s + state.u1) / rho - sg @ (sg - state.y + state.u2 / rho) @ sg
    return solve_stein(b, eig.a_values, eig.vectors)


def logdet_prox(c: np.ndarray, rho: float) -> np.ndarray:
    """Minimizer ``Y`` of ``rho Y - Y^{-1} = C``: eigenvalues
    ``(lam + sqrt(lam^2 + 4 rho)) / (2 rho)`` in the eigenbasis of ``C``."""
    lam, q = np.linalg.eigh(symmetrize(c))
    y = (lam + np.sqrt(lam * lam + 4.0 * rho)) / (2.0 * rho)
    return symmetrize((q * y) @ q.T)


def admm_y_update(w_next: np.ndarray, u2: np.ndarray, cov: CovariancePair,
                  rho: float) -> np.ndarray:
    sg = cov.blocked
    c = u2 + rho * (sg @ w_next @ sg + sg)
    return logdet_prox(c, rho)


def soft_threshold(m, a: float) -> np.ndarray:
    """Entry-wise ``(v - a)_+ - (-v - a)_+``."""
    if a < 0:
        raise ValueError("threshold must be nonnegative")
    m = np.asarray(m, dtype=np.float64)
    return np.maximum(m - a, 0.0) - np.maximum(-m - a, 0.0)


# ---------------------------------------------------------------------------
# solver


def fit_strings(cov: CovariancePair, lam: float, cfg: AdmmConfig | None = None,
                warm_start: AdmmState | None = None,
                eig: BlockedEigen | None = None) -> StringsFit:
    """Run ADMM for one penalty level.

    Stops when the relative primal and dual residuals fall below
    ``cfg.tol``, or when the KKT residual (checked every ``cfg.kkt_every``
    iterations) is at most ``10 * cfg.tol``. A fit is reported converged
    only if its KKT residual passes that bound. Non-convergence is not an
    error; the final iterate is returned with ``converged=False``.
    """
    cfg = cfg or AdmmConfig()
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if np.linalg.eigvalsh(cov.blocked)[0] <= 0:
        raise ValueError("blocked covariance is not positive definite")
    eig = eig or BlockedEigen.of(cov.blocked)
    st = warm_start.copy() if warm_start is not None else AdmmState.initial(cov)
    st.iter = 0
    rho, tol = cfg.rho, cfg.tol
    sg = cov.blocked

    kkt = float("inf")
    reason = "max_iters"
    for k in range(1, cfg.max_iters + 1):
        w = admm_w_update(st, cov, rho, eig)
        if cfg.symmetrize_each_iter:
            w = symmetrize(w)
        gwg = sg @ w @ sg + sg
        y = logdet_prox(st.u2 + rho * gwg, rho)
        z_prev = st.z
        z = soft_threshold(w + st.u1 / rho, lam / rho)
        if cfg.symmetrize_each_iter:
            z = symmetrize(z)
        st.u1 = st.u1 + rho * (w - z)
        st.u2 = st.u2 + rho * (gwg - y)
        st.w, st.y, st.z, st.iter = w, y, z, k

        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(st.u2))):
            reason = "diverged"
            break
        z_norm = np.linalg.norm(z)
        st.primal_residual = max(np.linalg.norm(w - z), np.linalg.norm(gwg - y))
        st.dual_residual = rho * np.linalg.norm(z - z_prev)
        residual_ok = (st.primal_residual <= tol * (1.0 + z_norm)
                       and st.dual_residual <= tol * (1.0 + np.linalg.norm(st.u1)))
        if residual_ok or k % cfg.kkt_every == 0:
            kkt = _safe_kkt(z, cov, lam)
            if kkt <= cfg.kkt_tol:
                reason = "residual" if residual_ok else "kkt"
                break

    theta = symmetrize(st.z)
    if reason == "max_iters" or reason == "diverged":
        kkt = _safe_kkt(theta, cov, lam) if reason != "diverged" else float("inf")
    converged = reason in ("residual", "kkt")
    if not converged:
        log.debug("STRINGS fit at lambda=%.4g stopped: %s (kkt=%.3g)", lam, reason, kkt)
    return StringsFit(
        theta_hat=theta,
        lam=float(lam),
        iters_used=st.iter,
        final_residuals=(float(st.primal_residual), float(st.dual_residual)),
        objective=penalized_objective(theta, cov, lam) if reason != "diverged" else float("inf"),
        converged=converged,
        kkt_residual=kkt,
        stop_reason=reason,
        state=st,
    )


def _safe_kkt(theta, cov, lam) -> float:
    try:
        sg = cov.blocked
        np.linalg.cholesky(symmetrize(sg @ theta @ sg + sg))
    except np.linalg.LinAlgError:
        return float("inf")
    return kkt_residual(theta, cov, lam)


# ---------------------------------------------------------------------------
# tuning


def validation_loss(theta, cov_val: CovariancePair) -> float:
    """Frobenius norm of ``S Theta S_G + S - S_G`` on held-out covariances."""
    s, sg = cov_val.full, cov_val.blocked
    return float(np.linalg.norm(s @ theta @ sg + s - sg))


def lambda_grid(d: int, n: int, n_values: int = 50, c_max: float = 5.0) -> np.ndarray:
    """``C * sqrt(log d / n)`` for ``C`` on ``n_values`` uniform points of [0, c_max]."""
    return np.linspace(0.0, c_max, n_values) * np.sqrt(np.log(d) / n)


def select_lambda(cov_train: CovariancePair, cov_val: CovariancePair, grid,
                  cfg: AdmmConfig | None = None) -> LambdaSelection:
    """Fit every ``lam`` in ``grid`` and keep the one with least validation loss.

    Fits run in descending order, each warm-started from the previous one.
    Ties go to the smallest lambda. Results are reported in ascending
    lambda order.
    """
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValueError("empty lambda grid")
    if len(set(grid)) != len(grid) or grid[0] < 0:
        raise ValueError("grid values must be distinct and nonnegative")
    cfg = cfg or AdmmConfig()
    eig = BlockedEigen.of(cov_train.blocked)

    fits: list[StringsFit | None] = [None] * len(grid)
    warm = None
    for i in reversed(range(len(grid))):
        fit = fit_strings(cov_train, grid[i], cfg, warm_start=warm, eig=eig)
        fits[i] = fit
        warm = fit.state if fit.stop_reason != "diverged" else None

    losses = []
    for fit in fits:
        if fit.stop_reason == "diverged" or not np.all(np.isfinite(fit.theta_hat)):
            losses.append(float("inf"))
        else:
            losses.append(validation_loss(fit.theta_hat, cov_val))
    if not np.any(np.isfinite(losses)):
        raise SelectionError("every fit on the lambda path diverged")
    chosen = int(np.argmin(losses))  # first minimum = smallest lambda on ties
    for fit in fits:
        fit.state = None
    return LambdaSelection(grid, losses, chosen, fits)
