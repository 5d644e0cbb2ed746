"""Synthetic models, Gaussian sampling, support-recovery metrics and the
Monte-Carlo harnesses for estimation and coverage studies."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .core import GroupPartition, IsaModel, InterBlockIndex, make_model, symmetrize
from .covariance import CovariancePair, covariance_pair
from .inference import DEFAULT_ALPHA, InferenceResult, edge_inference, run_untangle_and_chord
from .strings import SUPPORT_THRESHOLD, AdmmConfig, lambda_grid, select_lambda

log = logging.getLogger(__name__)


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True)
class GeneratorSpec:
    d: int
    s: int
    value: float = 0.5
    condition_number_target: float | None = None  # None -> d
    n_groups: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.d < 2 * self.n_groups or self.n_groups < 2:
            raise GeneratorError("need at least two groups with two variables each")
        if self.value == 0:
            raise GeneratorError("nonzero value required")
        sizes = GroupPartition.equal(self.d, self.n_groups).sizes
        cap = min(sizes[a] * sizes[b] for a in range(len(sizes)) for b in range(a + 1, len(sizes)))
        if not 0 <= self.s <= cap:
            raise GeneratorError(f"s={self.s} exceeds the {cap} available inter-block positions")

    @property
    def target(self) -> float:
        return float(self.d if self.condition_number_target is None
                     else self.condition_number_target)

    def partition(self) -> GroupPartition:
        return GroupPartition.equal(self.d, self.n_groups)


def generate_model(spec: GeneratorSpec) -> IsaModel:
    """Build the benchmark precision matrix.

    All-ones diagonal blocks, ``spec.value`` at ``s`` distinct uniformly drawn
    positions of every cross-group block, a ridge ``delta I`` that sets the
    condition number to the target, then rescaling to a unit diagonal.
    """
    rng = np.random.default_rng(spec.seed)
    part = spec.partition()
    d = spec.d
    raw = part.same_group_mask().astype(np.float64)
    for a in range(part.n_groups):
        for b in range(a + 1, part.n_groups):
            ga, gb = part.groups[a], part.groups[b]
            flat = rng.choice(len(ga) * len(gb), size=spec.s, replace=False)
            for pos in np.sort(flat):
                r, c = divmod(int(pos), len(gb))
                raw[ga[r], gb[c]] = raw[gb[c], ga[r]] = spec.value

    ev = np.linalg.eigvalsh(raw)
    lmin, lmax = ev[0], ev[-1]
    target = spec.target
    if target <= 1:
        raise GeneratorError("condition number target must exceed 1")
    delta = (lmax - target * lmin) / (target - 1.0)
    if delta <= -lmin:
        raise GeneratorError(f"cannot reach condition number {target} (delta={delta:.4g})")
    shifted = raw + delta * np.eye(d)
    ev_shift = ev + delta
    scale = 1.0 / np.sqrt(np.diag(shifted))
    omega = symmetrize(shifted * np.outer(scale, scale))
    np.fill_diagonal(omega, 1.0)
    ev_std = np.linalg.eigvalsh(omega)
    return make_model(
        omega, part, s=spec.s,
        raw_condition_number=float(ev_shift[-1] / ev_shift[0]),
        condition_number=float(ev_std[-1] / ev_std[0]),
    )


def sample_gaussian(model: IsaModel, n: int, seed=None) -> np.ndarray:
    """``n`` i.i.d. rows from ``N(0, Sigma*)`` via a Cholesky factor."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chol = np.linalg.cholesky(model.sigma)
    return rng.standard_normal((n, model.partition.d)) @ chol.T


# ---------------------------------------------------------------------------
# support recovery


@dataclass(frozen=True)
class RecoveryMetrics:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_score: float


def metrics_from_counts(tp: int, fp: int, fn: int) -> RecoveryMetrics:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return RecoveryMetrics(tp, fp, fn, precision, recall, f)


def recovery_metrics(theta_hat, model: IsaModel,
                     threshold: float = SUPPORT_THRESHOLD) -> RecoveryMetrics:
    """Compare cross-group entries above ``threshold`` to the true support.

    Each unordered pair is counted once, read from the upper (earlier group
    row) position.
    """
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    theta_hat = np.asarray(theta_hat)
    predicted = {idx for idx in model.partition.inter_pairs()
                 if abs(theta_hat[idx.j, idx.k]) > threshold}
    tp = len(predicted & model.support)
    return metrics_from_counts(tp, len(predicted) - tp, len(model.support) - tp)


# ---------------------------------------------------------------------------
# harness plumbing


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replication ``rep``; scheduling-order free."""
    return np.random.default_rng([seed, rep])


def _map(func, items, jobs: int):
    if jobs <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(func, items))


class Estimator(Protocol):
    """Pluggable support estimator for the benchmark harness.

    Receives training and validation covariances and returns a d x d
    estimate whose cross-group entries are thresholded for support.
    """

    def __call__(self, cov_train: CovariancePair, cov_val: CovariancePair) -> np.ndarray: ...


@dataclass
class StringsEstimator:
    grid: list[float] | None = None
    cfg: AdmmConfig = field(default_factory=AdmmConfig)

    def __call__(self, cov_train: CovariancePair, cov_val: CovariancePair) -> np.ndarray:
        grid = self.grid if self.grid is not None else lambda_grid(cov_train.d, cov_train.n)
        return select_lambda(cov_train, cov_val, grid, self.cfg).best.theta_hat


@dataclass
class BenchmarkRow:
    metric: str
    mean: float
    se: float

    def formatted(self, digits: int = 2) -> str:
        return f"{self.mean:.{digits}f}({self.se:.{digits}f})"


@dataclass
class BenchmarkResult:
    spec: GeneratorSpec
    replications: int
    failed: int
    per_rep: list[RecoveryMetrics]
    rows: list[BenchmarkRow]
    chosen_lambdas: list[float] = field(default_factory=list)
    rep_ids: list[int] = field(default_factory=list)

    def row(self, metric: str) -> BenchmarkRow:
        return next(r for r in self.rows if r.metric == metric)


def _benchmark_rep(args) -> tuple[RecoveryMetrics | None, float]:
    spec, rep, seed, n_train, n_val, grid, cfg, center, method, estimator = args
    rng = replication_rng(seed, rep)
    model_seed = int(rng.integers(2**63 - 1))
    model = generate_model(GeneratorSpec(spec.d, spec.s, spec.value,
                                         spec.condition_number_target, spec.n_groups,
                                         model_seed))
    x_train = sample_gaussian(model, n_train, rng)
    x_val = sample_gaussian(model, n_val, rng)
    part = model.partition
    try:
        cov_t = covariance_pair(x_train, part, center=center, method=method)
        cov_v = covariance_pair(x_val, part, center=center, method=method)
        if estimator is not None:
            return recovery_metrics(estimator(cov_t, cov_v), model), float("nan")
        g = grid if grid is not None else lambda_grid(part.d, n_train)
        sel = select_lambda(cov_t, cov_v, g, cfg)
        return recovery_metrics(sel.best.theta_hat, model), sel.lam
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.warning("replication %d failed: %s", rep, exc)
        return None, float("nan")


def run_benchmark(spec: GeneratorSpec, n_train: int = 100, n_val: int = 100, grid=None,
                  cfg: AdmmConfig | None = None, replications: int = 100, seed: int = 0,
                  jobs: int = 1, center: bool = False, method: str = "sample",
                  estimator: Estimator | None = None) -> BenchmarkResult:
    """Support-recovery study: a fresh model and samples per replication.

    Failed replications are counted and excluded from the averages.
    """
    if replications < 1:
        raise ValueError("replications must be >= 1")
    cfg = cfg or AdmmConfig()
    tasks = [(spec, r, seed, n_train, n_val, grid, cfg, center, method, estimator)
             for r in range(replications)]
    out = _map(_benchmark_rep, tasks, jobs)
    per_rep = [m for m, _ in out if m is not None]
    lams = [lam for m, lam in out if m is not None]
    rows = []
    for metric in ("precision", "recall", "f_score"):
        vals = np.array([getattr(m, metric) for m in per_rep])
        se = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rows.append(BenchmarkRow(metric, float(vals.mean()) if len(vals) else float("nan"), se))
    ids = [r for r, (m, _) in enumerate(out) if m is not None]
    return BenchmarkResult(spec, replications, replications - len(per_rep), per_rep, rows, lams,
                           ids)


# ---------------------------------------------------------------------------
# coverage


@dataclass
class CoverageReport:
    avgcov_s: float
    avgcov_sc: float
    avglen_s: float
    avglen_sc: float
    per_entry_cov: dict
    replications: int
    failed: int = 0
    z_scores: dict = field(default_factory=dict)
    clamp_events: int = 0

    def to_row(self) -> dict:
        return {"avgcov_s": self.avgcov_s, "avgcov_sc": self.avgcov_sc,
                "avglen_s": self.avglen_s, "avglen_sc": self.avglen_sc}


def default_tracked(partition: GroupPartition, count: int = 3) -> list[InterBlockIndex]:
    """First row of group 1 against the first ``count`` columns of group 2."""
    j = partition.groups[0][0]
    return [InterBlockIndex(j, k) for k in partition.groups[1][:count]]


def _coverage_rep(args):
    model, rep, seed, n, alpha, lam, lambda_prime, cfg, n_val, tracked = args
    rng = replication_rng(seed, rep)
    data = sample_gaussian(model, 2 * n, rng)
    val = sample_gaussian(model, n_val, rng) if lam is None else None
    try:
        res = run_untangle_and_chord(data, model.partition, lam=lam, lambda_prime=lambda_prime,
                                     cfg=cfg, alpha=alpha, val_data=val)
    except (ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        log.warning("coverage replication %d failed: %s", rep, exc)
        return None
    pairs = model.partition.inter_pairs()
    hit = np.empty(len(pairs), dtype=bool)
    length = np.empty(len(pairs))
    for i, idx in enumerate(pairs):
        e = edge_inference(res, idx, alpha)
        hit[i] = e.ci_low <= model.theta[idx.j, idx.k] <= e.ci_high
        length[i] = e.ci_high - e.ci_low
    z = {idx: float(np.sqrt(res.n_split) * (res.theta_u[idx.j, idx.k] - model.theta[idx.j, idx.k])
                    / np.sqrt(res.xi_hat_sq[idx])) for idx in tracked}
    return hit, length, z, len(res.clamped)


def run_coverage_study(spec: GeneratorSpec, n_per_half: int = 100, alpha: float = DEFAULT_ALPHA,
                       replications: int = 100, seed: int = 0, lam: float | None = None,
                       lambda_prime: float | None = None, cfg: AdmmConfig | None = None,
                       n_val: int | None = None, tracked=None, jobs: int = 1,
                       model: IsaModel | None = None) -> CoverageReport:
    """Confidence-interval coverage over a fixed model.

    The model is generated once from ``spec``; every replication draws
    ``2 * n_per_half`` fresh rows for untangle-and-chord. With ``lam=None``
    the STRINGS penalty is chosen per replication on an extra validation
    sample of ``n_val`` rows (default ``n_per_half``).
    """
    if replications < 2:
        raise ValueError("replications must be >= 2")
    cfg = cfg or AdmmConfig()
    model = model or generate_model(spec)
    tracked = list(tracked) if tracked is not None else default_tracked(model.partition)
    n_val = n_per_half if n_val is None else n_val
    tasks = [(model, r, seed, n_per_half, alpha, lam, lambda_prime, cfg, n_val, tracked)
             for r in range(replications)]
    out = [o for o in _map(_coverage_rep, tasks, jobs) if o is not None]
    if not out:
        raise RuntimeError("every coverage replication failed")
    pairs = model.partition.inter_pairs()
    hits = np.array([o[0] for o in out])
    lens = np.array([o[1] for o in out])
    in_s = np.array([idx in model.support for idx in pairs])
    cov_rate = hits.mean(axis=0)
    mean_len = lens.mean(axis=0)

    def _avg(v, mask):
        return float(v[mask].mean()) if mask.any() else float("nan")

    return CoverageReport(
        avgcov_s=_avg(cov_rate, in_s), avgcov_sc=_avg(cov_rate, ~in_s),
        avglen_s=_avg(mean_len, in_s), avglen_sc=_avg(mean_len, ~in_s),
        per_entry_cov={idx: float(c) for idx, c in zip(pairs, cov_rate)},
        replications=len(out), failed=replications - len(out),
        z_scores={idx: [o[2][idx] for o in out] for idx in tracked},
        clamp_events=int(sum(o[3] for o in out)),
    )


def spec_dict(spec: GeneratorSpec) -> dict:
    out = asdict(spec)
    out["condition_number_target"] = spec.target
    return out
