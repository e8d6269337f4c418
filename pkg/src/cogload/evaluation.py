"""Cross-validation, chance levels, per-task averaging and significance tests."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .features import FeatureMatrix
from .kernels import signed_rank_tail_count
from .model import (ModelError, PipelineConfig, WorkloadIndexSeries, build_cache,
                    fit_from_cache, features_from_cache, normalize_index, slda_score,
                    slda_train, use_context_covs)
from .sigio import EpochSet, Recording, TaskIntervals, slide

log = logging.getLogger(__name__)

EXACT_WILCOXON_MAX_N = 12


class EvalError(ValueError):
    pass


# ------------------------------------------------------- cross-validation

@dataclass(frozen=True)
class CvResult:
    fold_accuracies: tuple
    mean_accuracy: float
    fold_counts: tuple  # per held-out fold: (n_class0, n_class1)
    seed: int | None
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {"fold_accuracies": list(self.fold_accuracies),
                "mean_accuracy": self.mean_accuracy,
                "fold_counts": [list(c) for c in self.fold_counts],
                "seed": self.seed, "config": self.config}


def stratified_folds(labels, k, rng):
    """Seeded stratified split into ``k`` folds; returns a list of test-index arrays."""
    labels = np.asarray(labels)
    if k < 2:
        raise EvalError("need k >= 2 folds")
    folds = [[] for _ in range(k)]
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        if idx.size < k:
            raise EvalError(f"class {c} has {idx.size} trials, fewer than k={k}")
        for f, chunk in enumerate(np.array_split(rng.permutation(idx), k)):
            folds[f].extend(chunk.tolist())
    return [np.sort(np.asarray(f)) for f in folds]


def cross_validate_with(labels, k, seed, fit_predict: Callable, config=None) -> CvResult:
    """Generic stratified k-fold loop; ``fit_predict(train_idx, test_idx)`` returns predictions."""
    labels = np.asarray(labels)
    folds = stratified_folds(labels, k, np.random.default_rng(seed))
    accs, counts = [], []
    for test in folds:
        train = np.setdiff1d(np.arange(labels.size), test)
        pred = np.asarray(fit_predict(train, test))
        accs.append(float(np.mean(pred == labels[test])))
        counts.append((int(np.sum(labels[test] == 0)), int(np.sum(labels[test] == 1))))
    return CvResult(tuple(accs), float(np.mean(accs)), tuple(counts), seed, config or {})


def cross_validate_features(fm: FeatureMatrix, k=2, seed=0) -> CvResult:
    """k-fold sLDA on precomputed features (no spatial filtering)."""
    def fit_predict(train, test):
        lda = slda_train(FeatureMatrix(fm.values[train], fm.names, fm.labels[train]))
        return (slda_score(lda, fm.values[test]) > 0).astype(int)
    return cross_validate_with(fm.labels, k, seed, fit_predict)


def cross_validate(epochs: EpochSet, k=2, config: PipelineConfig = PipelineConfig(), seed=0,
                   use_recording: Recording | None = None, shuffle_labels=False) -> CvResult:
    """Stratified k-fold accuracy of the full pipeline.

    CSP filters, standardization and sLDA are all fit on the training folds
    only. Band filtering is per window, so it is computed once up front.
    """
    if epochs.labels is None:
        raise EvalError("cross-validation needs labeled epochs")
    labels = epochs.labels
    if shuffle_labels:
        labels = np.random.default_rng([seed, 7]).permutation(labels)
    cache = build_cache(epochs, config)
    use_covs = None
    if config.uses_eeg and config.regularization == "invariant":
        if use_recording is None:
            raise ModelError("invariant CSP requested but no use-context recording given")
        use_covs = use_context_covs(use_recording.pick("EEG"), config)

    def fit_predict(train, test):
        csp, lda = fit_from_cache(cache.subset(train), labels[train], config, use_covs)
        scores = slda_score(lda, features_from_cache(cache.subset(test), csp, config))
        return (scores > 0).astype(int)

    snap = asdict(config)
    snap["modalities"] = list(config.modalities)
    snap["shuffle_labels"] = bool(shuffle_labels)
    return cross_validate_with(labels, k, seed, fit_predict, snap)


# ---------------------------------------------------------- chance level

def chance_level(n_trials, alpha=0.01):
    """Smallest accuracy k/n with P(X >= k) <= alpha for X ~ Binomial(n, 1/2).

    The tail is summed exactly in integer arithmetic.
    """
    n = int(n_trials)
    if n < 1:
        raise EvalError("n_trials must be >= 1")
    if not 0 < alpha < 1:
        raise EvalError("alpha must lie in (0, 1)")
    bound = Fraction(alpha) * (1 << n)  # P(X >= k) <= alpha  <=>  count <= alpha * 2^n
    tail = 0
    c = 1  # C(n, j), starting at j = n
    best = n + 1
    for j in range(n, -1, -1):
        tail += c
        if tail > bound:
            break
        best = j
        c = c * j // (n - j + 1)
    if best > n:
        # even X = n is too likely (tiny n); no achievable threshold
        return 1.0
    return best / n


# ------------------------------------------------------- task averaging

@dataclass(frozen=True)
class TaskSummary:
    task_id: int
    mean: float | None
    n_windows: int
    included: bool


def _task_windows(series: WorkloadIndexSeries, task, rate_hz):
    lo, hi = task.start_sample / rate_hz, task.end_sample / rate_hz
    t = series.t_start_s
    return np.flatnonzero((t >= lo - 1e-9) & (t < hi - 1e-9))


def _in_range(series, task, rate_hz, window_seconds):
    if len(series) == 0:
        return False
    t_end = series.t_start_s[-1] + (window_seconds or 0.0)
    return task.start_sample / rate_hz >= series.t_start_s[0] - 1e-9 and \
        task.end_sample / rate_hz <= t_end + 1e-9


def task_average(series: WorkloadIndexSeries, tasks: TaskIntervals, rate_hz,
                 window_seconds=None) -> list:
    """Mean normalized index over the windows starting inside each included task."""
    out = []
    for task in tasks:
        if not task.included:
            out.append(TaskSummary(task.task_id, None, 0, False))
            continue
        idx = _task_windows(series, task, rate_hz)
        if idx.size == 0 or not _in_range(series, task, rate_hz, window_seconds):
            log.warning("task %d outside the estimated series; excluded", task.task_id)
            out.append(TaskSummary(task.task_id, None, int(idx.size), False))
            continue
        out.append(TaskSummary(task.task_id, float(series.index[idx].mean()), int(idx.size), True))
    return out


# ---------------------------------------------------- permutation test

@dataclass(frozen=True)
class PermutationResult:
    task_ids: tuple
    real_vector: np.ndarray
    perm_vectors: np.ndarray  # n_perm x tasks
    perm_mean: np.ndarray
    perm_cov: np.ndarray
    mahalanobis_sq: float
    p_value: float
    p_empirical: float
    n_permutations: int
    seed: int

    def to_dict(self):
        return {"task_ids": list(self.task_ids), "real_vector": self.real_vector.tolist(),
                "perm_mean": self.perm_mean.tolist(), "perm_cov": self.perm_cov.tolist(),
                "mahalanobis_sq": self.mahalanobis_sq, "p_value": self.p_value,
                "p_empirical": self.p_empirical, "n_permutations": self.n_permutations,
                "seed": self.seed}


def mvn_p_value(real, perm_vectors):
    """Fit a multivariate normal to ``perm_vectors`` and test ``real`` against it.

    Returns (mean, cov, squared Mahalanobis distance, chi-squared p, empirical p).
    """
    real = np.asarray(real, dtype=float)
    v = np.asarray(perm_vectors, dtype=float)
    n, d = v.shape
    mean = v.mean(axis=0)
    cov = np.atleast_2d(np.cov(v, rowvar=False))
    cov = cov + 1e-9 * max(np.trace(cov), 1e-300) / d * np.eye(d)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise EvalError("permutation covariance is singular; use more permutations") from None
    if np.min(np.diag(chol)) <= 1e-150:
        raise EvalError("permutation covariance is singular; use more permutations")

    def m2(x):
        y = np.linalg.solve(chol, (x - mean).T)
        return np.sum(y * y, axis=0)

    d2 = float(m2(real[None, :])[0])
    p = float(stats.chi2.sf(d2, d))
    p = min(1.0, max(p, np.finfo(float).tiny))
    perm_d2 = m2(v)
    p_emp = float((1 + np.sum(perm_d2 >= d2)) / (n + 1))
    return mean, cov, d2, p, p_emp


def _task_vector(series, tasks, rate_hz, window_seconds, ids):
    summ = {s.task_id: s for s in task_average(series, tasks, rate_hz, window_seconds)}
    return np.array([summ[i].mean for i in ids])


def permutation_test(calib: EpochSet, use: Recording, tasks: TaskIntervals,
                     config: PipelineConfig = PipelineConfig(), n_perm=1000, seed=0,
                     n_jobs=1) -> PermutationResult:
    """Compare real per-task mean indices with those of label-shuffled classifiers.

    Iteration ``i`` shuffles the calibration labels with ``seed ^ i``, retrains
    the whole pipeline and records its per-task mean vector. Results are
    stored by iteration index, so ``n_jobs`` does not change the output.
    """
    if n_perm < 100:
        raise EvalError(f"n_perm={n_perm}: use at least 100 permutations")
    if calib.labels is None:
        raise EvalError("calibration epochs must be labeled")
    rate = use.rate_hz
    windows = slide(use, config.window_seconds, config.step_seconds)
    probe = WorkloadIndexSeries(windows.t_start_s, np.zeros(len(windows)), np.zeros(len(windows)))
    ids = tuple(s.task_id for s in task_average(probe, tasks, rate, config.window_seconds)
                if s.included)
    if len(ids) < 2:
        raise EvalError("need at least 2 included tasks")

    cal_cache = build_cache(calib, config)
    use_cache = build_cache(windows, config, need_covs=False)
    use_covs = None
    if config.uses_eeg and config.regularization == "invariant":
        use_covs = use_context_covs(use.pick("EEG"), config)

    def vector(labels):
        csp, lda = fit_from_cache(cal_cache, labels, config, use_covs)
        raw = slda_score(lda, features_from_cache(use_cache, csp, config))
        series = WorkloadIndexSeries(windows.t_start_s, raw,
                                     normalize_index(raw, config.normalization))
        return _task_vector(series, tasks, rate, config.window_seconds, ids)

    real = vector(calib.labels)

    def one(i):
        rng = np.random.default_rng(seed ^ i)
        return vector(rng.permutation(calib.labels))

    if n_jobs == 1:
        perms = [one(i) for i in range(n_perm)]
    else:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            perms = list(ex.map(one, range(n_perm)))
    perm = np.vstack(perms)
    mean, cov, d2, p, p_emp = mvn_p_value(real, perm)
    return PermutationResult(ids, real, perm, mean, cov, d2, p, p_emp, n_perm, seed)


# ------------------------------------------------ quarter comparison

@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float
    p_value: float
    n_pairs: int
    exact: bool
    degenerate: bool


def _midranks(a):
    return stats.rankdata(a, method="average")


def wilcoxon_signed_rank(diffs) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test with W = min(W+, W-).

    Zero differences are dropped and ties get mid-ranks. Up to 12 pairs the
    p-value is exact (all 2^n sign flips enumerated); beyond that a normal
    approximation with tie and continuity corrections is used.
    """
    d = np.asarray(diffs, dtype=float)
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0.0, 1.0, 0, True, True)
    r = _midranks(np.abs(d))
    w_plus = float(r[d > 0].sum())
    w_minus = float(r[d < 0].sum())
    w = min(w_plus, w_minus)
    if n <= EXACT_WILCOXON_MAX_N:
        ranks2 = np.round(2 * r).astype(np.int64)
        count = signed_rank_tail_count(ranks2, int(round(2 * w)))
        return WilcoxonResult(w, min(1.0, count / 2.0**n), n, True, False)
    mu = n * (n + 1) / 4.0
    _, tie_counts = np.unique(r, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = min(0.0, (w - mu + 0.5) / math.sqrt(var))
    return WilcoxonResult(w, min(1.0, 2.0 * stats.norm.cdf(z)), n, False, False)


@dataclass(frozen=True)
class QuarterResult:
    task_ids: tuple
    first: np.ndarray
    last: np.ndarray
    test: WilcoxonResult

    def to_dict(self):
        return {"task_ids": list(self.task_ids), "first_quarter": self.first.tolist(),
                "last_quarter": self.last.tolist(), "wilcoxon_statistic": self.test.statistic,
                "p_value": self.test.p_value, "n_pairs": self.test.n_pairs,
                "exact": self.test.exact, "degenerate": self.test.degenerate}


def quarter_means(series: WorkloadIndexSeries, tasks: TaskIntervals, rate_hz):
    """Per included task with >= 4 windows: mean index of its first and last 25% of windows."""
    ids, first, last = [], [], []
    for task in tasks.included:
        idx = _task_windows(series, task, rate_hz)
        if idx.size < 4:
            continue
        q = idx.size // 4
        ids.append(task.task_id)
        first.append(series.index[idx[:q]].mean())
        last.append(series.index[idx[-q:]].mean())
    if not ids:
        raise EvalError("no included task has at least 4 windows")
    return tuple(ids), np.array(first), np.array(last)


def quarter_compare(series: WorkloadIndexSeries, tasks: TaskIntervals, rate_hz) -> QuarterResult:
    """First- vs last-quarter workload, paired across the tasks of one session."""
    ids, first, last = quarter_means(series, tasks, rate_hz)
    return QuarterResult(ids, first, last, wilcoxon_signed_rank(last - first))


def quarter_compare_group(sessions: Sequence[tuple]) -> QuarterResult:
    """Same comparison paired across participants.

    ``sessions`` holds (series, tasks, rate_hz) per participant; each
    participant contributes its first/last quarter means averaged over tasks.
    """
    first, last = [], []
    for series, tasks, rate in sessions:
        _, f, l_ = quarter_means(series, tasks, rate)
        first.append(f.mean())
        last.append(l_.mean())
    first, last = np.array(first), np.array(last)
    return QuarterResult(tuple(range(1, len(first) + 1)), first, last,
                         wilcoxon_signed_rank(last - first))
