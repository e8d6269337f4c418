"""Common spatial patterns, plain and regularized against context shifts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg

from .dsp import BandDef
from .sigio import EpochSet

RIDGE_EPS = 1e-8


class SpatialError(ValueError):
    pass


@dataclass(frozen=True)
class CovMatrix:
    values: np.ndarray
    n_trials_aggregated: int = 1

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise SpatialError("covariance must be square")
        if not np.allclose(v, v.T, atol=1e-10, rtol=0):
            raise SpatialError("covariance must be symmetric")
        tr = np.trace(v)
        if not tr > 0:
            raise SpatialError("covariance trace must be positive")
        if np.linalg.eigvalsh(v)[0] < -1e-8 * tr:
            raise SpatialError("covariance is not positive semi-definite")
        v = (v + v.T) / 2
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_channels(self):
        return self.values.shape[0]

    def trace_normalized(self):
        return CovMatrix(self.values / np.trace(self.values), self.n_trials_aggregated)


@dataclass(frozen=True)
class PenaltyMatrix:
    values: np.ndarray
    k_components: int
    component_eigenvalues: tuple
    no_shift: bool = False


@dataclass(frozen=True)
class CspModel:
    """Spatial filter bank for one band; ``filters`` rows are filters.

    ``regularization`` is ``None`` for plain CSP or a dict with ``lambda`` and
    ``k`` for the context-invariant variant.
    """
    filters: np.ndarray
    eigenvalues: np.ndarray
    band: BandDef | None = None
    regularization: dict | None = field(default=None)

    @property
    def n_filters(self):
        return self.filters.shape[0]


def trial_covariances(data):
    """Unit-trace sample covariance of each trial (trials x C x T -> trials x C x C)."""
    x = np.asarray(data, dtype=float)
    x = x - x.mean(axis=-1, keepdims=True)
    covs = x @ np.swapaxes(x, -1, -2) / (x.shape[-1] - 1)
    tr = np.trace(covs, axis1=-2, axis2=-1)
    if np.any(tr <= 0):
        bad = int(np.flatnonzero(tr <= 0)[0])
        raise SpatialError(f"trial {bad} has zero variance on every channel")
    return covs / tr[:, None, None]


def mean_covariance(unit_covs, idx=None) -> CovMatrix:
    c = unit_covs if idx is None else unit_covs[idx]
    if c.shape[0] < 1:
        raise SpatialError("no trials to average")
    return CovMatrix(c.mean(axis=0), c.shape[0])


def class_covariance(epochs: EpochSet, cls: int) -> CovMatrix:
    """Average unit-trace covariance over the epochs labelled ``cls``."""
    if epochs.labels is None:
        raise SpatialError("epochs are unlabeled")
    if epochs.n_channels < 2:
        raise SpatialError("need at least 2 channels")
    idx = np.flatnonzero(epochs.labels == cls)
    if idx.size < 2:
        raise SpatialError(f"class {cls} has {idx.size} epochs, need at least 2")
    return mean_covariance(trial_covariances(epochs.data[idx]))


def _composite(mats):
    total = sum(mats)
    total = (total + total.T) / 2
    n = total.shape[0]
    scale = np.trace(total) / n
    ev = np.linalg.eigvalsh(total)
    if ev[0] < RIDGE_EPS * scale:
        total = total + RIDGE_EPS * scale * np.eye(n)
        if np.linalg.eigvalsh(total)[0] <= 0:
            raise SpatialError("composite covariance is indefinite even after ridge")
    return total


def _fix_sign(w):
    """Largest-magnitude coefficient made positive, row-wise."""
    w = np.array(w, dtype=float)
    pivot = np.argmax(np.abs(w), axis=1)
    s = np.sign(w[np.arange(w.shape[0]), pivot])
    s[s == 0] = 1.0
    return w * s[:, None]


def _top(a, b, m):
    """Top-``m`` generalized eigenpairs of a w = mu b w, descending, stable on ties."""
    mu, vec = linalg.eigh(a, b)
    order = np.argsort(-mu, kind="stable")[:m]
    return mu[order], vec[:, order].T


def _check(c1, c0, n_filters):
    if c1.values.shape != c0.values.shape:
        raise SpatialError("class covariances differ in size")
    if n_filters < 2 or n_filters % 2:
        raise SpatialError(f"n_filters must be even and positive, got {n_filters}")
    if n_filters > c1.n_channels:
        raise SpatialError(f"n_filters={n_filters} exceeds {c1.n_channels} channels")


def _normalize(w, denom):
    q = np.einsum("fi,ij,fj->f", w, denom, w)
    return w / np.sqrt(q)[:, None]


def csp_train(c1: CovMatrix, c0: CovMatrix, n_filters=6, band=None) -> CspModel:
    """Plain CSP: solve C1 w = lambda (C1 + C0) w and keep both spectrum ends.

    The first half of the returned filters has the largest eigenvalues
    (descending), the second half the smallest (ascending). Each filter is
    scaled so that ``w (C1 + C0) w = 1``.
    """
    _check(c1, c0, n_filters)
    a, b = c1.values, c0.values
    comp = _composite([a, b])
    mu, vec = linalg.eigh(a, comp)
    n = mu.size
    asc = np.argsort(mu, kind="stable")
    desc = np.argsort(-mu, kind="stable")
    half = n_filters // 2
    pick = np.concatenate([desc[:half], asc[:half]])
    if len(set(pick.tolist())) < n_filters:
        # n_filters == n_channels with ties across the midpoint
        pick = np.concatenate([desc[:half], [i for i in asc if i not in desc[:half]][:half]])
    w = _fix_sign(vec[:, pick].T)
    w = _normalize(w, comp)
    eig = np.einsum("fi,ij,fj->f", w, a, w)
    return CspModel(w, eig, band, None)


def pc_difference(c_calib: CovMatrix, c_use: CovMatrix, k=3) -> PenaltyMatrix:
    """Penalty spanned by the k leading principal directions of ``C_use - C_calib``.

    Pipeline covariances are averages of unit-trace trial covariances, so
    both inputs already share a scale and are used as given.
    """
    if c_calib.values.shape != c_use.values.shape:
        raise SpatialError("covariances differ in size")
    n = c_calib.n_channels
    if not 1 <= k <= n:
        raise SpatialError(f"k={k} must be between 1 and {n}")
    delta = c_use.values - c_calib.values
    ev, vec = np.linalg.eigh((delta + delta.T) / 2)
    order = np.argsort(-np.abs(ev), kind="stable")[:k]
    v = vec[:, order]
    p = v @ v.T
    p = (p + p.T) / 2
    no_shift = bool(np.max(np.abs(delta)) == 0.0)
    return PenaltyMatrix(p, k, tuple(float(e) for e in ev[order]), no_shift)


def csp_train_regularized(c1: CovMatrix, c0: CovMatrix, p: PenaltyMatrix, lam=1.0,
                          n_filters=6, band=None) -> CspModel:
    """CSP whose denominator carries ``lam * P`` to avoid context-varying directions.

    The large-eigenvalue half maximizes ``w C1 w / w (C1 + C0 + lam P) w``;
    the small half maximizes the same ratio with C0 on top.
    """
    _check(c1, c0, n_filters)
    if lam < 0:
        raise SpatialError("lambda must be non-negative")
    if p.values.shape != c1.values.shape:
        raise SpatialError("penalty matrix size mismatch")
    a, b = c1.values, c0.values
    denom = a + b + lam * p.values
    comp = _composite([denom])
    half = n_filters // 2
    _, w1 = _top(a, comp, half)
    _, w0 = _top(b, comp, half)
    w = _fix_sign(np.vstack([w1, w0]))
    w = _normalize(w, comp)
    eig = np.einsum("fi,ij,fj->f", w, a, w)
    return CspModel(w, eig, band, {"lambda": float(lam), "k": int(p.k_components)})


def apply_spatial(model: CspModel, epochs: EpochSet) -> EpochSet:
    if epochs.n_channels != model.filters.shape[1]:
        raise SpatialError(f"model expects {model.filters.shape[1]} channels, "
                           f"epochs have {epochs.n_channels}")
    out = np.einsum("fc,ncs->nfs", model.filters, epochs.data)
    names = [f"csp{i}" for i in range(model.n_filters)]
    return replace(epochs, data=out, channel_labels=tuple(names),
                   modalities=("OTHER",) * model.n_filters)
