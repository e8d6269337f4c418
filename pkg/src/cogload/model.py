"""Shrinkage LDA, the end-to-end workload classifier and continuous estimation."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .dsp import BAND_SETS, BandDef, FilterSpec, filter_array
from .features import (ECG_NAMES, GSR_NAMES, FeatureMatrix,
                       eeg_feature_names, eeg_features_from_moments, physio_features)
from .kernels import lw_residual_sum
from .sigio import EpochSet, Recording, _atomic_write, slide
from .spatial import (CovMatrix, CspModel, csp_train, csp_train_regularized, mean_covariance,
                      pc_difference, trial_covariances)

MODEL_MAGIC = "cogload-model v1"


class ModelError(ValueError):
    pass


# ------------------------------------------------------------------ sLDA

@dataclass(frozen=True)
class LdaModel:
    weights: np.ndarray
    bias: float
    gamma: float
    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray  # indices of input features used (zero-variance ones dropped)
    n_input: int

    @property
    def dropped(self):
        return sorted(set(range(self.n_input)) - set(self.keep.tolist()))


def ledoit_wolf_gamma(z):
    """Analytic shrinkage intensity toward a scaled identity for centred rows ``z``."""
    n, d = z.shape
    s = z.T @ z / n
    if d == 1:
        return 0.0, s
    nu = np.trace(s) / d
    den = np.sum((s - nu * np.eye(d)) ** 2)
    if den <= 0:
        return 0.0, s
    num = lw_residual_sum(np.ascontiguousarray(z), np.ascontiguousarray(s)) / n**2
    return float(min(max(num / den, 0.0), 1.0)), s


def slda_train(fm: FeatureMatrix, gamma=None) -> LdaModel:
    """Fit a two-class shrinkage LDA on standardized features.

    ``gamma=None`` picks the Ledoit-Wolf shrinkage; a number forces it.
    Positive scores mean class 1 (high workload).
    """
    if fm.labels is None:
        raise ModelError("training features are unlabeled")
    x, y = fm.values, fm.labels
    for c in (0, 1):
        if np.sum(y == c) < 2:
            raise ModelError(f"class {c} has fewer than 2 training rows")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    keep = np.flatnonzero(std > 1e-12 * np.maximum(np.abs(mean), 1e-300))
    if keep.size == 0:
        raise ModelError("all features have zero variance")
    mean, std = mean[keep], std[keep]
    z = (x[:, keep] - mean) / std
    mu0, mu1 = z[y == 0].mean(axis=0), z[y == 1].mean(axis=0)
    zc = z - np.where((y == 1)[:, None], mu1, mu0)
    g, s = ledoit_wolf_gamma(zc)
    if gamma is not None:
        if not 0.0 <= gamma <= 1.0:
            raise ModelError("gamma must lie in [0, 1]")
        g = float(gamma)
    d = s.shape[0]
    sig = (1.0 - g) * s + g * (np.trace(s) / d) * np.eye(d)
    w = np.linalg.solve(sig, mu1 - mu0)
    b = -float(w @ (mu0 + mu1)) / 2.0
    return LdaModel(w, b, g, mean, std, keep, x.shape[1])


def slda_score(model: LdaModel, x):
    """Decision value(s) for one feature vector or a rows x features array."""
    x = np.asarray(getattr(x, "values", x), dtype=float)
    if x.shape[-1] != model.n_input:
        raise ModelError(f"expected {model.n_input} features, got {x.shape[-1]}")
    z = (x[..., model.keep] - model.mean) / model.std
    # same reduction for a single row and a batch, so both agree bit for bit
    return np.sum(z * model.weights, axis=-1) + model.bias


# ------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class PipelineConfig:
    band_set: str = "all5"
    window_seconds: float = 2.0
    step_seconds: float = 1.0
    n_filters: int = 6
    regularization: str = "none"  # or "invariant"
    lam: float = 1.0
    k_pc: int = 3
    modalities: tuple = ("EEG",)
    filter_order: int = 4
    log_power: bool = True
    normalization: str = "minmax"  # or "percentile"
    normalization_scope: str = "session"  # or "session+calibration"

    def __post_init__(self):
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if self.band_set not in BAND_SETS:
            raise ModelError(f"band_set must be one of {sorted(BAND_SETS)}")
        if not self.window_seconds > 0 or not self.step_seconds > 0:
            raise ModelError("window and step must be positive")
        if self.n_filters < 2 or self.n_filters % 2:
            raise ModelError("n_filters must be even and >= 2")
        if self.regularization not in ("none", "invariant"):
            raise ModelError("regularization must be 'none' or 'invariant'")
        if self.lam < 0 or self.k_pc < 1:
            raise ModelError("need lambda >= 0 and k_pc >= 1")
        mods = set(self.modalities)
        if not mods or not mods <= {"EEG", "ECG", "GSR"}:
            raise ModelError("modalities must be a non-empty subset of EEG, ECG, GSR")
        if self.normalization not in ("minmax", "percentile"):
            raise ModelError("normalization must be 'minmax' or 'percentile'")
        if self.normalization_scope not in ("session", "session+calibration"):
            raise ModelError("normalization_scope must be 'session' or 'session+calibration'")
        FilterSpec(self.filter_order)

    @property
    def bands(self) -> tuple:
        return BAND_SETS[self.band_set]

    @property
    def filter_spec(self):
        return FilterSpec(self.filter_order)

    @property
    def uses_eeg(self):
        return "EEG" in self.modalities


@dataclass
class FeatureCache:
    """Label-independent per-window quantities reused across retrainings.

    ``moments[b]`` and ``covs[b]`` are (windows x C x C) for band ``b``;
    ``physio`` is the ECG/GSR feature block or ``None``.
    """
    moments: list
    covs: list
    physio: np.ndarray | None
    t_start_s: np.ndarray | None
    n: int

    def subset(self, idx):
        idx = np.asarray(idx)
        return FeatureCache([m[idx] for m in self.moments], [c[idx] for c in self.covs],
                            None if self.physio is None else self.physio[idx],
                            None if self.t_start_s is None else self.t_start_s[idx],
                            idx.size)


def _physio_block(epochs, config):
    parts = []
    for mod in ("ECG", "GSR"):
        if mod in config.modalities:
            parts.append(physio_features(epochs, mod).values)
    return np.concatenate(parts, axis=1) if parts else None


def build_cache(epochs: EpochSet, config: PipelineConfig, need_covs=True) -> FeatureCache:
    moments, covs = [], []
    if config.uses_eeg:
        eeg = epochs.pick("EEG")
        for band in config.bands:
            band.check(epochs.rate_hz)
            x = filter_array(eeg.data, band.low_hz, band.high_hz, eeg.rate_hz,
                             config.filter_spec, band.name)
            moments.append(x @ np.swapaxes(x, -1, -2) / x.shape[-1])
            if need_covs:
                covs.append(trial_covariances(x))
    return FeatureCache(moments, covs, _physio_block(epochs, config), epochs.t_start_s, len(epochs))


def _feature_names(config):
    names = ()
    if config.uses_eeg:
        names += eeg_feature_names(config.bands, config.n_filters)
    if "ECG" in config.modalities:
        names += ECG_NAMES
    if "GSR" in config.modalities:
        names += GSR_NAMES
    return names


def features_from_cache(cache: FeatureCache, csp: Sequence[CspModel], config) -> np.ndarray:
    blocks = []
    if config.uses_eeg:
        blocks.append(eeg_features_from_moments(cache.moments, csp, config.log_power))
    if cache.physio is not None:
        blocks.append(cache.physio)
    return np.concatenate(blocks, axis=1)


def use_context_covs(use: Recording | EpochSet, config: PipelineConfig):
    """Per-band mean unit-trace covariance of the use context (non-overlapping windows)."""
    if isinstance(use, Recording):
        use = slide(use, config.window_seconds, config.window_seconds)
    cache = build_cache(use, replace(config, modalities=("EEG",)))
    return [mean_covariance(c) for c in cache.covs]


def fit_from_cache(cache: FeatureCache, labels, config: PipelineConfig, use_covs=None,
                   gamma=None):
    """Train CSP banks and sLDA from cached windows; returns (csp list, LdaModel)."""
    labels = np.asarray(labels)
    csp = []
    if config.uses_eeg:
        if config.regularization == "invariant" and use_covs is None:
            raise ModelError("invariant CSP needs use-context data")
        i1, i0 = np.flatnonzero(labels == 1), np.flatnonzero(labels == 0)
        if i1.size < 2 or i0.size < 2:
            raise ModelError("each class needs at least 2 calibration windows")
        sel = np.zeros((2, labels.size))
        sel[0, i0] = 1.0 / i0.size
        sel[1, i1] = 1.0 / i1.size
        for b, band in enumerate(config.bands):
            covs = cache.covs[b]
            n_ch = covs.shape[1]
            c0v, c1v = (sel @ covs.reshape(covs.shape[0], -1)).reshape(2, n_ch, n_ch)
            c1, c0 = CovMatrix(c1v, i1.size), CovMatrix(c0v, i0.size)
            if config.regularization == "invariant":
                pen = pc_difference(mean_covariance(cache.covs[b]), use_covs[b], config.k_pc)
                csp.append(csp_train_regularized(c1, c0, pen, config.lam, config.n_filters, band))
            else:
                csp.append(csp_train(c1, c0, config.n_filters, band))
    fm = FeatureMatrix(features_from_cache(cache, csp, config), _feature_names(config), labels)
    return csp, slda_train(fm, gamma)


@dataclass(frozen=True)
class WorkloadClassifier:
    config: PipelineConfig
    csp: tuple
    lda: LdaModel
    rate_hz: float
    eeg_labels: tuple
    provenance: dict = field(default_factory=dict)

    @property
    def feature_names(self):
        return _feature_names(self.config)

    def check_compatible(self, sig):
        if abs(sig.rate_hz - self.rate_hz) > 1e-9 * self.rate_hz:
            raise ModelError(f"classifier trained at {self.rate_hz} Hz, data at {sig.rate_hz} Hz")
        if self.config.uses_eeg:
            labels = tuple(sig.channel_labels[i] for i in sig.channels_of("EEG"))
            if labels != self.eeg_labels:
                raise ModelError("EEG channels differ from the calibration montage")
        for mod in self.config.modalities:
            if not sig.channels_of(mod):
                raise ModelError(f"data has no {mod} channel")

    def score_cache(self, cache: FeatureCache):
        return slda_score(self.lda, features_from_cache(cache, self.csp, self.config))

    def score_epochs(self, epochs: EpochSet):
        self.check_compatible(epochs)
        return self.score_cache(build_cache(epochs, self.config, need_covs=False))

    def features(self, epochs: EpochSet) -> FeatureMatrix:
        cache = build_cache(epochs, self.config, need_covs=False)
        return FeatureMatrix(features_from_cache(cache, self.csp, self.config),
                             self.feature_names, epochs.labels, epochs.t_start_s)


def train_workload(calib: EpochSet, config: PipelineConfig = PipelineConfig(),
                   use_recording: Recording | None = None, seed=None) -> WorkloadClassifier:
    """Calibrate the full chain (band filters, CSP banks, sLDA) on labeled windows."""
    if len(calib) == 0:
        raise ModelError("no calibration epochs")
    if calib.labels is None:
        raise ModelError("calibration epochs are unlabeled")
    use_covs = None
    if config.uses_eeg and config.regularization == "invariant":
        if use_recording is None:
            raise ModelError("invariant CSP requested but no use-context recording given")
        use_covs = use_context_covs(use_recording.pick("EEG") if isinstance(use_recording, Recording)
                                    else use_recording, config)
    cache = build_cache(calib, config)
    csp, lda = fit_from_cache(cache, calib.labels, config, use_covs)
    eeg_idx = calib.channels_of("EEG")
    train_scores = slda_score(lda, features_from_cache(cache, csp, config))
    prov = {
        "n_trials": int(len(calib)),
        "n_per_class": [int(np.sum(calib.labels == 0)), int(np.sum(calib.labels == 1))],
        "dropped_features": [_feature_names(config)[i] for i in lda.dropped],
        "gamma": lda.gamma,
        "calib_score_range": [float(train_scores.min()), float(train_scores.max())],
        "seed": seed,
        "version": __version__,
    }
    return WorkloadClassifier(config, tuple(csp), lda, calib.rate_hz,
                              tuple(calib.channel_labels[i] for i in eeg_idx), prov)


# ------------------------------------------------------------ estimation

def normalize_index(raw, method="minmax", reference=None):
    """Affine map of scores onto [-1, 1]: min -> -1, max -> +1.

    ``method="percentile"`` clips to the 2nd/98th percentiles first. A
    constant input maps to all zeros. Scores in ``reference`` widen the
    min/max range without being returned.
    """
    r = np.asarray(raw, dtype=float)
    if r.size == 0:
        raise ModelError("cannot normalize an empty score list")
    pool = r if reference is None else np.concatenate([r, np.ravel(reference)])
    if method == "percentile":
        lo, hi = np.percentile(pool, [2.0, 98.0])
        r, pool = np.clip(r, lo, hi), np.clip(pool, lo, hi)
    elif method != "minmax":
        raise ModelError(f"unknown normalization {method!r}")
    lo, hi = pool.min(), pool.max()
    if hi == lo:
        return np.zeros_like(r)
    return np.clip(2.0 * (r - lo) / (hi - lo) - 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class WorkloadIndexSeries:
    t_start_s: np.ndarray
    raw: np.ndarray
    index: np.ndarray

    def __post_init__(self):
        if not (len(self.t_start_s) == len(self.raw) == len(self.index)):
            raise ModelError("series columns differ in length")
        if np.any(np.abs(self.index) > 1.0):
            raise ModelError("normalized index outside [-1, 1]")

    def __len__(self):
        return len(self.raw)

    def to_csv(self):
        lines = ["t_start_s,raw_score,workload_index"]
        lines += [f"{t!r},{r!r},{i!r}" for t, r, i in
                  zip(self.t_start_s.tolist(), self.raw.tolist(), self.index.tolist())]
        return "\n".join(lines) + "\n"


def estimate_series(clf: WorkloadClassifier, rec: Recording, window_seconds=None,
                    step_seconds=None) -> WorkloadIndexSeries:
    """Slide over ``rec``, score every window and normalize over the session.

    With ``normalization_scope="session+calibration"`` the calibration score
    range stored at training time also enters the min/max.
    """
    window_seconds = window_seconds or clf.config.window_seconds
    step_seconds = step_seconds or clf.config.step_seconds
    clf.check_compatible(rec)
    windows = slide(rec, window_seconds, step_seconds)
    raw = clf.score_epochs(windows)
    ref = None
    if clf.config.normalization_scope == "session+calibration":
        ref = clf.provenance.get("calib_score_range")
        if ref is None:
            raise ModelError("classifier carries no calibration score range")
    return WorkloadIndexSeries(windows.t_start_s, raw,
                               normalize_index(raw, clf.config.normalization, ref))


# --------------------------------------------------------- serialization

def _arr(a):
    return np.asarray(a, dtype=float).tolist()


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def classifier_to_dict(clf: WorkloadClassifier) -> dict:
    body = {
        "config": asdict(clf.config),
        "rate_hz": clf.rate_hz,
        "eeg_labels": list(clf.eeg_labels),
        "csp": [{
            "band": asdict(m.band),
            "filters": [_arr(r) for r in m.filters],
            "eigenvalues": _arr(m.eigenvalues),
            "regularization": m.regularization,
        } for m in clf.csp],
        "lda": {
            "weights": _arr(clf.lda.weights),
            "bias": float(clf.lda.bias),
            "gamma": float(clf.lda.gamma),
            "mean": _arr(clf.lda.mean),
            "std": _arr(clf.lda.std),
            "keep": [int(i) for i in clf.lda.keep],
            "n_input": int(clf.lda.n_input),
        },
        "provenance": clf.provenance,
    }
    body["config"]["modalities"] = list(clf.config.modalities)
    return {"format": MODEL_MAGIC, "checksum": hashlib.sha256(_canonical(body).encode()).hexdigest(),
            "body": body}


def classifier_from_dict(doc: dict) -> WorkloadClassifier:
    if doc.get("format") != MODEL_MAGIC:
        raise ModelError(f"not a {MODEL_MAGIC} document")
    body = doc["body"]
    if hashlib.sha256(_canonical(body).encode()).hexdigest() != doc.get("checksum"):
        raise ModelError("model checksum mismatch")
    cfg = PipelineConfig(**body["config"])
    csp = tuple(CspModel(np.asarray(m["filters"], dtype=float), np.asarray(m["eigenvalues"]),
                         BandDef(**m["band"]), m["regularization"]) for m in body["csp"])
    lda_d = body["lda"]
    lda = LdaModel(np.asarray(lda_d["weights"]), lda_d["bias"], lda_d["gamma"],
                   np.asarray(lda_d["mean"]), np.asarray(lda_d["std"]),
                   np.asarray(lda_d["keep"], dtype=np.int64), lda_d["n_input"])
    return WorkloadClassifier(cfg, csp, lda, body["rate_hz"], tuple(body["eeg_labels"]),
                              body["provenance"])


def save_classifier(clf: WorkloadClassifier, path):
    _atomic_write(path, json.dumps(classifier_to_dict(clf), indent=1, allow_nan=False) + "\n")


def load_classifier(path) -> WorkloadClassifier:
    return classifier_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
