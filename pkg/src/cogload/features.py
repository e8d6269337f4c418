"""Feature extraction: EEG log band power over CSP outputs, ECG and GSR features."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import ndimage

from . import dsp
from .dsp import BAND_SETS, DEFAULT_FILTER, BandDef, FilterSpec
from .kernels import pick_peaks, quadform_power
from .sigio import EpochSet
from .spatial import CspModel, apply_spatial

log = logging.getLogger(__name__)

ECG_NAMES = ("ECG:HR_bpm", "ECG:HRV_LF", "ECG:RMSSD_ms")
GSR_NAMES = ("GSR:mean_amplitude", "GSR:SCR_power", "GSR:SCL_power")

HRV_RESAMPLE_HZ = 4.0
HRV_BAND = (0.003, 0.1)
SCR_BAND = (0.5, 2.0)
SCL_BAND = (0.1, 0.5)


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    names: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.names),):
            raise FeatureError("values and names differ in length")
        if not np.all(np.isfinite(v)):
            raise FeatureError("non-finite feature value")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))


@dataclass(frozen=True)
class FeatureMatrix:
    values: np.ndarray  # rows x features
    names: tuple
    labels: np.ndarray | None = None
    t_start_s: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.names):
            raise FeatureError("feature matrix width does not match names")
        if not np.all(np.isfinite(v)):
            raise FeatureError("non-finite feature value")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "names", tuple(self.names))
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.int64)
            if lab.shape != (v.shape[0],):
                raise FeatureError("label count must equal row count")
            object.__setattr__(self, "labels", lab)
        if self.t_start_s is not None:
            t = np.asarray(self.t_start_s, dtype=float)
            if t.shape != (v.shape[0],):
                raise FeatureError("timestamp count must equal row count")
            object.__setattr__(self, "t_start_s", t)

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    def row(self, i) -> FeatureVector:
        return FeatureVector(self.values[i], self.names)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        head = list(self.names)
        if self.t_start_s is not None:
            head = ["t_start_s"] + head
        if self.labels is not None:
            head.append("label")
        w.writerow(head)
        for i in range(self.n_rows):
            row = [repr(float(x)) for x in self.values[i]]
            if self.t_start_s is not None:
                row = [repr(float(self.t_start_s[i]))] + row
            if self.labels is not None:
                row.append(int(self.labels[i]))
            w.writerow(row)
        return buf.getvalue()


def eeg_feature_names(bands: Sequence[BandDef], n_filters):
    return tuple(f"EEG:{b.name}:csp{j}" for b in bands for j in range(n_filters))


def _resolve_bands(band_set):
    if isinstance(band_set, str):
        try:
            return BAND_SETS[band_set]
        except KeyError:
            raise FeatureError(f"unknown band set {band_set!r}") from None
    return tuple(band_set)


def _log(power, log_power):
    if not log_power:
        return power
    if np.any(power <= 0):
        raise FeatureError("non-positive band power; window is all zeros")
    return np.log(power)


def eeg_features(epochs: EpochSet, models: Sequence[CspModel], band_set="all5",
                 spec: FilterSpec = DEFAULT_FILTER, log_power=True) -> FeatureMatrix:
    """Band-pass, spatially filter and take (log) band power, band by band.

    Columns are ordered by band (frequency order), then by filter index.
    """
    bands = _resolve_bands(band_set)
    if len(models) != len(bands):
        raise FeatureError(f"{len(bands)} bands but {len(models)} CSP models")
    cols = []
    for band, model in zip(bands, models):
        if model.band is not None and model.band != band:
            raise FeatureError(f"model for {model.band.name} given for band {band.name}")
        virt = apply_spatial(model, dsp.bandpass(epochs, band, spec))
        cols.append(_log(dsp.band_power(virt.data), log_power))
    values = np.concatenate(cols, axis=1)
    n_f = models[0].n_filters
    return FeatureMatrix(values, eeg_feature_names(bands, n_f), epochs.labels, epochs.t_start_s)


def band_moments(epochs: EpochSet, band: BandDef, spec: FilterSpec = DEFAULT_FILTER):
    """Per-window second-moment matrices ``X X^T / T`` of band-passed epochs.

    Band power of a spatial filter w on a window is then ``w M w``.
    """
    x = dsp.bandpass(epochs, band, spec).data
    return x @ np.swapaxes(x, -1, -2) / x.shape[-1]


def eeg_features_from_moments(moments, models: Sequence[CspModel], log_power=True):
    cols = [_log(quadform_power(np.ascontiguousarray(m.filters), mom), log_power)
            for m, mom in zip(models, moments)]
    return np.concatenate(cols, axis=1)


# ------------------------------------------------------------------------ ECG

@dataclass(frozen=True)
class RRSeries:
    r_peak_times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.r_peak_times, dtype=float)
        if t.ndim != 1 or np.any(np.diff(t) <= 0):
            raise FeatureError("R-peak times must be strictly increasing")
        object.__setattr__(self, "r_peak_times", t)
        rr = np.diff(t)
        if rr.size and (rr.min() < 0.3 or rr.max() > 2.0):
            log.warning("RR intervals outside 0.3-2.0 s: %.3f-%.3f", rr.min(), rr.max())

    @property
    def rr_intervals(self):
        return np.diff(self.r_peak_times)

    @classmethod
    def from_intervals(cls, rr, t0=0.0):
        rr = np.asarray(rr, dtype=float)
        return cls(t0 + np.concatenate([[0.0], np.cumsum(rr)]))


def detect_r_peaks(ecg, rate_hz) -> RRSeries:
    """R peaks from a single-lead ECG window.

    5-20 Hz band-pass, squared; a sample is a peak when it is a local maximum
    above half the centred 2 s running maximum, with a 250 ms refractory gap.
    """
    x = np.asarray(ecg, dtype=float).ravel()
    if x.size < 3 * rate_hz:
        raise FeatureError("ECG window must be at least 3 s long")
    env = dsp.filter_array(x, 5.0, 20.0, rate_hz) ** 2
    run_max = ndimage.maximum_filter1d(env, size=max(1, int(round(2 * rate_hz))), mode="nearest")
    floor = 1e-12 * max(float(env.max()), 1e-300)
    thresh = np.maximum(0.5 * run_max, floor)
    peaks = pick_peaks(env, thresh, int(round(0.25 * rate_hz)))
    if peaks.size < 2:
        raise FeatureError("insufficient beats")
    return RRSeries(peaks / rate_hz)


def _tachogram(rr: RRSeries, fs=HRV_RESAMPLE_HZ):
    t = rr.r_peak_times[1:]
    grid = np.arange(t[0], t[-1] + 1e-12, 1.0 / fs)
    return np.interp(grid, t, rr.rr_intervals)


def ecg_features(rr: RRSeries, window_seconds) -> FeatureVector:
    """HR (bpm), low-frequency HRV power (s^2) and RMSSD (ms)."""
    ivals = rr.rr_intervals
    if ivals.size < 3:
        raise FeatureError(f"need at least 3 RR intervals, got {ivals.size}")
    if window_seconds + 1e-9 < 1.0 / HRV_BAND[1]:
        raise FeatureError(f"HRV_LF needs a window of at least {1 / HRV_BAND[1]:g} s")
    hr = 60.0 / ivals.mean()
    d = np.diff(ivals)
    rmssd = 1000.0 * np.sqrt(np.mean(d * d))
    tach = _tachogram(rr)
    if tach.size < 2:
        raise FeatureError("RR series too short to resample")
    # The 0.003 Hz floor only defines the band; the window rule is one 0.1 Hz cycle.
    lf = float(dsp.band_power(dsp.filter_array(tach, HRV_BAND[0], HRV_BAND[1], HRV_RESAMPLE_HZ)))
    return FeatureVector([hr, lf, rmssd], ECG_NAMES)


# ------------------------------------------------------------------------ GSR

def gsr_features(gsr, rate_hz) -> FeatureVector:
    """Mean level, SCR (0.5-2 Hz) power and SCL (0.1-0.5 Hz) power."""
    x = np.asarray(gsr, dtype=float).ravel()
    if x.size / rate_hz + 1e-9 < 10.0:
        raise FeatureError("GSR window must be at least 10 s long")
    scr = float(dsp.band_power_between(x, *SCR_BAND, rate_hz))
    scl = float(dsp.band_power_between(x, *SCL_BAND, rate_hz))
    return FeatureVector([x.mean(), scr, scl], GSR_NAMES)


def physio_features(epochs: EpochSet, modality) -> FeatureMatrix:
    """ECG or GSR features for every window, taken from the first channel of ``modality``."""
    idx = epochs.channels_of(modality)
    if not idx:
        raise FeatureError(f"epochs have no {modality} channel")
    ch = idx[0]
    rows = []
    for trial in epochs.data[:, ch]:
        if modality == "ECG":
            rows.append(ecg_features(detect_r_peaks(trial, epochs.rate_hz),
                                     epochs.window_seconds).values)
        elif modality == "GSR":
            rows.append(gsr_features(trial, epochs.rate_hz).values)
        else:
            raise FeatureError(f"no features defined for {modality}")
    names = ECG_NAMES if modality == "ECG" else GSR_NAMES
    return FeatureMatrix(np.vstack(rows), names, epochs.labels, epochs.t_start_s)


def fuse(parts: Sequence[FeatureMatrix]) -> FeatureMatrix:
    """Concatenate feature matrices side by side on a common window grid."""
    if not parts:
        raise FeatureError("nothing to fuse")
    first = parts[0]
    for p in parts[1:]:
        if p.n_rows != first.n_rows:
            raise FeatureError(f"row counts differ: {first.n_rows} vs {p.n_rows}")
        if (first.t_start_s is None) != (p.t_start_s is None) or (
                first.t_start_s is not None and not np.array_equal(first.t_start_s, p.t_start_s)):
            raise FeatureError("window timestamps are not aligned")
    names = sum((p.names for p in parts), ())
    if len(set(names)) != len(names):
        raise FeatureError("duplicate feature names after fusion")
    labels = next((p.labels for p in parts if p.labels is not None), None)
    return FeatureMatrix(np.concatenate([p.values for p in parts], axis=1), names,
                         labels, first.t_start_s)
