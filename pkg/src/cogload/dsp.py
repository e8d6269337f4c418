"""Band definitions, zero-phase Butterworth band-pass filtering and band power."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import signal

from .sigio import EpochSet, Recording


@dataclass(frozen=True)
class BandDef:
    name: str
    low_hz: float
    high_hz: float

    def __post_init__(self):
        if not (0 < self.low_hz < self.high_hz):
            raise ValueError(f"band {self.name}: need 0 < low < high, got "
                             f"{self.low_hz}-{self.high_hz} Hz")

    def check(self, rate_hz):
        if not self.high_hz < rate_hz / 2:
            raise ValueError(f"band {self.name} ({self.low_hz}-{self.high_hz} Hz) reaches "
                             f"Nyquist at rate {rate_hz} Hz")


DELTA = BandDef("delta", 1.0, 3.0)
THETA = BandDef("theta", 4.0, 6.0)
ALPHA = BandDef("alpha", 7.0, 13.0)
BETA = BandDef("beta", 14.0, 25.0)
GAMMA = BandDef("gamma", 26.0, 40.0)

BANDS = (DELTA, THETA, ALPHA, BETA, GAMMA)
BAND_SETS = {"low3": (DELTA, THETA, ALPHA), "all5": BANDS}


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth band-pass, applied forward then backward.

    ``order`` is the total band-pass order, so the analog prototype has
    ``order // 2`` poles.
    """
    order: int = 4
    design: str = "butterworth"
    phase: str = "zero-phase-two-pass"

    def __post_init__(self):
        if self.order < 2 or self.order % 2:
            raise ValueError(f"filter order must be an even integer >= 2, got {self.order}")
        if self.design != "butterworth" or self.phase != "zero-phase-two-pass":
            raise ValueError("only zero-phase Butterworth filtering is supported")


DEFAULT_FILTER = FilterSpec()


def design_sos(low_hz, high_hz, rate_hz, spec: FilterSpec = DEFAULT_FILTER, name="band"):
    if not (0 < low_hz < high_hz < rate_hz / 2):
        raise ValueError(f"band {name} ({low_hz}-{high_hz} Hz) invalid at rate {rate_hz} Hz")
    sos = signal.butter(spec.order // 2, [low_hz, high_hz], btype="bandpass",
                        fs=rate_hz, output="sos")
    poles = np.concatenate([np.roots(s[3:]) for s in sos])
    if not np.all(np.abs(poles) < 1 - 1e-12):
        raise ValueError(f"unstable filter for band {name} ({low_hz}-{high_hz} Hz) "
                         f"at rate {rate_hz} Hz")
    return sos


def settling_samples(low_hz, rate_hz, spec: FilterSpec = DEFAULT_FILTER):
    """Edge padding length: ``order`` periods of the lower cutoff."""
    return int(math.ceil(spec.order * rate_hz / low_hz))


def filter_array(x, low_hz, high_hz, rate_hz, spec: FilterSpec = DEFAULT_FILTER, name="band"):
    """Zero-phase band-pass of ``x`` along its last axis.

    The signal is extended by one settling length on each side with a point
    reflection about the edge sample (``2 x[0] - x[k]``, which keeps value and
    slope continuous), filtered forward and backward, then trimmed back.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] < 2:
        raise ValueError("need at least 2 samples to filter")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains non-finite values")
    sos = design_sos(low_hz, high_hz, rate_hz, spec, name)
    pad = settling_samples(low_hz, rate_hz, spec)
    widths = [(0, 0)] * (x.ndim - 1) + [(pad, pad)]
    xp = np.pad(x, widths, mode="reflect", reflect_type="odd")
    y = signal.sosfiltfilt(sos, xp, axis=-1, padtype=None)
    return np.ascontiguousarray(y[..., pad:pad + x.shape[-1]])


def bandpass(sig, band: BandDef, spec: FilterSpec = DEFAULT_FILTER):
    """Filter a Recording or EpochSet into ``band``; returns the same type."""
    band.check(sig.rate_hz)
    if isinstance(sig, Recording):
        y = filter_array(sig.samples, band.low_hz, band.high_hz, sig.rate_hz, spec, band.name)
        return Recording(sig.rate_hz, sig.channel_labels, sig.modalities, y)
    if isinstance(sig, EpochSet):
        y = filter_array(sig.data, band.low_hz, band.high_hz, sig.rate_hz, spec, band.name)
        return replace(sig, data=y)
    raise TypeError(f"cannot filter {type(sig).__name__}")


def band_power(window):
    """Mean squared amplitude along the last axis (per channel)."""
    w = np.asarray(window, dtype=float)
    if w.size == 0 or w.shape[-1] == 0:
        raise ValueError("empty window")
    return np.mean(w * w, axis=-1)


def min_window_seconds(low_hz, window_seconds=None):
    """Shortest window accepted for a band with lower edge ``low_hz``.

    Two cycles of the lower edge in general. Bands starting at or above
    0.1 Hz accept a single cycle once the window is at least 10 s long.
    """
    two = 2.0 / low_hz
    if low_hz >= 0.1 and window_seconds is not None and window_seconds >= 10.0 - 1e-9:
        return min(two, 1.0 / low_hz)
    return two


def band_power_between(window, low_hz, high_hz, rate_hz, spec: FilterSpec = DEFAULT_FILTER):
    w = np.asarray(window, dtype=float)
    dur = w.shape[-1] / rate_hz
    need = min_window_seconds(low_hz, dur)
    if dur + 1e-9 < need:
        raise ValueError(f"window of {dur:g} s too short for a {low_hz:g} Hz lower edge "
                         f"(needs {need:g} s)")
    return band_power(filter_array(w, low_hz, high_hz, rate_hz, spec))
