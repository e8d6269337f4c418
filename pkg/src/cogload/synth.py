"""Synthetic calibration (N-back) and use (docking-task) sessions with known ground truth.

EEG is a sum of band-limited Gaussian sources projected through fixed spatial
patterns plus white sensor noise. Each source has a variance for the low and
for the high workload condition; use sessions interpolate between the two
according to a per-task load in [0, 1].
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .dsp import FilterSpec, filter_array
from .sigio import (EEG_LABELS_30, EventList, Recording, TaskInterval, TaskIntervals)

# Sources are generated with a steeper filter than the analysis one so that
# little of their power leaks outside the declared band.
SOURCE_FILTER = FilterSpec(order=8)

DEFAULT_TASK_LOADS = (0.1, 0.6, 0.1, 0.0, 1.0, 0.45, 0.15)
CONDITIONS = ("0-back", "2-back")


class SynthError(ValueError):
    pass


@dataclass(frozen=True)
class Source:
    low_hz: float
    high_hz: float
    pattern: tuple | str  # explicit vector or a named template
    variance_low: float
    variance_high: float
    name: str = ""


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    rate_hz: float = 256.0
    n_eeg_channels: int = 30
    sources: tuple | None = None  # None selects default_sources()
    noise_variance: float = 0.5
    context_shift: tuple | None = None  # (pattern, variance), use sessions only
    ecg_rr: tuple = (0.86, 0.78)  # mean RR (s) for low / high workload
    ecg_jitter: tuple = (0.05, 0.03)  # RR standard deviation (s), low / high
    gsr_baseline: float = 5.0
    gsr_scr_rate: tuple = (0.05, 0.15)  # SCR events per second, low / high
    gsr_scr_amplitude: float = 0.4
    task_loads: tuple = DEFAULT_TASK_LOADS
    task_seconds: float = 60.0
    n_blocks: int = 6
    letters_per_block: int = 60
    letter_seconds: float = 2.0

    def resolved_sources(self):
        return default_sources() if self.sources is None else tuple(self.sources)

    def validate(self):
        if self.rate_hz <= 80:
            raise SynthError("rate_hz must exceed 80 Hz to hold the gamma band")
        if self.n_eeg_channels < 2:
            raise SynthError("need at least 2 EEG channels")
        if self.noise_variance < 0:
            raise SynthError("noise variance must be non-negative")
        for s in self.resolved_sources():
            if s.variance_low < 0 or s.variance_high < 0:
                raise SynthError(f"source {s.name or s.pattern}: negative variance")
            if not 0 < s.low_hz < s.high_hz < self.rate_hz / 2:
                raise SynthError(f"source band {s.low_hz}-{s.high_hz} Hz invalid at "
                                 f"{self.rate_hz} Hz")
            if np.linalg.norm(pattern_vector(s.pattern, self.n_eeg_channels)) == 0:
                raise SynthError("source pattern is all zeros")
        if self.context_shift is not None:
            pat, var = self.context_shift
            if var < 0 or np.linalg.norm(pattern_vector(pat, self.n_eeg_channels)) == 0:
                raise SynthError("invalid context shift")
        if any(not 0.0 <= x <= 1.0 for x in self.task_loads):
            raise SynthError("task loads must lie in [0, 1]")
        if self.task_seconds <= 0 or self.n_blocks < 2 or self.letters_per_block < 1:
            raise SynthError("invalid session layout")


def default_sources():
    """Background rhythms in every band plus three workload effects.

    Frontal theta rises with load, parietal alpha falls, and a broadband
    14-40 Hz (muscle-like) component rises.
    """
    bg = []
    for lo, hi, var in ((1, 3, 3.0), (4, 6, 2.0), (7, 13, 3.0), (14, 25, 1.0), (26, 40, 0.6)):
        for j in range(3):
            bg.append(Source(lo, hi, f"random:{lo}:{j}", var, var, f"bg{lo}-{hi}.{j}"))
    effects = [
        Source(4, 6, "frontal", 1.0, 2.2, "theta-frontal"),
        Source(7, 13, "parietal", 2.5, 1.2, "alpha-parietal"),
        Source(14, 40, "temporal", 0.25, 1.0, "betagamma-temporal"),
    ]
    return tuple(bg + effects)


def null_sources():
    """Default sources with the workload effects removed (low variance in both conditions)."""
    return tuple(replace(s, variance_high=s.variance_low) for s in default_sources())


def _label_set(n):
    return EEG_LABELS_30 if n == 30 else tuple(f"E{i + 1}" for i in range(n))


def pattern_vector(pattern, n):
    """Unit-norm spatial pattern for ``n`` channels."""
    if isinstance(pattern, str):
        labels = _label_set(n)
        if pattern in ("frontal", "parietal", "temporal"):
            if n == 30:
                prefix = {"frontal": ("F",), "parietal": ("P", "O"), "temporal": ("FT", "C5", "C6")}
                v = np.array([1.0 if lab.startswith(prefix[pattern]) and not (
                    pattern == "frontal" and lab.startswith("FT")) else 0.15
                    for lab in labels])
            else:
                rng = np.random.default_rng([4321, n, zlib.crc32(pattern.encode())])
                v = rng.standard_normal(n)
        elif pattern.startswith("random:"):
            tag = [int(float(p)) for p in pattern.split(":")[1:]]
            rng = np.random.default_rng([1234, n] + tag)
            v = rng.standard_normal(n)
        else:
            raise SynthError(f"unknown pattern template {pattern!r}")
    else:
        v = np.asarray(pattern, dtype=float)
        if v.shape != (n,):
            raise SynthError(f"pattern has {v.size} entries, expected {n}")
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else v


@dataclass(frozen=True)
class SynthSession:
    recording: Recording
    events: EventList | None
    tasks: TaskIntervals | None
    load: np.ndarray  # per-sample workload level in [0, 1]
    r_peaks_s: np.ndarray = field(default_factory=lambda: np.empty(0))

    def window_load(self, t_start_s, window_seconds):
        """Mean ground-truth load over each window."""
        rate = self.recording.rate_hz
        n = int(round(window_seconds * rate))
        s = np.round(np.asarray(t_start_s) * rate).astype(int)
        c = np.concatenate([[0.0], np.cumsum(self.load)])
        return (c[s + n] - c[s]) / n


def _band_noise(rng, n, lo, hi, rate):
    x = filter_array(rng.standard_normal(n), lo, hi, rate, SOURCE_FILTER)
    return x / x.std()


def _eeg(cfg: SynthConfig, rng, load, shift=None):
    n_t = load.size
    n_ch = cfg.n_eeg_channels
    eeg = np.sqrt(cfg.noise_variance) * rng.standard_normal((n_ch, n_t))
    for s in cfg.resolved_sources():
        var = s.variance_low + load * (s.variance_high - s.variance_low)
        sig = _band_noise(rng, n_t, s.low_hz, s.high_hz, cfg.rate_hz) * np.sqrt(var)
        eeg += np.outer(pattern_vector(s.pattern, n_ch), sig)
    if shift is not None:
        pat, var = shift
        sig = _band_noise(rng, n_t, 1.0, 40.0, cfg.rate_hz) * np.sqrt(var)
        eeg += np.outer(pattern_vector(pat, n_ch), sig)
    return eeg


def _ecg(cfg: SynthConfig, rng, load):
    """Gaussian R waves (plus a T wave) at jittered RR intervals, in microvolts."""
    rate = cfg.rate_hz
    dur = load.size / rate
    peaks = []
    t = float(rng.uniform(0.1, 0.5))
    while t < dur:
        peaks.append(t)
        lvl = load[min(int(t * rate), load.size - 1)]
        mean = cfg.ecg_rr[0] + lvl * (cfg.ecg_rr[1] - cfg.ecg_rr[0])
        sd = cfg.ecg_jitter[0] + lvl * (cfg.ecg_jitter[1] - cfg.ecg_jitter[0])
        t += float(np.clip(mean + sd * rng.standard_normal(), 0.4, 1.6))
    peaks = np.asarray(peaks)
    tt = np.arange(load.size) / rate
    ecg = 15.0 * rng.standard_normal(load.size)
    for p in peaks:
        lo, hi = max(0, int((p - 0.1) * rate)), min(load.size, int((p + 0.45) * rate) + 1)
        seg = tt[lo:hi] - p
        ecg[lo:hi] += 1000.0 * np.exp(-0.5 * (seg / 0.012) ** 2)
        ecg[lo:hi] += 200.0 * np.exp(-0.5 * ((seg - 0.28) / 0.04) ** 2)
    return ecg, peaks


def _gsr(cfg: SynthConfig, rng, load):
    """Tonic level with slow drift plus bi-exponential SCR events, in microsiemens."""
    rate = cfg.rate_hz
    n = load.size
    drift = np.cumsum(rng.standard_normal(n)) * (0.02 / np.sqrt(rate))
    x = cfg.gsr_baseline + drift - drift.mean()
    lam = cfg.gsr_scr_rate[0] + load * (cfg.gsr_scr_rate[1] - cfg.gsr_scr_rate[0])
    events = np.flatnonzero(rng.random(n) < lam / rate)
    kt = np.arange(int(20 * rate)) / rate
    kernel = np.exp(-kt / 2.0) - np.exp(-kt / 0.5)
    kernel /= kernel.max()
    for e in events:
        m = min(kernel.size, n - e)
        x[e:e + m] += cfg.gsr_scr_amplitude * (0.5 + rng.random()) * kernel[:m]
    x += 0.005 * rng.standard_normal(n)
    return x


def _assemble(cfg, rng, load, shift):
    eeg = _eeg(cfg, rng, load, shift)
    ecg, peaks = _ecg(cfg, rng, load)
    gsr = _gsr(cfg, rng, load)
    labels = list(_label_set(cfg.n_eeg_channels)) + ["ECG", "GSR"]
    mods = ["EEG"] * cfg.n_eeg_channels + ["ECG", "GSR"]
    rec = Recording(cfg.rate_hz, labels, mods, np.vstack([eeg, ecg, gsr]))
    return rec, peaks


def gen_calibration(cfg: SynthConfig = SynthConfig()) -> SynthSession:
    """Alternating 0-back / 2-back blocks with one event per letter."""
    cfg.validate()
    rng = np.random.default_rng([cfg.seed, 1])
    rate = cfg.rate_hz
    block_n = int(round(cfg.letters_per_block * cfg.letter_seconds * rate))
    load = np.concatenate([np.full(block_n, float(b % 2)) for b in range(cfg.n_blocks)])
    onsets, labels = [], []
    for b in range(cfg.n_blocks):
        for j in range(cfg.letters_per_block):
            onsets.append(b * block_n + int(round(j * cfg.letter_seconds * rate)))
            labels.append(CONDITIONS[b % 2])
    rec, peaks = _assemble(cfg, rng, load, None)
    return SynthSession(rec, EventList(onsets, labels), None, load, peaks)


def gen_use_session(cfg: SynthConfig = SynthConfig(), n_tasks=None) -> SynthSession:
    """Consecutive tasks whose source variances follow ``cfg.task_loads``."""
    cfg.validate()
    loads = tuple(cfg.task_loads)
    if n_tasks is not None and n_tasks != len(loads):
        raise SynthError(f"task_loads has {len(loads)} entries, n_tasks={n_tasks}")
    rng = np.random.default_rng([cfg.seed, 2])
    task_n = int(round(cfg.task_seconds * cfg.rate_hz))
    load = np.concatenate([np.full(task_n, x) for x in loads])
    tasks = TaskIntervals([TaskInterval(i + 1, i * task_n, (i + 1) * task_n, True)
                           for i in range(len(loads))])
    rec, peaks = _assemble(cfg, rng, load, cfg.context_shift)
    return SynthSession(rec, None, tasks, load, peaks)


def null_config(seed=0, **kw) -> SynthConfig:
    return SynthConfig(seed=seed, sources=null_sources(), **kw)


def transfer_config(seed=0, **kw) -> SynthConfig:
    """Use context with a strong extra source absent from calibration.

    The extra source is broadband (1-40 Hz) over frontal sites, like ocular
    and muscle activity during manipulation, and so overlaps the frontal
    theta workload pattern. Tasks alternate between the two workload
    extremes so the sign of the classifier output can be scored.
    """
    kw.setdefault("context_shift", ("frontal", 20.0))
    kw.setdefault("task_loads", (0.0, 1.0) * 4)
    return SynthConfig(seed=seed, **kw)


def ecg_trace(cfg: SynthConfig, seconds, load=0.0, seed=None):
    """Stand-alone ECG of ``seconds`` at a constant load, with its true R-peak times."""
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 3])
    lv = np.full(int(round(seconds * cfg.rate_hz)), float(load))
    return _ecg(cfg, rng, lv)
