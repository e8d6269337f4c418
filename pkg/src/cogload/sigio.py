"""Recordings, events, task intervals and epochs, plus their text file formats."""
from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

log = logging.getLogger(__name__)

MODALITIES = ("EEG", "ECG", "GSR", "OTHER")

# Default EEG label vocabulary (30 scalp positions).
EEG_LABELS_30 = (
    "C6", "CP4", "CPz", "CP3", "P5", "P3", "P1", "Pz", "P2", "P4", "P6", "PO7",
    "PO8", "Oz", "F3", "Fz", "F4", "FT8", "FC6", "FC4", "FCz", "FC3", "FC5",
    "FT7", "C5", "C3", "C1", "Cz", "C2", "C4",
)

DEFAULT_LABEL_MAP = {"0-back": 0, "2-back": 1}

RECORDING_MAGIC = "# cogload-recording v1"
EVENTS_MAGIC = "# cogload-events v1"
TASKS_MAGIC = "# cogload-tasks v1"


class FormatError(ValueError):
    """Malformed input file or invalid data container."""


def _readonly(a):
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Recording:
    rate_hz: float
    channel_labels: tuple
    modalities: tuple
    samples: np.ndarray  # channels x time

    def __post_init__(self):
        rate = float(self.rate_hz)
        if not np.isfinite(rate) or rate <= 0:
            raise FormatError(f"rate_hz must be positive, got {self.rate_hz!r}")
        labels = tuple(str(c) for c in self.channel_labels)
        mods = tuple(str(m) for m in self.modalities)
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 2:
            raise FormatError("samples must be a channels x time matrix")
        n_ch, n_t = samples.shape
        if n_ch < 1:
            raise FormatError("recording has zero channels")
        if n_t < 1:
            raise FormatError("recording has zero samples")
        if len(labels) != n_ch or len(mods) != n_ch:
            raise FormatError(
                f"{n_ch} channels but {len(labels)} labels and {len(mods)} modalities")
        if any(not lab for lab in labels):
            raise FormatError("channel labels must be non-empty")
        bad = [m for m in mods if m not in MODALITIES]
        if bad:
            raise FormatError(f"unknown modalities {bad}; expected one of {MODALITIES}")
        if not np.all(np.isfinite(samples)):
            raise FormatError("recording contains non-finite samples")
        object.__setattr__(self, "rate_hz", rate)
        object.__setattr__(self, "channel_labels", labels)
        object.__setattr__(self, "modalities", mods)
        object.__setattr__(self, "samples", _readonly(samples))

    @property
    def n_channels(self):
        return self.samples.shape[0]

    @property
    def n_samples(self):
        return self.samples.shape[1]

    @property
    def duration_s(self):
        return self.n_samples / self.rate_hz

    def channels_of(self, modality):
        return [i for i, m in enumerate(self.modalities) if m == modality]

    def pick(self, modality):
        """Sub-recording with only the channels of one modality."""
        idx = self.channels_of(modality)
        if not idx:
            raise FormatError(f"recording has no {modality} channel")
        return Recording(self.rate_hz,
                         [self.channel_labels[i] for i in idx],
                         [self.modalities[i] for i in idx],
                         self.samples[idx])


@dataclass(frozen=True)
class EventList:
    onsets: tuple
    labels: tuple

    def __post_init__(self):
        onsets = tuple(int(o) for o in self.onsets)
        labels = tuple(str(lab) for lab in self.labels)
        if len(onsets) != len(labels):
            raise FormatError("onset and label counts differ")
        if any(o < 0 for o in onsets):
            raise FormatError("event onsets must be non-negative")
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise FormatError("event onsets must be strictly increasing")
        object.__setattr__(self, "onsets", onsets)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.onsets)

    def check_bound(self, rec: Recording):
        if self.onsets and self.onsets[-1] >= rec.n_samples:
            raise FormatError(
                f"event onset {self.onsets[-1]} beyond recording length {rec.n_samples}")


@dataclass(frozen=True)
class TaskInterval:
    task_id: int
    start_sample: int
    end_sample: int
    included: bool = True


@dataclass(frozen=True)
class TaskIntervals:
    tasks: tuple

    def __post_init__(self):
        tasks = tuple(
            t if isinstance(t, TaskInterval) else TaskInterval(int(t[0]), int(t[1]), int(t[2]), bool(t[3]))
            for t in self.tasks)
        ids = [t.task_id for t in tasks]
        if any(i <= 0 for i in ids):
            raise FormatError("task ids must be positive")
        if len(set(ids)) != len(ids):
            raise FormatError("task ids must be unique")
        for t in tasks:
            if t.start_sample < 0 or t.start_sample >= t.end_sample:
                raise FormatError(f"task {t.task_id}: need 0 <= start < end")
        spans = sorted((t.start_sample, t.end_sample) for t in tasks)
        for (_, e0), (s1, _) in zip(spans, spans[1:]):
            if s1 < e0:
                raise FormatError("task intervals overlap")
        object.__setattr__(self, "tasks", tasks)

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    @property
    def included(self):
        return [t for t in self.tasks if t.included]


@dataclass(frozen=True)
class EpochSet:
    """Fixed-length windows, trials x channels x samples.

    ``t_start_s`` holds each window's start time in the source recording.
    ``dropped`` lists event indices that could not be epoched.
    """
    data: np.ndarray
    window_seconds: float
    rate_hz: float
    channel_labels: tuple
    modalities: tuple
    labels: np.ndarray | None = None
    t_start_s: np.ndarray | None = None
    dropped: tuple = field(default=())

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 3:
            raise FormatError("epoch data must be trials x channels x samples")
        if self.window_seconds <= 0:
            raise FormatError("window_seconds must be positive")
        expect = int(round(self.window_seconds * self.rate_hz))
        if data.shape[2] != expect:
            raise FormatError(f"window has {data.shape[2]} samples, expected {expect}")
        if data.shape[1] != len(self.channel_labels):
            raise FormatError("channel metadata does not match data")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "channel_labels", tuple(self.channel_labels))
        object.__setattr__(self, "modalities", tuple(self.modalities))
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (data.shape[0],):
                raise FormatError("label count must equal trial count")
            if np.any((labels != 0) & (labels != 1)):
                raise FormatError("labels must be 0 (low) or 1 (high)")
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)
        if self.t_start_s is not None:
            t = _readonly(self.t_start_s)
            if t.shape != (data.shape[0],):
                raise FormatError("timestamp count must equal trial count")
            object.__setattr__(self, "t_start_s", t)

    def __len__(self):
        return self.data.shape[0]

    @property
    def n_channels(self):
        return self.data.shape[1]

    def channels_of(self, modality):
        return [i for i, m in enumerate(self.modalities) if m == modality]

    def pick(self, modality):
        idx = self.channels_of(modality)
        if not idx:
            raise FormatError(f"epochs have no {modality} channel")
        return self.subset(channels=idx)

    def subset(self, trials=None, channels=None):
        data = self.data
        labels, t = self.labels, self.t_start_s
        ch_lab, mods = self.channel_labels, self.modalities
        if trials is not None:
            trials = np.asarray(trials)
            data = data[trials]
            labels = None if labels is None else labels[trials]
            t = None if t is None else t[trials]
        if channels is not None:
            data = data[:, channels]
            ch_lab = [ch_lab[i] for i in channels]
            mods = [mods[i] for i in channels]
        return EpochSet(data, self.window_seconds, self.rate_hz, ch_lab, mods,
                        labels=labels, t_start_s=t)

    def with_labels(self, labels):
        return EpochSet(self.data, self.window_seconds, self.rate_hz, self.channel_labels,
                        self.modalities, labels=labels, t_start_s=self.t_start_s,
                        dropped=self.dropped)


def _window_len(window_seconds, rate_hz):
    if not window_seconds > 0:
        raise ValueError(f"window must be positive, got {window_seconds}")
    return int(round(window_seconds * rate_hz))


def epoch(rec: Recording, ev: EventList, window_seconds, offset_seconds=0.0,
          label_map: Mapping[str, int] | None = DEFAULT_LABEL_MAP) -> EpochSet:
    """Cut one window per event, starting ``offset_seconds`` after its onset.

    Events whose window would leave the recording, or whose label is not in
    ``label_map``, are dropped and listed in ``EpochSet.dropped``. Pass
    ``label_map=None`` for unlabeled epochs.
    """
    n = _window_len(window_seconds, rec.rate_hz)
    off = int(round(offset_seconds * rec.rate_hz))
    starts, labels, dropped = [], [], []
    for i, (onset, lab) in enumerate(zip(ev.onsets, ev.labels)):
        s = onset + off
        if s < 0 or s + n > rec.n_samples:
            dropped.append(i)
            continue
        if label_map is not None:
            if lab not in label_map:
                dropped.append(i)
                continue
            labels.append(label_map[lab])
        starts.append(s)
    if dropped:
        log.warning("dropped %d of %d events outside epochable range", len(dropped), len(ev))
    if not starts:
        raise ValueError("no events could be epoched")
    idx = np.asarray(starts)[:, None] + np.arange(n)
    data = np.transpose(rec.samples[:, idx], (1, 0, 2))
    return EpochSet(data, window_seconds, rec.rate_hz, rec.channel_labels, rec.modalities,
                    labels=labels if label_map is not None else None,
                    t_start_s=np.asarray(starts) / rec.rate_hz, dropped=tuple(dropped))


def nonoverlapping_events(ev: EventList, rate_hz, window_seconds) -> EventList:
    """Greedy subset of events whose windows neither overlap nor cross a label change.

    With 2 s letter spacing and 10 s windows this keeps every 5th letter of a
    block, which gives 12 windows per 120 s block.
    """
    n = _window_len(window_seconds, rate_hz)
    keep_on, keep_lab = [], []
    next_free = -1
    onsets, labels = ev.onsets, ev.labels
    for i, (o, lab) in enumerate(zip(onsets, labels)):
        if o < next_free:
            continue
        # the window may not reach an event carrying another label
        j = i + 1
        clean = True
        while j < len(onsets) and onsets[j] < o + n:
            if labels[j] != lab:
                clean = False
                break
            j += 1
        if not clean:
            continue
        keep_on.append(o)
        keep_lab.append(lab)
        next_free = o + n
    return EventList(keep_on, keep_lab)


def slide(rec: Recording, window_seconds, step_seconds) -> EpochSet:
    """Unlabeled windows at 0, step, 2*step, ... while fully inside ``rec``."""
    if not step_seconds > 0:
        raise ValueError(f"step must be positive, got {step_seconds}")
    n = _window_len(window_seconds, rec.rate_hz)
    if n > rec.n_samples:
        raise ValueError(
            f"window {window_seconds} s longer than recording {rec.duration_s:.3f} s")
    step = step_seconds * rec.rate_hz
    n_win = int(np.floor((rec.n_samples - n) / step + 1e-9)) + 1
    starts = np.round(np.arange(n_win) * step).astype(np.int64)
    starts = starts[starts + n <= rec.n_samples]
    idx = starts[:, None] + np.arange(n)
    data = np.transpose(rec.samples[:, idx], (1, 0, 2))
    return EpochSet(data, window_seconds, rec.rate_hz, rec.channel_labels, rec.modalities,
                    t_start_s=starts / rec.rate_hz)


# ---------------------------------------------------------------- file formats

def _fmt(x):
    return repr(float(x))


def _umask():
    mask = os.umask(0)
    os.umask(mask)
    return mask


def _atomic_write(path, text):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.chmod(tmp, 0o666 & ~_umask())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def format_recording(rec: Recording) -> str:
    lines = [
        RECORDING_MAGIC,
        f"# rate_hz={_fmt(rec.rate_hz)}",
        "# channels=" + ",".join(rec.channel_labels),
        "# modalities=" + ",".join(rec.modalities),
    ]
    lines.extend(",".join(map(repr, row)) for row in rec.samples.T.tolist())
    return "\n".join(lines) + "\n"


def write_recording(rec: Recording, path):
    _atomic_write(path, format_recording(rec))


def _read_lines(path):
    with open(path, encoding="utf-8") as fh:
        return fh.read().splitlines()


def _check_magic(lines, magic, path):
    if not lines or lines[0].strip() != magic:
        raise FormatError(f"{path}: line 1: expected '{magic}'")


def _locate_bad_row(lines, body_start, n_channels, path):
    """Slow pass that names the first offending line."""
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != n_channels:
            raise FormatError(
                f"{path}: line {lineno}: ragged row with {len(parts)} values, "
                f"header declares {n_channels} channels")
        try:
            [float(p) for p in parts]
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-numeric value") from None


def load_recording(path) -> Recording:
    lines = _read_lines(path)
    _check_magic(lines, RECORDING_MAGIC, path)
    header = {}
    body_start = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.startswith("#"):
            break
        body_start = lineno
        key, sep, value = line[1:].strip().partition("=")
        if not sep:
            raise FormatError(f"{path}: line {lineno}: malformed header line")
        key = key.strip()
        if key in header:
            raise FormatError(f"{path}: line {lineno}: duplicate header key '{key}'")
        header[key] = value.strip()
    for key in ("rate_hz", "channels", "modalities"):
        if key not in header:
            raise FormatError(f"{path}: missing header key '{key}'")
    try:
        rate = float(header["rate_hz"])
    except ValueError:
        raise FormatError(f"{path}: rate_hz is not a number") from None
    channels = [c.strip() for c in header["channels"].split(",")] if header["channels"] else []
    mods = [m.strip() for m in header["modalities"].split(",")] if header["modalities"] else []
    if not channels:
        raise FormatError(f"{path}: zero channels")
    body = [ln for ln in lines[body_start:] if ln.strip()]
    if not body:
        raise FormatError(f"{path}: no samples")
    try:
        samples = np.loadtxt(body, delimiter=",", dtype=float, ndmin=2, comments=None)
    except ValueError:
        samples = None
    if samples is None or samples.shape[1] != len(channels):
        _locate_bad_row(lines, body_start, len(channels), path)
        raise FormatError(f"{path}: malformed sample rows")
    samples = samples.T
    if not np.all(np.isfinite(samples)):
        raise FormatError(f"{path}: non-finite sample value")
    return Recording(rate, channels, mods, samples)


def format_events(ev: EventList) -> str:
    lines = [EVENTS_MAGIC] + [f"{o},{lab}" for o, lab in zip(ev.onsets, ev.labels)]
    return "\n".join(lines) + "\n"


def write_events(ev: EventList, path):
    _atomic_write(path, format_events(ev))


def load_events(path) -> EventList:
    lines = _read_lines(path)
    _check_magic(lines, EVENTS_MAGIC, path)
    onsets, labels = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        onset, sep, label = line.partition(",")
        if not sep:
            raise FormatError(f"{path}: line {lineno}: expected 'onset_sample,label'")
        try:
            onsets.append(int(onset))
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: onset is not an integer") from None
        labels.append(label.strip())
    try:
        return EventList(onsets, labels)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None


def format_tasks(tasks: TaskIntervals) -> str:
    lines = [TASKS_MAGIC] + [
        f"{t.task_id},{t.start_sample},{t.end_sample},{int(t.included)}" for t in tasks]
    return "\n".join(lines) + "\n"


def write_tasks(tasks: TaskIntervals, path):
    _atomic_write(path, format_tasks(tasks))


def load_tasks(path) -> TaskIntervals:
    lines = _read_lines(path)
    _check_magic(lines, TASKS_MAGIC, path)
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split(",")
        if len(parts) != 4 or parts[3].strip() not in ("0", "1"):
            raise FormatError(
                f"{path}: line {lineno}: expected 'task_id,start_sample,end_sample,included(0|1)'")
        try:
            rows.append(TaskInterval(int(parts[0]), int(parts[1]), int(parts[2]),
                                     parts[3].strip() == "1"))
        except ValueError:
            raise FormatError(f"{path}: line {lineno}: non-integer field") from None
    try:
        return TaskIntervals(rows)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}") from None




def calibration_epochs(rec: Recording, ev: EventList, window_seconds,
                       label_map: Mapping[str, int] | None = DEFAULT_LABEL_MAP) -> EpochSet:
    """Labeled calibration windows following each stimulus onset.

    Windows longer than the stimulus spacing are taken on a non-overlapping
    subset of events, never straddling a condition change.
    """
    onsets = np.asarray(ev.onsets)
    n = _window_len(window_seconds, rec.rate_hz)
    if onsets.size > 1 and n > np.min(np.diff(onsets)):
        ev = nonoverlapping_events(ev, rec.rate_hz, window_seconds)
    return epoch(rec, ev, window_seconds, 0.0, label_map)
