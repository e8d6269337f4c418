"""Command-line interface: ``cogload <command> [options]``.

Settings come from an optional TOML file (``--config``) whose keys mirror the
long flag names with underscores (``band_set = "low3"``); flags given on the
command line win. Exit codes: 0 success, 2 invalid configuration, 3 bad or
missing data, 4 numerical failure. Errors are printed to stderr as one JSON
object.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, evaluation, model, sigio, synth
from .dsp import BAND_SETS
from .features import FeatureError
from .sigio import FormatError
from .spatial import SpatialError

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

log = logging.getLogger("cogload")

EXIT_OK, EXIT_VALIDATION, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4

DEFAULTS = {
    "seed": 0,
    "band_set": "all5",
    "window": None,  # None: 2 s (10 s with ECG/GSR); estimate uses the model's
    "step": None,  # None: 1 s; estimate uses the model's
    "reg": "none",
    "lambda": 1.0,
    "k_pc": 3,
    "folds": 2,
    "alpha": 0.01,
    "n_perm": 1000,
    "out_dir": ".",
    "n_filters": 6,
    "modalities": ["EEG"],
    "normalization": "minmax",
    "normalization_scope": "session",
    "filter_order": 4,
    "n_jobs": 1,
    "scenario": "default",
    "rate_hz": 256.0,
    "sessions": "both",
    "shuffle_labels": False,
}

PATH_KEYS = ("recording", "events", "use", "tasks", "model")


class CliError(Exception):
    """Error carrying its exit code."""

    def __init__(self, message, code=EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(message, EXIT_VALIDATION)


# ------------------------------------------------------------------ config

def _load_toml(path):
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}", EXIT_DATA) from None
    except tomllib.TOMLDecodeError as exc:
        raise CliError(f"{path}: {exc}", EXIT_VALIDATION) from None
    out = {}
    for key, value in doc.items():
        k = key.replace("-", "_")
        if k not in DEFAULTS and k not in PATH_KEYS:
            raise CliError(f"{path}: unknown config key '{key}'", EXIT_VALIDATION)
        out[k] = value
    return out


def resolve(args) -> dict:
    """Defaults, then config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        cfg.update(_load_toml(args.config))
    for key, value in vars(args).items():
        if key in ("config", "command", "func") or value is None:
            continue
        cfg[key] = value
    return cfg


def _num(cfg, key, kind, lo=None, lo_open=False):
    try:
        v = kind(cfg[key])
    except (TypeError, ValueError):
        raise CliError(f"{key} must be a {kind.__name__}, got {cfg[key]!r}") from None
    if kind is float and not np.isfinite(v):
        raise CliError(f"{key} must be finite")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise CliError(f"{key} must be {'>' if lo_open else '>='} {lo}, got {v}")
    return v


def pipeline_config(cfg) -> model.PipelineConfig:
    if cfg["band_set"] not in BAND_SETS:
        raise CliError(f"band_set must be one of {sorted(BAND_SETS)}, got {cfg['band_set']!r}")
    if cfg["reg"] not in ("none", "invariant"):
        raise CliError(f"reg must be 'none' or 'invariant', got {cfg['reg']!r}")
    mods = cfg["modalities"]
    if isinstance(mods, str):
        mods = [m.strip() for m in mods.split(",") if m.strip()]
    physio = bool({"ECG", "GSR"} & set(mods))
    if cfg["window"] is None:
        cfg = dict(cfg, window=10.0 if physio else 2.0)
    if cfg["step"] is None:
        cfg = dict(cfg, step=1.0)
    window = _num(cfg, "window", float, 0.0, lo_open=True)
    if physio and window < 10.0:
        raise CliError("ECG/GSR features need window >= 10 s")
    try:
        return model.PipelineConfig(
            band_set=cfg["band_set"], window_seconds=window,
            step_seconds=_num(cfg, "step", float, 0.0, lo_open=True),
            n_filters=_num(cfg, "n_filters", int, 2), regularization=cfg["reg"],
            lam=_num(cfg, "lambda", float, 0.0), k_pc=_num(cfg, "k_pc", int, 1),
            modalities=tuple(mods), filter_order=_num(cfg, "filter_order", int, 2),
            normalization=cfg["normalization"],
            normalization_scope=cfg["normalization_scope"])
    except (model.ModelError, ValueError) as exc:
        raise CliError(str(exc)) from None


def _eval_settings(cfg):
    return {
        "seed": _num(cfg, "seed", int, 0),
        "folds": _num(cfg, "folds", int, 2),
        "alpha": _num(cfg, "alpha", float, 0.0, lo_open=True),
        "n_perm": _num(cfg, "n_perm", int, 1),
        "n_jobs": _num(cfg, "n_jobs", int, 1),
    }


def _path(cfg, key):
    p = cfg.get(key)
    if not p:
        raise CliError(f"missing required input '--{key}'")
    return Path(p)


def _out_dir(cfg) -> Path:
    d = Path(cfg["out_dir"])
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {d}: {exc}", EXIT_DATA) from None
    return d


# ----------------------------------------------------------------- outputs

def _write(path: Path, text):
    sigio._atomic_write(path, text)
    return str(path)


def _dump(obj):
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def _emit(obj):
    sys.stdout.write(_dump(obj))


def _csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (repr(float(v)) if isinstance(v, (float, np.floating))
                                          else v) for v in r])
    return buf.getvalue()


def _config_dict(pc: model.PipelineConfig):
    d = asdict(pc)
    d["modalities"] = list(pc.modalities)
    return d


# ------------------------------------------------------------ data loading

def _calibration(cfg, pc):
    rec = sigio.load_recording(_path(cfg, "recording"))
    ev = sigio.load_events(_path(cfg, "events"))
    ev.check_bound(rec)
    for band in pc.bands:
        band.check(rec.rate_hz)
    return rec, sigio.calibration_epochs(rec, ev, pc.window_seconds)


def _use_recording(cfg, pc, required=False):
    if not cfg.get("use"):
        if required:
            raise CliError("missing required input '--use'")
        if pc.regularization == "invariant":
            raise CliError("invariant CSP needs the use-context recording (--use)")
        return None
    return sigio.load_recording(Path(cfg["use"]))


# ---------------------------------------------------------------- commands

def cmd_synth(cfg):
    seed = _num(cfg, "seed", int, 0)
    rate = _num(cfg, "rate_hz", float, 0.0, lo_open=True)
    pc = pipeline_config(cfg)
    for band in pc.bands:
        try:
            band.check(rate)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    scen = cfg["scenario"]
    makers = {"default": synth.SynthConfig, "null": synth.null_config,
              "transfer": synth.transfer_config}
    if scen not in makers:
        raise CliError(f"scenario must be one of {sorted(makers)}, got {scen!r}")
    if cfg["sessions"] not in ("calibration", "use", "both"):
        raise CliError("sessions must be 'calibration', 'use' or 'both'")
    try:
        sc = makers[scen](seed=seed, rate_hz=rate)
        sc.validate()
    except synth.SynthError as exc:
        raise CliError(str(exc)) from None
    out = _out_dir(cfg)
    files, summary = [], {"seed": seed, "scenario": scen, "rate_hz": rate}
    if cfg["sessions"] in ("calibration", "both"):
        cal = synth.gen_calibration(sc)
        files.append(_write(out / "calibration.csv", sigio.format_recording(cal.recording)))
        files.append(_write(out / "calibration_events.csv", sigio.format_events(cal.events)))
        summary["n_events"] = len(cal.events)
        summary["events_per_class"] = {c: cal.events.labels.count(c) for c in synth.CONDITIONS}
        summary["calibration_seconds"] = cal.recording.duration_s
    if cfg["sessions"] in ("use", "both"):
        use = synth.gen_use_session(sc)
        files.append(_write(out / "use.csv", sigio.format_recording(use.recording)))
        files.append(_write(out / "use_tasks.csv", sigio.format_tasks(use.tasks)))
        summary["n_tasks"] = len(use.tasks)
        summary["task_loads"] = list(sc.task_loads)
    summary["files"] = files
    _emit(summary)


def cmd_calibrate(cfg):
    pc = pipeline_config(cfg)
    seed = _num(cfg, "seed", int, 0)
    _, epochs = _calibration(cfg, pc)
    use = _use_recording(cfg, pc)
    clf = model.train_workload(epochs, pc, use_recording=use, seed=seed)
    path = _write(_out_dir(cfg) / "model.json",
                  json.dumps(model.classifier_to_dict(clf), indent=1, allow_nan=False) + "\n")
    _emit({"model": path, "feature_width": clf.lda.n_input,
           "dropped_features": clf.provenance["dropped_features"], "gamma": clf.lda.gamma,
           "n_trials": clf.provenance["n_trials"], "n_per_class": clf.provenance["n_per_class"],
           "seed": seed, "config": _config_dict(pc)})


def cmd_cv(cfg):
    pc = pipeline_config(cfg)
    es = _eval_settings(cfg)
    _, epochs = _calibration(cfg, pc)
    use = _use_recording(cfg, pc)
    res = evaluation.cross_validate(epochs, es["folds"], pc, es["seed"], use_recording=use,
                                    shuffle_labels=bool(cfg["shuffle_labels"]))
    report = res.to_dict()
    report["n_trials"] = len(epochs)
    report["alpha"] = es["alpha"]
    report["chance_level"] = evaluation.chance_level(len(epochs), es["alpha"])
    report["above_chance"] = res.mean_accuracy >= report["chance_level"]
    report["version"] = __version__
    _write(_out_dir(cfg) / "cv.json", _dump(report))
    _emit(report)


def _task_rows(summaries):
    return [(s.task_id, s.mean, s.n_windows, int(s.included)) for s in summaries]


def cmd_estimate(cfg):
    clf = model.load_classifier(_path(cfg, "model"))
    rec = sigio.load_recording(_path(cfg, "recording"))
    window = None if cfg["window"] is None else _num(cfg, "window", float, 0.0, lo_open=True)
    step = None if cfg["step"] is None else _num(cfg, "step", float, 0.0, lo_open=True)
    series = model.estimate_series(clf, rec, window, step)
    out = _out_dir(cfg)
    files = [_write(out / "series.csv", series.to_csv())]
    summary = {"n_windows": len(series), "model": str(cfg["model"]),
               "window_seconds": window or clf.config.window_seconds,
               "step_seconds": step or clf.config.step_seconds}
    if cfg.get("tasks"):
        tasks = sigio.load_tasks(Path(cfg["tasks"]))
        win = window or clf.config.window_seconds
        summ = evaluation.task_average(series, tasks, rec.rate_hz, win)
        files.append(_write(out / "task_means.csv", _csv(
            ["task_id", "mean_index", "n_windows", "included"], _task_rows(summ))))
        summary["task_means"] = {str(s.task_id): s.mean for s in summ}
        try:
            q = evaluation.quarter_compare(series, tasks, rec.rate_hz)
        except evaluation.EvalError as exc:
            log.warning("quarter comparison skipped: %s", exc)
        else:
            files.append(_write(out / "quarter_means.csv", _csv(
                ["task_id", "first_quarter", "last_quarter"],
                zip(q.task_ids, q.first.tolist(), q.last.tolist()))))
            summary["quarters"] = q.to_dict()
    summary["files"] = files
    _emit(summary)


def cmd_permtest(cfg):
    pc = pipeline_config(cfg)
    es = _eval_settings(cfg)
    if es["n_perm"] < 100:
        raise CliError(f"n_perm={es['n_perm']} is too small; use at least 100 permutations")
    _, epochs = _calibration(cfg, pc)
    use = _use_recording(cfg, pc, required=True)
    tasks = sigio.load_tasks(_path(cfg, "tasks"))
    res = evaluation.permutation_test(epochs, use, tasks, pc, es["n_perm"], es["seed"],
                                      es["n_jobs"])
    out = _out_dir(cfg)
    report = res.to_dict()
    report["config"] = _config_dict(pc)
    report["version"] = __version__
    header = [f"task_{i}" for i in res.task_ids]
    rows = [[i] + row for i, row in enumerate(res.perm_vectors.tolist())]
    report["files"] = [
        _write(out / "permtest.json", _dump(report)),
        _write(out / "perm_vectors.csv", _csv(["iteration"] + header, rows)),
    ]
    _emit(report)


def cmd_chance(cfg):
    n = cfg.get("n")
    if n is None or int(n) < 1:
        raise CliError("chance needs a positive trial count")
    alpha = _num(cfg, "alpha", float, 0.0, lo_open=True)
    if alpha >= 1:
        raise CliError("alpha must be below 1")
    _emit({"n_trials": int(n), "alpha": alpha,
           "threshold": evaluation.chance_level(int(n), alpha)})


def _sniff(path: Path):
    with open(path, encoding="utf-8") as fh:
        head = fh.read(4096)
    first = head.splitlines()[0].strip() if head else ""
    if first == sigio.RECORDING_MAGIC:
        return "recording"
    if first == sigio.EVENTS_MAGIC:
        return "events"
    if first == sigio.TASKS_MAGIC:
        return "tasks"
    if head.lstrip().startswith("{"):
        return "json"
    raise FormatError(f"{path}: not a recognised cogload file")


def cmd_inspect(cfg):
    path = Path(cfg["path"])
    kind = _sniff(path)
    if kind == "recording":
        rec = sigio.load_recording(path)
        info = {"kind": kind, "rate_hz": rec.rate_hz, "n_channels": rec.n_channels,
                "n_samples": rec.n_samples, "duration_s": rec.duration_s,
                "modalities": {m: len(rec.channels_of(m)) for m in sorted(set(rec.modalities))},
                "channels": list(rec.channel_labels)}
    elif kind == "events":
        ev = sigio.load_events(path)
        info = {"kind": kind, "n_events": len(ev),
                "labels": {lab: ev.labels.count(lab) for lab in sorted(set(ev.labels))}}
    elif kind == "tasks":
        tasks = sigio.load_tasks(path)
        info = {"kind": kind, "tasks": [asdict(t) for t in tasks]}
    else:
        doc = json.loads(path.read_text(encoding="utf-8"))
        if isinstance(doc, dict) and doc.get("format") == model.MODEL_MAGIC:
            clf = model.classifier_from_dict(doc)
            info = {"kind": "model", "config": _config_dict(clf.config), "rate_hz": clf.rate_hz,
                    "feature_width": clf.lda.n_input, "gamma": clf.lda.gamma,
                    "bands": [m.band.name for m in clf.csp], "provenance": clf.provenance}
        else:
            info = {"kind": "report", "content": doc}
    _emit(info)


# ------------------------------------------------------------------ parser

def build_parser():
    p = _Parser(prog="cogload", description="Offline mental-workload estimation.")
    p.add_argument("--version", action="version", version=f"cogload {__version__}")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    def common(sp, pipeline=True, evals=False):
        sp.add_argument("--config", help="TOML file with default settings")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out-dir", dest="out_dir")
        if pipeline:
            sp.add_argument("--band-set", dest="band_set", choices=sorted(BAND_SETS))
            sp.add_argument("--window", type=float, help="window length in seconds")
            sp.add_argument("--step", type=float, help="estimation step in seconds")
            sp.add_argument("--reg", choices=("none", "invariant"))
            sp.add_argument("--lambda", dest="lambda", type=float)
            sp.add_argument("--k-pc", dest="k_pc", type=int)
        if evals:
            sp.add_argument("--folds", type=int)
            sp.add_argument("--alpha", type=float)
            sp.add_argument("--n-perm", dest="n_perm", type=int)

    def inputs(sp, *keys):
        for k in keys:
            sp.add_argument(f"--{k}", help=f"{k} file")

    sp = sub.add_parser("synth", help="write synthetic calibration/use sessions")
    common(sp)
    sp.add_argument("--scenario", choices=("default", "null", "transfer"))
    sp.add_argument("--sessions", choices=("calibration", "use", "both"))
    sp.add_argument("--rate", dest="rate_hz", type=float)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("calibrate", help="train a workload classifier")
    common(sp)
    inputs(sp, "recording", "events", "use")
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("cv", help="cross-validated calibration accuracy")
    common(sp, evals=True)
    inputs(sp, "recording", "events", "use")
    sp.add_argument("--shuffle-labels", dest="shuffle_labels", action="store_true", default=None)
    sp.set_defaults(func=cmd_cv)

    sp = sub.add_parser("estimate", help="continuous workload index for a recording")
    common(sp)
    inputs(sp, "model", "recording", "tasks")
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("permtest", help="permutation test of per-task workload")
    common(sp, evals=True)
    inputs(sp, "recording", "events", "use", "tasks")
    sp.add_argument("--jobs", dest="n_jobs", type=int)
    sp.set_defaults(func=cmd_permtest)

    sp = sub.add_parser("chance", help="chance-level accuracy threshold")
    sp.add_argument("n", type=int)
    sp.add_argument("--alpha", type=float)
    sp.add_argument("--config")
    sp.set_defaults(func=cmd_chance)

    sp = sub.add_parser("inspect", help="summarise any cogload file")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_inspect)
    return p


def _classify(exc):
    if isinstance(exc, CliError):
        return exc.code, "validation" if exc.code == EXIT_VALIDATION else "data"
    if isinstance(exc, (synth.SynthError, model.ModelError)):
        return EXIT_VALIDATION, "validation"
    if isinstance(exc, (np.linalg.LinAlgError, FloatingPointError, SpatialError)):
        return EXIT_NUMERICAL, "numerical"
    if "singular" in str(exc) or "indefinite" in str(exc):
        return EXIT_NUMERICAL, "numerical"
    if isinstance(exc, (FormatError, FeatureError, evaluation.EvalError, OSError,
                        ValueError, KeyError, json.JSONDecodeError)):
        return EXIT_DATA, "data"
    return None, None


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            raise CliError("no command given; see --help")
        args.func(resolve(args))
        return EXIT_OK
    except Exception as exc:  # mapped to exit codes below
        code, kind = _classify(exc)
        if code is None:
            raise
        sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__,
                                     "message": str(exc), "exit_code": code}) + "\n")
        return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
