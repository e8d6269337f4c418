"""Compare the numba loop kernels with their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py            # per-kernel timings
    python benchmarks/bench_kernels.py --pipeline # also a 2-fold CV run per path

Per-kernel timings call ``*_loop`` and ``*_numpy`` directly, after a warm-up
call that triggers numba compilation. The pipeline mode runs the same CV in
two subprocesses, one with ``COGLOAD_DISABLE_NUMBA=1``, so the dispatch
chosen at import time is what gets measured.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from cogload import _accel, kernels


def _cases(rng):
    # sizes match one band of a 360-window calibration at 30 channels
    f = rng.standard_normal((6, 30))
    x = rng.standard_normal((360, 30, 64))
    moments = x @ x.transpose(0, 2, 1) / 64
    z = rng.standard_normal((360, 30))
    s = z.T @ z / 360
    env = np.abs(rng.standard_normal(256 * 120)) ** 4
    thr = np.full(env.size, np.quantile(env, 0.99))
    ranks2 = np.arange(2, 26, 2, dtype=np.int64)
    return {
        "quadform_power": ((f, moments), {}),
        "lw_residual_sum": ((z, s), {}),
        "pick_peaks": ((env, thr, 64), {}),
        "signed_rank_tail_count": ((ranks2, 40), {}),
    }


def bench_kernels(repeat=7):
    rng = np.random.default_rng(0)
    rows = []
    for name, (args, kw) in _cases(rng).items():
        times = {}
        for impl in ("loop", "numpy"):
            fn = getattr(kernels, f"{name}_{impl}")
            fn(*args, **kw)  # compile / warm caches
            t = timeit.Timer(lambda: fn(*args, **kw))
            n, _ = t.autorange()
            times[impl] = min(t.repeat(repeat, n)) / n
        rows.append((name, times["loop"], times["numpy"]))
    return rows


_PIPELINE = """
import time
from cogload import synth, sigio, evaluation, model, _accel
cfg = synth.SynthConfig(seed=0, n_blocks=2, letters_per_block=60)
cal = synth.gen_calibration(cfg)
ep = sigio.calibration_epochs(cal.recording, cal.events, 2.0)
evaluation.cross_validate(ep, 2, model.PipelineConfig(), seed=0)  # warm-up
t = time.perf_counter()
r = evaluation.cross_validate(ep, 2, model.PipelineConfig(), seed=0)
print(_accel.USE_NUMBA, time.perf_counter() - t, r.mean_accuracy)
"""


def bench_pipeline():
    out = {}
    for disable in ("0", "1"):
        env = dict(os.environ, COGLOAD_DISABLE_NUMBA=disable)
        res = subprocess.run([sys.executable, "-c", _PIPELINE], env=env, check=True,
                             capture_output=True, text=True)
        used, secs, acc = res.stdout.split()
        out["numba" if used == "True" else "numpy"] = (float(secs), float(acc))
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--pipeline", action="store_true", help="also time a full CV per path")
    args = ap.parse_args(argv)
    print(f"numba available: {_accel.HAS_NUMBA}")
    print(f"{'kernel':<24}{'numba (us)':>12}{'numpy (us)':>12}{'ratio':>8}")
    for name, t_loop, t_np in bench_kernels():
        print(f"{name:<24}{t_loop * 1e6:>12.1f}{t_np * 1e6:>12.1f}{t_np / t_loop:>8.2f}")
    if args.pipeline:
        for path, (secs, acc) in bench_pipeline().items():
            print(f"cross_validate [{path}]: {secs:.2f} s (accuracy {acc:.4f})")


if __name__ == "__main__":
    main()
