"""Compare the numba kernels with their numpy twins.

    python benchmarks/bench_kernels.py [--repeat 20] [--end-to-end]

Each kernel is called once to trigger compilation, then timed with
``timeit``; the table shows the best per-call time for both backends and the
speedup.  ``--end-to-end`` also times one short training run per backend in
a subprocess, since the backend is fixed at import time by
``SET2SEQ_DISABLE_NUMBA``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from set2seq import _kernels as K


def workloads(rng):
    x = rng.normal(size=(64, 64))
    y = K.softmax_rows_np(x)
    gain, bias = rng.normal(size=64), rng.normal(size=64)
    _, xhat, rstd = K.layer_norm_np(x, gain, bias, 1e-5)
    pts = rng.normal(size=(256, 32))
    seg = np.sort(rng.integers(0, 40, size=256))
    t, p = rng.normal(size=400), rng.normal(size=400)
    a, b = rng.normal(size=(10, 64)), rng.normal(size=(10, 64))
    return {
        "softmax_rows": (x,),
        "softmax_rows_backward": (y, x),
        "layer_norm": (x, gain, bias, 1e-5),
        "layer_norm_backward": (x, xhat, rstd, gain),
        "segment_sum": (pts, seg, 40),
        "segment_max": (pts, seg, 40),
        "kendall_counts": (t, p),
        "cosine_distance_matrix": (a, b),
    }


def best_time(fn, args, repeat, number):
    fn(*args)  # compile / warm caches
    return min(timeit.repeat(lambda: fn(*args), repeat=repeat, number=number)) / number


END_TO_END = """
import time
from set2seq.data import SynthConfig, synthesize
from set2seq.train import RunConfig, train
from set2seq import _kernels
m = synthesize(SynthConfig(n_entities=60, seed=0))
cfg = RunConfig.from_dict({"data": {"min_instances": 1}, "early_stopping": {"max_epochs": 2}})
train(cfg, m, write=False)  # warm-up (includes numba compilation)
t = time.perf_counter()
train(cfg, m, write=False)
print(_kernels.backend(), time.perf_counter() - t)
"""


def end_to_end():
    for disable in ("0", "1"):
        env = dict(os.environ, SET2SEQ_DISABLE_NUMBA=disable)
        out = subprocess.run([sys.executable, "-c", END_TO_END], env=env, capture_output=True, text=True, check=True)
        name, sec = out.stdout.split()
        print(f"end-to-end 2 epochs x 60 entities  {name:>6}: {float(sec):8.2f} s")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--number", type=int, default=50)
    ap.add_argument("--end-to-end", action="store_true")
    args = ap.parse_args(argv)
    if K.NUMBA_KERNELS is None:
        sys.exit("numba is not installed; nothing to compare")
    work = workloads(np.random.default_rng(0))
    print(f"{'kernel':<24}{'numpy (us)':>12}{'numba (us)':>12}{'speedup':>10}")
    for name, fargs in work.items():
        t_np = best_time(K.NUMPY_KERNELS[name], fargs, args.repeat, args.number)
        t_nb = best_time(K.NUMBA_KERNELS[name], fargs, args.repeat, args.number)
        print(f"{name:<24}{t_np * 1e6:>12.1f}{t_nb * 1e6:>12.1f}{t_np / t_nb:>9.1f}x")
    if args.end_to_end:
        end_to_end()


if __name__ == "__main__":
    main()
