"""Timing comparison of the numba and numpy kernel backends.

Run:  python benchmarks/bench_kernels.py [--sizes 4096,65536,1048576] [--repeats 50]

Forces each backend via MCA_KERNELS in a subprocess-free way by reloading
mca.kernels, so one invocation prints both columns.  Numba JIT compilation
happens once per kernel before timing.
"""

from __future__ import annotations

import argparse
import importlib
import os
import time

import numpy as np

KERNELS = ("gelu_forward", "sigmoid_forward", "softmax_rows_forward", "logsumexp_rows_forward")


def _load_backend(name: str):
    os.environ["MCA_KERNELS"] = name
    import mca.kernels as k

    return importlib.reload(k)


def _args_for(kernel: str, rng: np.random.Generator, size: int):
    if kernel in ("softmax_rows_forward", "logsumexp_rows_forward"):
        rows = max(size // 64, 1)
        return (rng.normal(size=(rows, 64)).astype(np.float32),)
    return (rng.normal(size=size).astype(np.float32),)


def _time(fn, args, repeats: int) -> float:
    fn(*args)  # warm-up (JIT compile on the numba path)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--sizes", default="4096,65536,1048576")
    parser.add_argument("--repeats", type=int, default=50)
    args = parser.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]
    rng = np.random.default_rng(0)

    numpy_mod = _load_backend("numpy")
    try:
        numba_mod = _load_backend("numba")
    except ImportError:
        numba_mod = None
        print("numba unavailable; showing numpy column only\n")

    header = f"{'kernel':<16s} {'size':>9s} {'numpy (us)':>12s}"
    if numba_mod:
        header += f" {'numba (us)':>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    for kernel in KERNELS:
        for size in sizes:
            call_args = _args_for(kernel, rng, size)
            t_np = _time(getattr(numpy_mod, kernel), call_args, args.repeats)
            line = f"{kernel:<16s} {size:>9d} {t_np * 1e6:>12.1f}"
            if numba_mod:
                t_nb = _time(getattr(numba_mod, kernel), call_args, args.repeats)
                line += f" {t_nb * 1e6:>12.1f} {t_np / t_nb:>7.2f}x"
            print(line)

    os.environ.pop("MCA_KERNELS", None)
    importlib.reload(numpy_mod)  # restore auto-selected backend for any caller
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
