#!/usr/bin/env python3
"""Compare the compiled and numpy kernel backends.

Usage:
    python benchmarks/bench_kernels.py [--repeat 5] [--length 100000] [--round]

``--round`` also times one full simulated round per backend (n=100, k=51,
t=26, l=10000, 5% dropout after stage 2) in a subprocess, since the backend is
fixed at import time.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from secaggplus.kernels import available_backends


def kernel_cases(length: int):
    rng = np.random.default_rng(0)
    secret = rng.bytes(32)
    coeffs = rng.bytes(32 * 25)
    stream = rng.bytes(8 * length)
    modulus = 1 << 40
    other = rng.integers(0, modulus, length, dtype=np.uint64)

    def cases(k):
        shares = k.gf256_eval_shares(secret, coeffs, 51)
        xs = bytes(range(1, 27))
        ys = shares[: 26 * 32]
        acc = rng.integers(0, modulus, length, dtype=np.uint64)
        return {
            "shamir_split 32B n=51 t=26": lambda: k.gf256_eval_shares(secret, coeffs, 51),
            "shamir_reconstruct 32B t=26": lambda: k.gf256_interpolate_zero(xs, ys),
            f"accumulate_stream l={length}": lambda: k.accumulate_stream(acc, stream, modulus, 1),
            f"reduce_stream l={length}": lambda: k.reduce_stream(stream, modulus),
            f"add_mod_inplace l={length}": lambda: k.add_mod_inplace(acc, other, modulus),
        }

    return cases


def time_round(pure: bool) -> float:
    env = dict(os.environ)
    if pure:
        env["SECAGGPLUS_PURE_PYTHON"] = "1"
    code = (
        "import time;from secaggplus.cli import run_experiment;"
        "t=time.perf_counter();"
        "run_experiment({'share_num':51,'threshold':26},100,10000,0.05,2,1);"
        "print(time.perf_counter()-t)"
    )
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--length", type=int, default=100_000)
    ap.add_argument("--round", action="store_true", help="also time a full round per backend")
    args = ap.parse_args()

    backends = available_backends()
    if "cython" not in backends:
        print("compiled kernels not built; only the numpy fallback is available")
    make = kernel_cases(args.length)
    timings: dict[str, dict[str, float]] = {}
    for name, module in backends.items():
        for label, fn in make(module).items():
            number = 20
            best = min(timeit.repeat(fn, number=number, repeat=args.repeat)) / number
            timings.setdefault(label, {})[name] = best

    names = list(backends)
    header = f"{'kernel':<34}" + "".join(f"{n + ' (us)':>16}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for label, row in timings.items():
        line = f"{label:<34}" + "".join(f"{row[n] * 1e6:>16.1f}" for n in names)
        if len(names) == 2:
            line += f"{row['python'] / row['cython']:>9.1f}x"
        print(line)

    if args.round:
        print()
        for name in names:
            seconds = time_round(pure=(name == "python"))
            print(f"full round n=100 k=51 t=26 l=10000, {name:<7}: {seconds:.2f} s")


if __name__ == "__main__":
    main()
