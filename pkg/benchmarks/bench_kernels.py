"""Timing comparison between the compiled and pure-Python kernel backends.

Runs each kernel on identically seeded workloads under both backends and
prints per-call timings plus the speedup.  The pure backend is selected per
subprocess via ROBUSTFAIR_PURE_PYTHON, so this script re-executes itself
once for the fallback measurements.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _workloads():
    rng = np.random.default_rng(42)
    p = 8
    k = 4
    m_stack = rng.standard_normal((k, p, p))
    m_stack = m_stack @ m_stack.transpose(0, 2, 1) / p + np.eye(p)
    e_stack = rng.standard_normal((k, p))
    k_stack = rng.standard_normal(k)
    starts = rng.standard_normal((16, p))

    s = 4096
    r1 = np.abs(rng.standard_normal(s)) * 3.0
    r2 = np.abs(rng.standard_normal(s)) * 3.0
    bn = np.abs(rng.standard_normal(s)) + 0.1

    n1, n2 = 120, 90
    x1 = rng.standard_normal((n1, p))
    y1 = rng.standard_normal(n1)
    x2 = rng.standard_normal((n2, p))
    y2 = rng.standard_normal(n2)
    beta = rng.standard_normal(p)
    return {
        "envelope_min_descent": (m_stack, e_stack, k_stack, starts, 2000, 1.0),
        "profile_best_t_batch": (r1, r2, bn, 2.0, 0.012, -0.003, 0.002, 0.013),
        "gda_saddle": (
            x1, y1, x2, y2, 0.012, -0.003, 1, 2.0,
            beta, 1.0, 5.0, 25.0, 1e-4, 4000, 1e-9,
        ),
    }


def _run(repeats: int) -> dict:
    from robustfair import _kernels

    results = {"backend": _kernels.BACKEND_NAME}
    for name, args in _workloads().items():
        fn = getattr(_kernels, name)
        fn(*args)  # warm up
        start = time.perf_counter()
        for _ in range(repeats):
            fn(*args)
        results[name] = (time.perf_counter() - start) / repeats
    return results


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--emit-json", action="store_true",
                        help="print raw timings as JSON (used by the re-exec)")
    args = parser.parse_args()

    results = _run(args.repeats)
    if args.emit_json:
        print(json.dumps(results))
        return 0

    if results["backend"] != "compiled":
        print("compiled backend unavailable; timing the pure backend only")
        for name, seconds in results.items():
            if name != "backend":
                print(f"  {name:24s} {seconds * 1e3:10.3f} ms/call")
        return 0

    env = dict(os.environ, ROBUSTFAIR_PURE_PYTHON="1")
    out = subprocess.run(
        [sys.executable, __file__, "--repeats", str(args.repeats), "--emit-json"],
        env=env, capture_output=True, text=True, check=True,
    )
    pure = json.loads(out.stdout)

    print(f"{'kernel':24s} {'compiled':>12s} {'pure':>12s} {'speedup':>9s}")
    for name in ("envelope_min_descent", "profile_best_t_batch", "gda_saddle"):
        fast = results[name]
        slow = pure[name]
        print(
            f"{name:24s} {fast * 1e3:10.3f} ms {slow * 1e3:10.3f} ms "
            f"{slow / fast:8.1f}x"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
