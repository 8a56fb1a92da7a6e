#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs candidate peak suppression and batched column Otsu on a 100k-point
synthetic workload and reports wall-clock times for both paths, verifying
they produce identical results. The dispatched path in the library follows
ICR_NO_NUMBA, this script always times both implementations directly.
"""

import time

import numpy as np

from icr3d import _accel


def _time(fn, *args, repeats=5):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    rng = np.random.Generator(np.random.Philox(key=[42, 0]))
    n, n_cols = 100_000, 50
    coords = rng.uniform(0, 20, size=(n, 3))
    heat = rng.random(n)
    scores = np.clip(rng.beta(2, 5, size=(n, n_cols)), 0, 1)

    print(f"numba available: {_accel.HAVE_NUMBA}, dispatch uses numba: {_accel.USE_NUMBA}")
    print(f"workload: {n} points, {n_cols} mask columns\n")

    rows = []
    if _accel.HAVE_NUMBA:
        _accel._suppress_peaks_jit(coords[:64], heat[:64], 0.3, 0.1, 8)  # compile
        t_jit, r_jit = _time(_accel._suppress_peaks_jit, coords, heat, 0.3, 0.1, 128)
    else:
        t_jit, r_jit = float("nan"), None
    t_np, r_np = _time(_accel.suppress_peaks_numpy, coords, heat, 0.3, 0.1, 128)
    if r_jit is not None:
        assert np.array_equal(r_jit, r_np), "peak suppression paths disagree"
    rows.append(("suppress_peaks", t_jit, t_np))

    if _accel.HAVE_NUMBA:
        _accel._column_otsu_jit(scores[:64, :2].copy(), 256)  # compile
        t_jit, r_jit = _time(_accel._column_otsu_jit, scores, 256)
    else:
        t_jit, r_jit = float("nan"), None
    t_np, r_np = _time(_accel.column_otsu_numpy, scores, 256)
    if r_jit is not None:
        assert np.allclose(r_jit, r_np, atol=1e-12), "otsu paths disagree"
    rows.append(("column_otsu", t_jit, t_np))

    print(f"{'kernel':<18}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}")
    for name, t_jit, t_np in rows:
        speed = t_np / t_jit if t_jit == t_jit else float("nan")
        print(f"{name:<18}{1e3 * t_jit:>12.2f}{1e3 * t_np:>12.2f}{speed:>10.2f}x")


if __name__ == "__main__":
    main()
