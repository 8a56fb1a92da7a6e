"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The numba path is used when numba imports cleanly and the environment
variable ``ICR_NO_NUMBA`` is unset/0; set ``ICR_NO_NUMBA=1`` to force the
numpy fallback. Both paths are deterministic and must produce identical
results (see tests and benchmarks/bench_accel.py).
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("ICR_NO_NUMBA", "0").strip() not in (
    "1",
    "true",
    "yes",
)


# ---------------------------------------------------------------------------
# Radius-suppression peak picking
# ---------------------------------------------------------------------------

def _suppress_peaks_loop(coords, heat, radius, heat_floor, max_candidates):
    # Loop form, compiled by numba. Ties on heat go to the smallest index
    # because the scan keeps the first strict maximum.
    n = heat.shape[0]
    alive = np.ones(n, dtype=np.bool_)
    out = np.empty(max_candidates, dtype=np.int64)
    r2 = radius * radius
    count = 0
    while count < max_candidates:
        best = -1
        best_heat = heat_floor
        for i in range(n):
            if alive[i] and heat[i] >= best_heat and (best < 0 or heat[i] > best_heat):
                best = i
                best_heat = heat[i]
        if best < 0:
            break
        out[count] = best
        count += 1
        bx, by, bz = coords[best, 0], coords[best, 1], coords[best, 2]
        for i in range(n):
            if alive[i]:
                dx = coords[i, 0] - bx
                dy = coords[i, 1] - by
                dz = coords[i, 2] - bz
                if dx * dx + dy * dy + dz * dz <= r2:
                    alive[i] = False
    return out[:count]


def suppress_peaks_numpy(coords, heat, radius, heat_floor, max_candidates):
    """Iteratively emit the hottest unsuppressed point and kill its ball.

    Returns point indices in emission order (non-increasing heat, ties to the
    smallest index). Every point within ``radius`` (inclusive) of an emitted
    candidate is suppressed, including the candidate itself.
    """
    heat = np.ascontiguousarray(heat, dtype=np.float64)
    coords = np.ascontiguousarray(coords, dtype=np.float64)
    work = heat.copy()
    work[work < heat_floor] = -np.inf
    out = []
    r2 = radius * radius
    while len(out) < max_candidates:
        best = int(np.argmax(work))
        if not np.isfinite(work[best]):
            break
        out.append(best)
        d2 = np.sum((coords - coords[best]) ** 2, axis=1)
        work[d2 <= r2] = -np.inf
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# Batched Otsu thresholds over mask columns
# ---------------------------------------------------------------------------

def _column_otsu_loop(scores, bins):
    n, ncol = scores.shape
    thresholds = np.empty(ncol, dtype=np.float64)
    counts = np.zeros(bins, dtype=np.float64)
    sums = np.zeros(bins, dtype=np.float64)
    for c in range(ncol):
        counts[:] = 0.0
        sums[:] = 0.0
        for i in range(n):
            v = scores[i, c]
            b = int(v * bins)
            if b >= bins:
                b = bins - 1
            if b < 0:
                b = 0
            counts[b] += 1.0
            sums[b] += v
        total_cnt = 0.0
        total_sum = 0.0
        for b in range(bins):
            total_cnt += counts[b]
            total_sum += sums[b]
        best = 0.0
        tie_sum = 0.0
        tie_cnt = 0.0
        c0 = 0.0
        v0 = 0.0
        for k in range(1, bins):
            c0 += counts[k - 1]
            v0 += sums[k - 1]
            c1 = total_cnt - c0
            if c0 == 0.0 or c1 == 0.0:
                continue
            m0 = v0 / c0
            m1 = (total_sum - v0) / c1
            d = m1 - m0
            score = (c0 / total_cnt) * (c1 / total_cnt) * d * d
            if score > best:
                best = score
                tie_sum = float(k)
                tie_cnt = 1.0
            elif score == best and best > 0.0:
                tie_sum += float(k)
                tie_cnt += 1.0
        if best <= 0.0:
            thresholds[c] = 1.0 / bins
        else:
            thresholds[c] = (tie_sum / tie_cnt) / bins
    return thresholds


def column_otsu_numpy(scores, bins):
    """Per-column Otsu threshold over a fixed histogram of [0, 1].

    Between-class variance uses exact per-bin value sums (not bin centers).
    The returned threshold is the mean of all bin boundaries attaining the
    maximum variance; a degenerate column (zero variance everywhere)
    yields the smallest boundary 1/bins.
    """
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    n, ncol = scores.shape
    idx = np.clip((scores * bins).astype(np.int64), 0, bins - 1)
    flat = idx + np.arange(ncol, dtype=np.int64)[None, :] * bins
    counts = np.bincount(flat.ravel(), minlength=ncol * bins).reshape(ncol, bins)
    sums = np.bincount(
        flat.ravel(), weights=scores.ravel(), minlength=ncol * bins
    ).reshape(ncol, bins)

    c0 = np.cumsum(counts, axis=1)[:, :-1].astype(np.float64)  # boundaries k=1..bins-1
    v0 = np.cumsum(sums, axis=1)[:, :-1]
    total_cnt = counts.sum(axis=1, keepdims=True).astype(np.float64)
    total_sum = sums.sum(axis=1, keepdims=True)
    c1 = total_cnt - c0
    with np.errstate(divide="ignore", invalid="ignore"):
        m0 = v0 / c0
        m1 = (total_sum - v0) / c1
        score = (c0 / total_cnt) * (c1 / total_cnt) * (m1 - m0) ** 2
    score[(c0 == 0) | (c1 == 0)] = 0.0

    best = score.max(axis=1)
    ks = np.arange(1, bins, dtype=np.float64)[None, :]
    tied = score == best[:, None]
    mean_k = (ks * tied).sum(axis=1) / tied.sum(axis=1)
    thresholds = mean_k / bins
    thresholds[best <= 0.0] = 1.0 / bins
    return thresholds


if HAVE_NUMBA:
    _suppress_peaks_jit = njit(cache=True)(_suppress_peaks_loop)
    _column_otsu_jit = njit(cache=True)(_column_otsu_loop)


def suppress_peaks(coords, heat, radius, heat_floor, max_candidates):
    if USE_NUMBA:
        return _suppress_peaks_jit(
            np.ascontiguousarray(coords, dtype=np.float64),
            np.ascontiguousarray(heat, dtype=np.float64),
            float(radius),
            float(heat_floor),
            int(max_candidates),
        )
    return suppress_peaks_numpy(coords, heat, radius, heat_floor, max_candidates)


def column_otsu(scores, bins):
    if USE_NUMBA:
        return _column_otsu_jit(
            np.ascontiguousarray(scores, dtype=np.float64), int(bins)
        )
    return column_otsu_numpy(scores, bins)


def warmup():
    """Trigger JIT compilation so timed paths measure steady-state cost."""
    if not USE_NUMBA:
        return
    coords = np.zeros((4, 3))
    heat = np.array([0.9, 0.2, 0.8, 0.1])
    suppress_peaks(coords, heat, 0.5, 0.1, 4)
    column_otsu(np.array([[0.1], [0.9]]), 16)


# ---------------------------------------------------------------------------
# Grouped label modes (shared by voxel voting and superpoint refinement)
# ---------------------------------------------------------------------------

def group_modes(group_ids, labels, prefer_foreground):
    """Most frequent label per group with deterministic tie handling.

    ``group_ids`` must be non-negative; groups are 0..max. Count ties break
    toward the smallest label, except with ``prefer_foreground`` where any
    tied non-background (!= -1) label beats -1 and the smallest such label
    wins.
    """
    group_ids = np.asarray(group_ids, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if group_ids.size == 0:
        return np.empty(0, dtype=np.int64)
    n_groups = int(group_ids.max()) + 1
    order = np.lexsort((labels, group_ids))
    g = group_ids[order]
    l = labels[order]
    new_run = np.empty(g.shape[0], dtype=bool)
    new_run[0] = True
    new_run[1:] = (g[1:] != g[:-1]) | (l[1:] != l[:-1])
    run_start = np.flatnonzero(new_run)
    run_g = g[run_start]
    run_l = l[run_start]
    run_count = np.diff(np.append(run_start, g.shape[0]))

    fg = (run_l != -1).astype(np.int64) if prefer_foreground else np.zeros_like(run_l)
    # Sort runs so the winner of each group lands last: ascending count,
    # then foreground flag, then descending label (so smallest label wins).
    sel = np.lexsort((-run_l, fg, run_count, run_g))
    sg = run_g[sel]
    last = np.empty(sg.shape[0], dtype=bool)
    last[:-1] = sg[1:] != sg[:-1]
    last[-1] = True
    modes = np.full(n_groups, -1, dtype=np.int64)
    modes[sg[last]] = run_l[sel][last]
    return modes
