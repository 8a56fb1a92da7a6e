"""Kernel-based instance inference: locate candidate centroids on a heatmap,
merge candidates by affinity, and reconstruct soft masks from instance
kernels.

Candidate features are treated as kernel parameter vectors: the leading
entries are the linear weights over per-point features concatenated with
centroid-relative coordinates, the trailing entry is the bias. Aggregation
averages member features, so merging identical parameter vectors is exact.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._accel import suppress_peaks
from .scene import SoftMaskSet

AFFINITY_TOL = 1e-6


@dataclass(frozen=True)
class LocalizeConfig:
    suppression_radius: float = 0.3
    heat_floor: float = 0.1
    max_candidates: int = 128

    def __post_init__(self):
        if self.suppression_radius <= 0:
            raise ValueError("suppression_radius must be positive")
        if not 0 <= self.heat_floor < 1:
            raise ValueError("heat_floor must be in [0, 1)")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")


@dataclass(frozen=True)
class CandidateSet:
    """Candidate centroid points: indices into the scene, their coordinates,
    heat values (non-increasing) and optional gathered feature rows."""

    point_index: np.ndarray
    coords: np.ndarray
    heat: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        idx = np.asarray(self.point_index, dtype=np.int64)
        if np.unique(idx).size != idx.size:
            raise ValueError("candidate point indices must be distinct")
        object.__setattr__(self, "point_index", idx)

    @property
    def count(self) -> int:
        return self.point_index.shape[0]


@dataclass(frozen=True)
class KernelSet:
    """One linear kernel per instance: weights (I, D+3), bias (I,), plus the
    coordinates and heat of the selected centroid candidate."""

    weights: np.ndarray
    bias: np.ndarray
    centroid_coords: np.ndarray
    centroid_heat: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[1] < 3:
            raise ValueError("kernel weights must be (I, D+3) with D >= 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", np.asarray(self.bias, dtype=np.float64))
        object.__setattr__(
            self, "centroid_coords", np.asarray(self.centroid_coords, dtype=np.float64)
        )
        object.__setattr__(
            self, "centroid_heat", np.asarray(self.centroid_heat, dtype=np.float64)
        )

    @property
    def count(self) -> int:
        return self.weights.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights.shape[1] - 3


def validate_heatmap(heat, n_points=None) -> np.ndarray:
    heat = np.asarray(heat, dtype=np.float64).ravel()
    if n_points is not None and heat.shape[0] != n_points:
        raise ValueError("heatmap length does not match the point count")
    if heat.size and (heat.min() < 0.0 or heat.max() > 1.0):
        raise ValueError("heatmap values must lie in [0, 1]")
    return heat


def validate_affinity(affinity, q=None) -> np.ndarray:
    a = np.asarray(affinity, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("affinity matrix must be square")
    if q is not None and a.shape[0] != q:
        raise ValueError(
            f"affinity matrix is {a.shape[0]}x{a.shape[0]}, expected {q}x{q}"
        )
    if a.size:
        if np.abs(a - a.T).max() > AFFINITY_TOL:
            raise ValueError("affinity matrix is asymmetric beyond tolerance")
        if np.abs(np.diag(a) - 1.0).max() > AFFINITY_TOL:
            raise ValueError("affinity matrix diagonal must be 1")
    return a


def find_candidates(heat, coords, cfg: LocalizeConfig = LocalizeConfig(), features=None):
    """Pick local heat maxima by iterative radius suppression.

    Repeatedly emits the unsuppressed point with the globally highest heat
    at or above ``heat_floor`` (ties to the smallest index) and suppresses
    everything within ``suppression_radius``. Stops at ``max_candidates`` or
    when nothing remains; emitted heats are non-increasing and any two
    candidates are strictly farther apart than the radius.
    """
    coords = np.asarray(coords, dtype=np.float64)
    heat = validate_heatmap(heat, coords.shape[0])
    idx = suppress_peaks(
        coords, heat, cfg.suppression_radius, cfg.heat_floor, cfg.max_candidates
    )
    gathered = None
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        if features.shape[0] != coords.shape[0]:
            raise ValueError("feature array does not match the point count")
        gathered = features[idx]
    return CandidateSet(
        point_index=idx, coords=coords[idx], heat=heat[idx], features=gathered
    )


def _group_affinity(affinity, a, b):
    return float(np.mean(affinity[np.ix_(a, b)]))


def aggregate_candidates(cands: CandidateSet, affinity, merge_threshold: float = 0.5):
    """Greedy mean-linkage agglomeration of candidates into instance kernels.

    Repeatedly merges the group pair with the highest inter-group affinity
    (mean of cross-pair entries of the fixed input matrix) while it exceeds
    ``merge_threshold``; ties go to the lexicographically smallest pair.
    Each group's feature is the mean of member features, split into kernel
    weights and trailing bias; its centroid is the member with the highest
    heat. Returns the kernels and the candidate-to-group map.
    """
    q = cands.count
    affinity = validate_affinity(affinity, q)
    if cands.features is None:
        raise ValueError("aggregation requires candidate features to build kernels")
    feats = np.asarray(cands.features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] < 4:
        raise ValueError("candidate features must be (Q, D+4) with D >= 0")

    groups = [[i] for i in range(q)]
    while len(groups) > 1:
        best_val = merge_threshold
        best_pair = None
        for i in range(len(groups)):
            for j in range(i + 1, len(groups)):
                val = _group_affinity(affinity, groups[i], groups[j])
                if val > best_val:
                    best_val = val
                    best_pair = (i, j)
        if best_pair is None:
            break
        i, j = best_pair
        groups[i] = groups[i] + groups[j]
        del groups[j]

    group_map = np.empty(q, dtype=np.int64)
    weights = np.empty((len(groups), feats.shape[1] - 1))
    bias = np.empty(len(groups))
    cen_coords = np.empty((len(groups), 3))
    cen_heat = np.empty(len(groups))
    for g, members in enumerate(groups):
        members = sorted(members)
        group_map[members] = g
        mean_feat = feats[members].mean(axis=0)
        weights[g] = mean_feat[:-1]
        bias[g] = mean_feat[-1]
        hottest = members[int(np.argmax(cands.heat[members]))]
        cen_coords[g] = cands.coords[hottest]
        cen_heat[g] = cands.heat[hottest]

    kernels = KernelSet(
        weights=weights, bias=bias, centroid_coords=cen_coords, centroid_heat=cen_heat
    )
    return kernels, group_map


def reconstruct_masks(kernels: KernelSet, features, coords) -> SoftMaskSet:
    """Scan the scene with each kernel to rebuild soft instance masks.

    Score of point n under kernel i is
    sigmoid(w_i . concat(f_n, x_n - c_i) + b_i); invariant to a rigid
    translation applied jointly to coords and centroid coords.
    """
    features = np.asarray(features, dtype=np.float64)
    coords = np.asarray(coords, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != coords.shape[0]:
        raise ValueError("features must be (N, D) aligned with coords")
    d = features.shape[1]
    if kernels.weights.shape[1] != d + 3:
        raise ValueError(
            f"kernel width {kernels.weights.shape[1]} does not match feature "
            f"dim {d} + 3"
        )
    w_feat = kernels.weights[:, :d]
    w_coord = kernels.weights[:, d:]
    logits = (
        features @ w_feat.T
        + coords @ w_coord.T
        - (kernels.centroid_coords * w_coord).sum(axis=1)[None, :]
        + kernels.bias[None, :]
    )
    with np.errstate(over="ignore"):
        scores = 1.0 / (1.0 + np.exp(-logits))
    return SoftMaskSet(scores)
