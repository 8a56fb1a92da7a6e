"""Supervision targets, loss terms, and prediction-to-ground-truth matching.

All losses are non-negative, zero (up to probability clamping at 1e-7) at
perfect prediction, and invariant under a joint permutation of point order.
Offsets point from each point to its instance centroid; the heat target is
exp(-|offset|^2 / L^2) with L the instance's maximum point-to-centroid
distance, floored at 0.1 m so boundary points sit at heat e^-1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .scene import HardLabeling, Scene, SemanticScores, SoftMaskSet

EPS = 1e-7
SIZE_FLOOR = 0.1
PAD_COST = 1e6


@dataclass(frozen=True)
class SupervisionTargets:
    """Ground-truth regression/classification targets for one scene."""

    offsets_gt: np.ndarray  # (N, 3) meters, zero on background rows
    heatmap_gt: np.ndarray  # (N,) in [0, 1], zero on background rows
    centroids: np.ndarray  # (I, 3)
    size_coeff: np.ndarray  # (I,) > 0
    affinity_gt: np.ndarray  # (Q, Q) in {0, 1}
    masks_gt: np.ndarray  # (N, I) one-hot
    fg_mask: np.ndarray  # (N,) bool
    fg_count: int


@dataclass(frozen=True)
class LossBreakdown:
    """Per-scene loss components; ins = loc + rep + rec, total adds sem for
    labeled scenes."""

    sem: float
    loc: float
    rep: float
    rec: float
    ins: float
    total: float

    def __post_init__(self):
        for name in ("sem", "loc", "rep", "rec", "ins", "total"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss component '{name}' is negative")
        if abs(self.ins - (self.loc + self.rep + self.rec)) > 1e-9:
            raise ValueError("ins must equal loc + rep + rec")

    def to_dict(self) -> dict:
        return {
            "sem": self.sem,
            "loc": self.loc,
            "rep": self.rep,
            "rec": self.rec,
            "ins": self.ins,
            "total": self.total,
        }


def make_targets(
    scene: Scene, labeling: HardLabeling, candidates=None
) -> SupervisionTargets:
    """Build supervision targets from a (pseudo) labeling of a scene.

    ``candidates`` are optional point indices; when given, the affinity
    target marks candidate pairs carrying the same instance ID.
    """
    if labeling.n_points != scene.n_points:
        raise ValueError("labeling does not cover the scene")
    coords = scene.coords.astype(np.float64)
    ids = labeling.inst_id.astype(np.int64)
    n = coords.shape[0]
    n_inst = labeling.instance_count

    counts = np.bincount(ids[ids >= 1] - 1, minlength=n_inst)
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        raise ValueError(f"instance {int(empty[0]) + 1} has no points")

    fg = ids >= 1
    centroids = np.zeros((n_inst, 3))
    for axis in range(3):
        centroids[:, axis] = np.bincount(
            ids[fg] - 1, weights=coords[fg, axis], minlength=n_inst
        )
    centroids /= np.maximum(counts, 1)[:, None]

    offsets = np.zeros((n, 3))
    offsets[fg] = centroids[ids[fg] - 1] - coords[fg]
    sq_dist = np.zeros(n)
    sq_dist[fg] = np.sum(offsets[fg] ** 2, axis=1)
    size = np.zeros(n_inst)
    np.maximum.at(size, ids[fg] - 1, sq_dist[fg])
    size = np.maximum(np.sqrt(size), SIZE_FLOOR)

    heat = np.zeros(n)
    heat[fg] = np.exp(-sq_dist[fg] / size[ids[fg] - 1] ** 2)

    if candidates is not None:
        cand = np.asarray(candidates, dtype=np.int64)
        cand_ids = ids[cand]
        affinity = (cand_ids[:, None] == cand_ids[None, :]).astype(np.float64)
    else:
        affinity = np.zeros((0, 0))

    masks_gt = np.zeros((n, n_inst))
    masks_gt[np.flatnonzero(fg), ids[fg] - 1] = 1.0

    return SupervisionTargets(
        offsets_gt=offsets,
        heatmap_gt=heat,
        centroids=centroids,
        size_coeff=size,
        affinity_gt=affinity,
        masks_gt=masks_gt,
        fg_mask=fg,
        fg_count=int(fg.sum()),
    )


def _clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def semantic_loss(pred, gt_onehot, valid_mask=None) -> float:
    """Mean cross-entropy over valid points plus a multi-class dice term.

    ``pred`` is a SemanticScores (logits) or raw logit array; probabilities
    are the row softmax clamped to [eps, 1-eps]. Dice summands with a zero
    denominator (class absent from both) contribute 0.
    """
    if not isinstance(pred, SemanticScores):
        pred = SemanticScores(pred)
    gt = np.asarray(gt_onehot, dtype=np.float64)
    if gt.shape != pred.scores.shape:
        raise ValueError("prediction and ground-truth shapes differ")
    if valid_mask is None:
        valid_mask = gt.sum(axis=1) > 0
    valid = np.asarray(valid_mask, dtype=bool)
    if not valid.any():
        raise ValueError("semantic_loss requires at least one valid point")

    p = _clamp(pred.probs()[valid])
    g = gt[valid]
    ce = float(-(g * np.log(p)).sum(axis=1).mean())

    num = 2.0 * (p * g).sum(axis=0)
    den = (p**2).sum(axis=0) + (g**2).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        dice_terms = np.where(den > 0, 1.0 - num / den, 0.0)
    dice = float(dice_terms.mean())
    return ce + dice


def localization_loss(offsets, heat, targets: SupervisionTargets) -> float:
    """Foreground mean of offset distance, direction (1 - cosine) and
    absolute heat error.

    The cosine term is 0 when either vector's norm is below 1e-8.
    """
    offsets = np.asarray(offsets, dtype=np.float64)
    heat = np.asarray(heat, dtype=np.float64).ravel()
    if offsets.shape != targets.offsets_gt.shape:
        raise ValueError("offset shapes differ")
    if heat.shape != targets.heatmap_gt.shape:
        raise ValueError("heat shapes differ")
    if targets.fg_count == 0:
        raise ValueError("localization_loss requires foreground points")
    fg = targets.fg_mask
    o = offsets[fg]
    og = targets.offsets_gt[fg]
    dist = np.linalg.norm(o - og, axis=1)
    no = np.linalg.norm(o, axis=1)
    ng = np.linalg.norm(og, axis=1)
    ok = (no >= 1e-8) & (ng >= 1e-8)
    cos = np.zeros(o.shape[0])
    cos[ok] = (o[ok] * og[ok]).sum(axis=1) / (no[ok] * ng[ok])
    direction = np.where(ok, 1.0 - cos, 0.0)
    heat_err = np.abs(heat[fg] - targets.heatmap_gt[fg])
    return float((dist + direction + heat_err).mean())


def representation_loss(affinity, targets: SupervisionTargets) -> float:
    """Mean binary cross-entropy between predicted and target affinities."""
    a = np.asarray(affinity, dtype=np.float64)
    if a.shape != targets.affinity_gt.shape:
        raise ValueError(
            f"affinity shape {a.shape} does not match target "
            f"{targets.affinity_gt.shape}"
        )
    if a.size == 0:
        return 0.0
    p = _clamp(a)
    g = targets.affinity_gt
    return float(-(g * np.log(p) + (1.0 - g) * np.log(1.0 - p)).mean())


def match_instances(pred_centroids, gt_centroids) -> np.ndarray:
    """Minimum-total-distance one-to-one pairing of centroid sets.

    Rectangular cases are padded with a large finite cost and the padded
    pairs discarded, so min(I_p, I_g) pairs are returned as (pred, gt) index
    rows sorted by pred index.
    """
    pred = np.asarray(pred_centroids, dtype=np.float64).reshape(-1, 3)
    gt = np.asarray(gt_centroids, dtype=np.float64).reshape(-1, 3)
    n_p, n_g = pred.shape[0], gt.shape[0]
    if n_p == 0 or n_g == 0:
        return np.empty((0, 2), dtype=np.int64)
    cost = np.linalg.norm(pred[:, None, :] - gt[None, :, :], axis=2)
    side = max(n_p, n_g)
    padded = np.full((side, side), PAD_COST)
    padded[:n_p, :n_g] = cost
    rows, cols = linear_sum_assignment(padded)
    keep = (rows < n_p) & (cols < n_g)
    pairs = np.stack([rows[keep], cols[keep]], axis=1).astype(np.int64)
    return pairs[np.argsort(pairs[:, 0])]


def reconstruction_loss(masks, targets: SupervisionTargets, pairs) -> float:
    """BCE plus dice over matched mask pairs whose binarized IoU exceeds 0.5.

    Predictions are binarized at 0.5 for the IoU gate; the loss averages
    over the pairs passing the gate and is 0 when none do.
    """
    scores = masks.scores if isinstance(masks, SoftMaskSet) else np.asarray(masks)
    scores = scores.astype(np.float64)
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    total = 0.0
    passed = 0
    for p_idx, g_idx in pairs:
        r = scores[:, p_idx]
        g = targets.masks_gt[:, g_idx]
        rb = r > 0.5
        gb = g > 0.5
        union = np.logical_or(rb, gb).sum()
        iou = np.logical_and(rb, gb).sum() / union if union else 0.0
        if iou <= 0.5:
            continue
        rc = _clamp(r)
        bce = float(-(g * np.log(rc) + (1.0 - g) * np.log(1.0 - rc)).mean())
        den = r.sum() + g.sum()
        dice = 1.0 - 2.0 * float((r * g).sum()) / den if den > 0 else 0.0
        total += bce + dice
        passed += 1
    return total / passed if passed else 0.0


def total_loss(loc, rep, rec, sem=None, labeled=False) -> LossBreakdown:
    """Combine per-scene components; unlabeled scenes carry no semantic term."""
    for name, value in (("loc", loc), ("rep", rep), ("rec", rec)):
        if value is None:
            raise ValueError(f"missing loss component '{name}'")
    if labeled and sem is None:
        raise ValueError("missing loss component 'sem' for a labeled scene")
    sem_val = float(sem) if labeled else 0.0
    ins = float(loc) + float(rep) + float(rec)
    return LossBreakdown(
        sem=sem_val,
        loc=float(loc),
        rep=float(rep),
        rec=float(rec),
        ins=ins,
        total=sem_val + ins if labeled else ins,
    )
