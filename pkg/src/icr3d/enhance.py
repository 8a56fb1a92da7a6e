"""Instance pseudo-label generation from noisy soft masks.

The pipeline turns per-point soft instance scores into hard per-point
instance IDs: per-instance dynamic thresholding rescales weakly expressed
instances, maximum projection assigns IDs, purity weighting suppresses
duplicated/noisy instances, a foreground-only reprojection consolidates the
assignment, superpoints broadcast the local mode ID, and small or
low-confidence instances are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._accel import column_otsu, group_modes
from .scene import HardLabeling, Scene, SoftMaskSet, renumber_instances


@dataclass(frozen=True)
class EnhanceConfig:
    """Knobs of the pseudo-label pipeline.

    ``threshold_cap`` bounds the dynamic thresholds so strong instances are
    never rescaled. ``confidence_after_refine`` picks whether instance
    confidence for filtering is measured after superpoint refinement
    (default) or right after reprojection.
    """

    threshold_cap: float = 0.5
    otsu_bins: int = 256
    fg_threshold: float = 0.5
    min_points: int = 100
    min_confidence: float = 0.5
    confidence_after_refine: bool = True

    def __post_init__(self):
        if not 0 < self.threshold_cap <= 1:
            raise ValueError("threshold_cap must be in (0, 1]")
        if not 0 < self.fg_threshold < 1:
            raise ValueError("fg_threshold must be in (0, 1)")
        if self.otsu_bins < 2:
            raise ValueError("otsu_bins must be >= 2")
        if self.min_points < 1:
            raise ValueError("min_points must be >= 1")
        if not 0 <= self.min_confidence <= 1:
            raise ValueError("min_confidence must be in [0, 1]")


@dataclass
class EnhanceReport:
    """Per-instance diagnostics of one pipeline run.

    ``thresholds`` holds every dynamic threshold, ``purity`` every purity
    score; ``stage_counts`` counts points whose label changed at each stage.
    """

    thresholds: np.ndarray = field(default_factory=lambda: np.empty(0))
    purity: np.ndarray = field(default_factory=lambda: np.empty(0))
    stage_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "thresholds": [float(t) for t in np.asarray(self.thresholds)],
            "purity": [float(p) for p in np.asarray(self.purity)],
            "stage_counts": {k: int(v) for k, v in self.stage_counts.items()},
        }


def otsu_threshold(values, bins: int = 256) -> float:
    """Threshold in (0, 1) maximizing between-class variance over a
    ``bins``-bin histogram of [0, 1].

    Exact per-bin value sums are used, so boundaries producing the same
    split score identically; the returned threshold is the midpoint of the
    maximizing run of boundaries. A degenerate input (zero variance
    everywhere, e.g. all values equal) yields the smallest boundary 1/bins.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        raise ValueError("otsu_threshold requires at least one value")
    if values.min() < 0.0 or values.max() > 1.0:
        raise ValueError("otsu_threshold expects values in [0, 1]")
    return float(column_otsu(values[:, None], bins)[0])


def intra_enhance(masks: SoftMaskSet, cfg: EnhanceConfig = EnhanceConfig()):
    """Rescale weakly expressed instance columns by their dynamic threshold.

    For each column with Otsu threshold T below ``threshold_cap``, scores are
    divided by 2T and clamped to 1. Column ranking of points is preserved.
    Returns the rescaled masks and a report with every threshold.
    """
    if masks.instance_count < 1:
        raise ValueError("intra_enhance requires at least one instance column")
    thresholds = column_otsu(masks.scores, cfg.otsu_bins)
    factors = np.where(thresholds < cfg.threshold_cap, 0.5 / thresholds, 1.0)
    scaled = np.minimum(masks.scores * factors[None, :], 1.0)
    report = EnhanceReport(thresholds=thresholds)
    return SoftMaskSet(scaled.astype(masks.scores.dtype)), report


def project(
    masks: SoftMaskSet,
    fg_threshold: float = 0.5,
    foreground_only: bool = False,
    prior: HardLabeling | None = None,
) -> HardLabeling:
    """Channel-wise maximum projection of soft masks to hard instance IDs.

    A point gets the argmax instance (ties to the smallest index) when its
    maximum score exceeds ``fg_threshold``, else -1. With
    ``foreground_only``, only points that are foreground in ``prior`` are
    reprojected; background points keep their prior label.
    """
    if foreground_only and prior is None:
        raise ValueError("foreground_only projection requires a prior labeling")
    n, n_inst = masks.scores.shape
    if n_inst == 0:
        ids = np.full(n, -1, dtype=np.int32)
    else:
        best = np.argmax(masks.scores, axis=1).astype(np.int32) + 1
        top = masks.scores[np.arange(n), best - 1]
        ids = np.where(top > fg_threshold, best, np.int32(-1))
    if foreground_only:
        if prior.n_points != n:
            raise ValueError("prior labeling does not match the mask point count")
        fg = prior.inst_id >= 1
        ids = np.where(fg, ids, prior.inst_id)
    return HardLabeling(inst_id=ids, instance_count=n_inst)


def purity_scores(masks: SoftMaskSet, hard: HardLabeling) -> np.ndarray:
    """Purity of every instance column against the hard projection.

    purity_i = sum(R_i over points labeled i) / sum(R_i over points with
    R_i > 0.5); an instance expressing nothing above 0.5 gets 0.
    """
    if hard.n_points != masks.n_points:
        raise ValueError("mask and labeling point counts differ")
    scores = masks.scores.astype(np.float64)
    n_inst = masks.instance_count
    owned = hard.inst_id[:, None] == np.arange(1, n_inst + 1, dtype=np.int32)[None, :]
    num = (scores * owned).sum(axis=0)
    den = (scores * (scores > 0.5)).sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        purity = np.where(den > 0, num / den, 0.0)
    return purity


def purity_score(masks: SoftMaskSet, hard: HardLabeling, i: int) -> float:
    """Purity of instance ``i`` (1-based)."""
    if not 1 <= i <= masks.instance_count:
        raise ValueError(f"instance index {i} out of range 1..{masks.instance_count}")
    return float(purity_scores(masks, hard)[i - 1])


def inter_enhance(masks: SoftMaskSet, hard: HardLabeling):
    """Suppress noisy instances by weighting each column with its purity.

    Scores never increase. Returns the weighted masks and a report with
    every purity score.
    """
    purity = purity_scores(masks, hard)
    weighted = masks.scores * purity[None, :]
    report = EnhanceReport(purity=purity)
    return SoftMaskSet(weighted.astype(masks.scores.dtype)), report


def superpoint_refine(hard: HardLabeling, superpoint_id) -> HardLabeling:
    """Broadcast each superpoint's mode instance ID to all its points.

    Count ties prefer the most frequent non-background ID, then the smallest
    ID; a superpoint whose mode is background stays background. Idempotent.
    """
    if superpoint_id is None:
        raise ValueError("superpoint coverage gap: no superpoint IDs")
    sp = np.asarray(superpoint_id)
    if sp.shape != hard.inst_id.shape:
        raise ValueError("superpoint coverage gap: ID array does not cover all points")
    if sp.min() < 0:
        raise ValueError("superpoint coverage gap: negative superpoint ID")
    modes = group_modes(sp, hard.inst_id, prefer_foreground=True)
    refined = modes[sp].astype(np.int32)
    return HardLabeling(
        inst_id=refined,
        inst_category=hard.inst_category,
        inst_confidence=hard.inst_confidence,
        instance_count=hard.instance_count,
    )


def instance_confidence(masks: SoftMaskSet, hard: HardLabeling) -> np.ndarray:
    """Average soft score of each instance's foreground points."""
    if hard.n_points != masks.n_points:
        raise ValueError("mask and labeling point counts differ")
    n_inst = hard.instance_count
    conf = np.zeros(n_inst, dtype=np.float64)
    ids = hard.inst_id
    for i in range(1, n_inst + 1):
        member = ids == i
        if member.any() and i <= masks.instance_count:
            conf[i - 1] = float(masks.scores[member, i - 1].mean())
    return conf


def filter_instances(
    hard: HardLabeling,
    min_points: int = 100,
    min_confidence: float | None = None,
) -> HardLabeling:
    """Drop instances occupying fewer than ``min_points`` points or with
    confidence strictly below ``min_confidence`` (both comparisons strict,
    so exactly 100 points or exactly 0.5 confidence survive).

    Survivors are renumbered contiguously from 1, preserving order.
    """
    counts = hard.point_counts()
    keep = counts >= min_points
    if min_confidence is not None:
        if hard.inst_confidence is None:
            raise ValueError("confidence filtering requires inst_confidence")
        keep &= hard.inst_confidence >= min_confidence
    ids = hard.inst_id.copy()
    dropped = np.flatnonzero(~keep) + 1
    ids[np.isin(ids, dropped)] = -1
    new_ids, kept = renumber_instances(ids)
    return HardLabeling(
        inst_id=new_ids,
        inst_category=None if hard.inst_category is None else hard.inst_category[kept - 1],
        inst_confidence=None
        if hard.inst_confidence is None
        else hard.inst_confidence[kept - 1],
        instance_count=kept.size,
    )


def vote_categories(inst_id, sem_labels, instance_count: int) -> np.ndarray:
    """Majority semantic label per instance (ties to the smallest category).

    Instances without points default to category 1.
    """
    inst_id = np.asarray(inst_id)
    sem_labels = np.asarray(sem_labels)
    out = np.ones(instance_count, dtype=np.int32)
    fg = inst_id >= 1
    if fg.any():
        modes = group_modes(inst_id[fg] - 1, sem_labels[fg], prefer_foreground=False)
        out[: modes.size] = np.maximum(modes, 1).astype(np.int32)
    return out


def generate_pseudo_labels(
    masks: SoftMaskSet,
    scene: Scene,
    cfg: EnhanceConfig = EnhanceConfig(),
    refine_superpoints: bool = True,
):
    """Full pseudo-label pipeline for one scene.

    Stage order: intra-instance rescaling, projection, purity weighting,
    foreground-only reprojection, superpoint refinement (skipped when the
    scene has no superpoints or ``refine_superpoints`` is False), then
    size/confidence filtering. Returns the labeling and a merged report.
    """
    if masks.n_points != scene.n_points:
        raise ValueError("mask and scene point counts differ")
    if masks.instance_count == 0:
        labeling = HardLabeling(
            inst_id=np.full(scene.n_points, -1, dtype=np.int32),
            inst_confidence=np.empty(0),
            instance_count=0,
        )
        return labeling, EnhanceReport()

    enhanced, intra_report = intra_enhance(masks, cfg)
    first = project(enhanced, cfg.fg_threshold)
    weighted, inter_report = inter_enhance(enhanced, first)
    second = project(weighted, cfg.fg_threshold, foreground_only=True, prior=first)

    use_sp = refine_superpoints and scene.has_superpoints
    refined = superpoint_refine(second, scene.superpoint_id) if use_sp else second

    conf_basis = refined if cfg.confidence_after_refine else second
    confidence = instance_confidence(weighted, conf_basis)
    labeled = HardLabeling(
        inst_id=refined.inst_id,
        inst_confidence=confidence,
        instance_count=refined.instance_count,
    )
    final = filter_instances(labeled, cfg.min_points, cfg.min_confidence)

    report = EnhanceReport(
        thresholds=intra_report.thresholds,
        purity=inter_report.purity,
        stage_counts={
            "initial_foreground": int((first.inst_id >= 1).sum()),
            "reprojected": int((second.inst_id != first.inst_id).sum()),
            "superpoint": int((refined.inst_id != second.inst_id).sum()),
            "filtered": int((final.inst_id != refined.inst_id).sum()),
            "surviving_instances": final.instance_count,
        },
    )
    return final, report
