"""Segmentation quality metrics: instance AP at multiple IoU thresholds,
semantic mIoU, clustering agreement, and instance-level ambiguity statistics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import HardLabeling, SoftMaskSet

MAP_THRESHOLDS = tuple(round(0.50 + 0.05 * k, 2) for k in range(10))
DEFAULT_THRESHOLDS = (0.25,) + MAP_THRESHOLDS


@dataclass(frozen=True)
class InstancePrediction:
    """One predicted instance: a point mask, its category and confidence."""

    mask: np.ndarray
    category: int
    confidence: float

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 1 or not mask.any():
            raise ValueError("prediction mask must be 1-D and non-empty")
        object.__setattr__(self, "mask", mask)
        if self.category < 1:
            raise ValueError("prediction category must be >= 1")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("prediction confidence must lie in [0, 1]")


@dataclass(frozen=True)
class EvalResult:
    ap_per_threshold: dict
    mAP: float
    ap50: float
    ap25: float
    per_class: dict | None = None

    def to_dict(self) -> dict:
        return {
            "ap_per_threshold": {f"{t:.2f}": v for t, v in self.ap_per_threshold.items()},
            "mAP": self.mAP,
            "AP50": self.ap50,
            "AP25": self.ap25,
        }


def _mask_iou(a, b) -> float:
    union = np.logical_or(a, b).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a, b).sum() / union)


def _ap_from_flags(tp_flags, n_gt) -> float:
    """All-point-interpolated area under the precision-recall curve."""
    tp = np.cumsum(tp_flags)
    fp = np.cumsum(~tp_flags)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    prev = np.concatenate(([0.0], recall[:-1]))
    return float(((recall - prev) * envelope).sum())


def average_precision(preds, gt: HardLabeling, thresholds=None) -> EvalResult:
    """Class-averaged AP of instance predictions against a ground truth
    labeling at each IoU threshold.

    Predictions are greedily matched in descending confidence order to the
    unmatched same-class GT instance of maximum IoU, counting a true
    positive when that IoU reaches the threshold. Classes absent from the
    ground truth are ignored; mAP averages IoU thresholds 0.50:0.05:0.95.
    """
    if gt.inst_category is None:
        raise ValueError("ground truth labeling must carry inst_category")
    if thresholds is None:
        thresholds = DEFAULT_THRESHOLDS
    thresholds = [float(t) for t in thresholds]
    if not thresholds:
        raise ValueError("threshold list must be non-empty")
    if any(not 0 < t < 1 for t in thresholds):
        raise ValueError("thresholds must lie in (0, 1)")

    gt_masks = [gt.inst_id == i for i in range(1, gt.instance_count + 1)]
    gt_cats = gt.inst_category
    classes = sorted(int(c) for c in np.unique(gt_cats)) if gt.instance_count else []

    per_class: dict[int, dict[float, float]] = {c: {} for c in classes}
    for c in classes:
        gt_idx = [i for i in range(gt.instance_count) if gt_cats[i] == c]
        cls_preds = [p for p in preds if p.category == c]
        order = sorted(
            range(len(cls_preds)), key=lambda k: -cls_preds[k].confidence
        )
        iou = np.zeros((len(cls_preds), len(gt_idx)))
        for r, k in enumerate(order):
            for g, gi in enumerate(gt_idx):
                iou[r, g] = _mask_iou(cls_preds[k].mask, gt_masks[gi])
        for t in thresholds:
            if not cls_preds:
                per_class[c][t] = 0.0
                continue
            taken = np.zeros(len(gt_idx), dtype=bool)
            tp_flags = np.zeros(len(cls_preds), dtype=bool)
            for r in range(len(cls_preds)):
                open_iou = np.where(taken, -1.0, iou[r])
                if open_iou.size == 0:
                    continue
                g = int(np.argmax(open_iou))
                if open_iou[g] >= t:
                    taken[g] = True
                    tp_flags[r] = True
            per_class[c][t] = _ap_from_flags(tp_flags, len(gt_idx))

    ap_per_threshold = {}
    for t in thresholds:
        ap_per_threshold[t] = (
            float(np.mean([per_class[c][t] for c in classes])) if classes else 0.0
        )
    map_values = [ap_per_threshold[t] for t in MAP_THRESHOLDS if t in ap_per_threshold]
    return EvalResult(
        ap_per_threshold=ap_per_threshold,
        mAP=float(np.mean(map_values)) if map_values else 0.0,
        ap50=ap_per_threshold.get(0.5, float("nan")),
        ap25=ap_per_threshold.get(0.25, float("nan")),
        per_class=per_class,
    )


def mean_iou(pred, gt, category_count: int) -> float:
    """Mean per-class IoU over points with a ground-truth label.

    Classes absent from the ground truth are ignored; labels are -1 or
    1..category_count.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError("prediction and ground truth lengths differ")
    valid = gt != -1
    if not valid.any():
        raise ValueError("mean_iou requires at least one labeled point")
    p = pred[valid]
    g = gt[valid]
    ious = []
    for c in np.unique(g):
        tp = np.sum((p == c) & (g == c))
        fp = np.sum((p == c) & (g != c))
        fn = np.sum((p != c) & (g == c))
        ious.append(tp / (tp + fp + fn))
    return float(np.mean(ious))


def ambiguity_stats(sem_pred, pred_masks, sem_gt, inst_gt, threshold: float = 0.25):
    """Instance-level semantic accuracy and best-match mask IoU statistics.

    Per GT instance, the mean point-wise semantic accuracy within the
    instance and the best IoU over all prediction masks (with replacement)
    are computed; an instance is semantically / instance ambiguous when the
    respective value falls below ``threshold``. Means and rates are reported
    in percent.
    """
    sem_pred = np.asarray(sem_pred)
    sem_gt = np.asarray(sem_gt)
    inst_gt = np.asarray(inst_gt)
    n_inst = int(max(inst_gt.max(), 0))
    if n_inst == 0:
        raise ValueError("ambiguity_stats requires ground-truth instances")
    masks = [
        p.mask if isinstance(p, InstancePrediction) else np.asarray(p, dtype=bool)
        for p in pred_masks
    ]
    acc = np.zeros(n_inst)
    iou = np.zeros(n_inst)
    for i in range(1, n_inst + 1):
        pts = inst_gt == i
        acc[i - 1] = float(np.mean(sem_pred[pts] == sem_gt[pts]))
        if masks:
            iou[i - 1] = max(_mask_iou(m, pts) for m in masks)
    sem_flags = acc < threshold
    inst_flags = iou < threshold
    return {
        "mAcc": 100.0 * float(acc.mean()),
        "sem_ambiguity_rate": 100.0 * float(sem_flags.mean()),
        "mIoU_inst": 100.0 * float(iou.mean()),
        "inst_ambiguity_rate": 100.0 * float(inst_flags.mean()),
        "per_instance_accuracy": acc.tolist(),
        "per_instance_iou": iou.tolist(),
        "sem_ambiguous": sem_flags.tolist(),
        "inst_ambiguous": inst_flags.tolist(),
    }


def rand_index(a, b) -> float:
    """Pair-counting agreement between two labelings of the same points."""
    a = np.asarray(a).ravel()
    b = np.asarray(b).ravel()
    if a.shape != b.shape or a.size < 2:
        raise ValueError("rand_index requires two equal labelings of >= 2 points")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    joint = ai.astype(np.int64) * (bi.max() + 1) + bi
    nij = np.bincount(joint)
    ni = np.bincount(ai)
    nj = np.bincount(bi)

    def _pairs(x):
        x = x.astype(np.float64)
        return float((x * (x - 1) / 2).sum())

    n_pairs = a.size * (a.size - 1) / 2
    s_ab = _pairs(nij)
    s_a = _pairs(ni)
    s_b = _pairs(nj)
    return (n_pairs + 2 * s_ab - s_a - s_b) / n_pairs


def labeling_to_predictions(
    labeling: HardLabeling,
    masks: SoftMaskSet | None = None,
    categories=None,
    confidences=None,
):
    """Turn a hard labeling into instance predictions for evaluation.

    Categories/confidences default to the labeling's own, then to the given
    arrays, then to 1 / mean soft score of the instance's points. Instances
    without points are skipped.
    """
    preds = []
    cats = categories if categories is not None else labeling.inst_category
    confs = confidences if confidences is not None else labeling.inst_confidence
    for i in range(1, labeling.instance_count + 1):
        mask = labeling.inst_id == i
        if not mask.any():
            continue
        if confs is not None:
            conf = float(confs[i - 1])
        elif masks is not None and i <= masks.instance_count:
            conf = float(masks.scores[mask, i - 1].mean())
        else:
            conf = 1.0
        cat = int(cats[i - 1]) if cats is not None else 1
        preds.append(
            InstancePrediction(mask=mask, category=cat, confidence=min(max(conf, 0.0), 1.0))
        )
    return preds
