"""Command-line surface: gen, enhance, infer, eval, ema, augment.

Every invocation writes a run manifest into its output directory and logs
JSON lines to stdout (suppressed by --quiet). Scene-level work can run in a
process pool sized by --jobs (default from the ICR_JOBS environment
variable, else 1).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .ema import ParamVector, ema_update
from .enhance import EnhanceConfig, generate_pseudo_labels, vote_categories
from .kernels import LocalizeConfig, aggregate_candidates, find_candidates, reconstruct_masks
from .metrics import (
    ambiguity_stats,
    average_precision,
    labeling_to_predictions,
    mean_iou,
    rand_index,
)
from .scene import (
    SCENE_ARRAYS,
    Scene,
    SemanticScores,
    SoftMaskSet,
    load_scene,
    read_container,
    save_scene,
    write_container,
)
from .synth import CorruptionConfig, GenConfig, augment, corrupt_predictions, generate_scene


def _log(payload: dict, quiet: bool):
    if not quiet:
        print(json.dumps(payload, sort_keys=True))


def _write_manifest(out_dir: Path, command: str, args: argparse.Namespace, started: float):
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "args": {
            k: (str(v) if isinstance(v, Path) else v)
            for k, v in sorted(vars(args).items())
            if k != "func"
        },
        "tool_version": __version__,
        "duration_s": round(time.time() - started, 6),
    }
    with open(out_dir / "run_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_seeds(spec: str):
    seeds = []
    for part in spec.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    if not seeds:
        raise ValueError("no seeds given")
    return seeds


def _scene_dirs(root: Path):
    if (root / "manifest.json").is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").is_file())
    if not dirs:
        raise ValueError(f"no ICRS containers found under '{root}'")
    return dirs


def _pool_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------

def _gen_one(task):
    cfg_dict, seed, out_dir = task
    cfg = GenConfig.from_dict({**cfg_dict, "seed": seed})
    gen = generate_scene(cfg)
    scene = gen.scene
    extras = {
        "soft_masks": gen.soft_masks.scores,
        "heatmap": gen.heatmap,
        "sem_scores": gen.sem_scores.scores,
        "features": gen.features,
        "kernel_feats": gen.kernel_features,
        "kernel_w": gen.kernels.weights,
        "kernel_b": gen.kernels.bias,
        "kernel_c": gen.kernels.centroid_coords,
        "kernel_h": gen.kernels.centroid_heat,
    }
    path = Path(out_dir) / scene.scene_id
    save_scene(scene, path, extras=extras)
    return {
        "scene_id": scene.scene_id,
        "n_points": scene.n_points,
        "instances": scene.instance_count,
        "path": str(path),
    }


def cmd_gen(args) -> int:
    started = time.time()
    cfg_dict = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg_dict = json.load(fh)
    seeds = _parse_seeds(args.seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = _pool_map(_gen_one, [(cfg_dict, s, out) for s in seeds], args.jobs)
    for rec in results:
        _log({"event": "generated", **rec}, args.quiet)
    _write_manifest(out, "gen", args, started)
    return 0


# ---------------------------------------------------------------------------
# enhance
# ---------------------------------------------------------------------------

def _enhance_one(task):
    scene_dir, out_dir, cfg_kwargs, use_superpoints = task
    manifest, arrays = read_container(scene_dir)
    if "soft_masks" not in arrays:
        raise ValueError(f"container '{scene_dir}' is missing array 'soft_masks'")
    scene = load_scene(scene_dir)
    masks = SoftMaskSet(arrays["soft_masks"])
    cfg = EnhanceConfig(**cfg_kwargs)
    labeling, report = generate_pseudo_labels(
        masks, scene, cfg, refine_superpoints=use_superpoints
    )

    extras = {k: v for k, v in arrays.items() if k not in SCENE_ARRAYS}
    extras["pseudo_inst"] = labeling.inst_id
    if labeling.instance_count:
        extras["pseudo_confidence"] = labeling.inst_confidence
        if "sem_scores" in arrays:
            sem_labels = SemanticScores(arrays["sem_scores"]).argmax_categories()
            extras["pseudo_category"] = vote_categories(
                labeling.inst_id, sem_labels, labeling.instance_count
            )
    out_path = Path(out_dir) / Path(scene_dir).name
    save_scene(scene, out_path, extras=extras)

    report_dict = {"scene_id": scene.scene_id, **report.to_dict()}
    if scene.inst_gt is not None:
        report_dict["rand_index"] = rand_index(labeling.inst_id, scene.inst_gt)
    with open(out_path / "enhance_report.json", "w", encoding="utf-8") as fh:
        json.dump(report_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return report_dict


def cmd_enhance(args) -> int:
    started = time.time()
    cfg_kwargs = {
        "threshold_cap": args.threshold_cap,
        "otsu_bins": args.otsu_bins,
        "fg_threshold": args.fg_threshold,
        "min_points": args.min_points,
        "min_confidence": args.min_confidence,
    }
    out = Path(args.out)
    dirs = _scene_dirs(Path(args.scene))
    tasks = [(d, out, cfg_kwargs, not args.no_superpoint) for d in dirs]
    results = _pool_map(_enhance_one, tasks, args.jobs)
    for rec in results:
        _log({"event": "enhanced", **rec}, args.quiet)
    _write_manifest(out, "enhance", args, started)
    return 0


# ---------------------------------------------------------------------------
# infer
# ---------------------------------------------------------------------------

def _infer_one(task):
    scene_dir, out_dir, loc_kwargs, merge_threshold, affinity_sigma = task
    _, arrays = read_container(scene_dir)
    for name in ("heatmap", "kernel_feats", "features"):
        if name not in arrays:
            raise ValueError(f"container '{scene_dir}' is missing array '{name}'")
    scene = load_scene(scene_dir)
    cfg = LocalizeConfig(**loc_kwargs)
    cands = find_candidates(
        arrays["heatmap"], scene.coords, cfg, features=arrays["kernel_feats"]
    )
    if cands.count == 0:
        raise ValueError(f"no candidates found in '{scene_dir}'")
    # Affinity from candidate feature distances; planted same-instance
    # candidates share parameters, so their affinity is exactly 1.
    d2 = np.sum(
        (cands.features[:, None, :] - cands.features[None, :, :]) ** 2, axis=2
    )
    affinity = np.exp(-d2 / (2.0 * affinity_sigma**2))
    kernels, group_map = aggregate_candidates(cands, affinity, merge_threshold)
    masks = reconstruct_masks(kernels, arrays["features"], scene.coords)

    extras = {k: v for k, v in arrays.items() if k not in SCENE_ARRAYS}
    extras.update(
        {
            "soft_masks": masks.scores,
            "kernel_w": kernels.weights,
            "kernel_b": kernels.bias,
            "kernel_c": kernels.centroid_coords,
            "kernel_h": kernels.centroid_heat,
            "candidate_index": cands.point_index,
            "candidate_group": group_map,
        }
    )
    out_path = Path(out_dir) / Path(scene_dir).name
    save_scene(scene, out_path, extras=extras)
    return {
        "scene_id": scene.scene_id,
        "candidates": int(cands.count),
        "kernels": int(kernels.count),
    }


def cmd_infer(args) -> int:
    started = time.time()
    loc_kwargs = {
        "suppression_radius": args.radius,
        "heat_floor": args.heat_floor,
        "max_candidates": args.max_candidates,
    }
    out = Path(args.out)
    dirs = _scene_dirs(Path(args.scene))
    tasks = [(d, out, loc_kwargs, args.merge_threshold, args.affinity_sigma) for d in dirs]
    results = _pool_map(_infer_one, tasks, args.jobs)
    for rec in results:
        _log({"event": "inferred", **rec}, args.quiet)
    _write_manifest(out, "infer", args, started)
    return 0


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------

def _eval_one(task):
    pred_dir, gt_dir, with_ambiguity = task
    gt_scene = load_scene(gt_dir)
    if gt_scene.inst_gt is None or gt_scene.sem_gt is None:
        raise ValueError(f"ground-truth container '{gt_dir}' lacks inst_gt/sem_gt")
    _, pred_arrays = read_container(pred_dir)
    if "pseudo_inst" not in pred_arrays:
        raise ValueError(f"prediction container '{pred_dir}' is missing 'pseudo_inst'")

    from .scene import HardLabeling

    gt_cats = vote_categories(
        gt_scene.inst_gt, gt_scene.sem_gt, gt_scene.instance_count
    )
    gt_labeling = HardLabeling(
        inst_id=gt_scene.inst_gt,
        inst_category=gt_cats,
        instance_count=gt_scene.instance_count,
    )
    pred_ids = pred_arrays["pseudo_inst"]
    count = int(max(pred_ids.max(), 0))
    pred_labeling = HardLabeling(
        inst_id=pred_ids,
        inst_category=pred_arrays.get("pseudo_category"),
        inst_confidence=np.clip(pred_arrays["pseudo_confidence"], 0.0, 1.0)
        if "pseudo_confidence" in pred_arrays
        else None,
        instance_count=count,
    )
    sem_pred = None
    if "sem_scores" in pred_arrays:
        sem_pred = SemanticScores(pred_arrays["sem_scores"]).argmax_categories()
    if pred_labeling.inst_category is None and sem_pred is not None and count:
        pred_labeling = HardLabeling(
            inst_id=pred_ids,
            inst_category=vote_categories(pred_ids, sem_pred, count),
            inst_confidence=pred_labeling.inst_confidence,
            instance_count=count,
        )

    preds = labeling_to_predictions(pred_labeling)
    result = average_precision(preds, gt_labeling)
    record = {
        "scene_id": gt_scene.scene_id,
        "mAP": result.mAP,
        "AP50": result.ap50,
        "AP25": result.ap25,
    }
    if sem_pred is not None:
        record["mIoU"] = mean_iou(sem_pred, gt_scene.sem_gt, gt_scene.category_count)
    if with_ambiguity:
        record["ambiguity"] = ambiguity_stats(
            sem_pred if sem_pred is not None else np.full(gt_scene.n_points, -1),
            [p.mask for p in preds],
            gt_scene.sem_gt,
            gt_scene.inst_gt,
        )
    return record


def cmd_eval(args) -> int:
    started = time.time()
    pred_dirs = _scene_dirs(Path(args.pred))
    gt_dirs = _scene_dirs(Path(args.gt))
    gt_by_name = {p.name: p for p in gt_dirs}
    pairs = []
    for p in pred_dirs:
        if p.name not in gt_by_name:
            raise ValueError(f"prediction scene '{p.name}' has no ground-truth match")
        pairs.append((p, gt_by_name[p.name], args.ambiguity))
    records = _pool_map(_eval_one, pairs, args.jobs)
    for rec in records:
        _log({"event": "evaluated", **rec}, args.quiet)

    agg = {"scenes": len(records)}
    for key in ("mAP", "AP50", "AP25", "mIoU"):
        vals = [r[key] for r in records if key in r]
        if vals:
            agg[key] = float(np.mean(vals))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "eval_result.json", "w", encoding="utf-8") as fh:
        json.dump({"scenes": records, "aggregate": agg}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log({"event": "aggregate", **agg}, args.quiet)

    if not args.quiet:
        header = f"{'scene':<24}{'mAP':>8}{'AP50':>8}{'AP25':>8}{'mIoU':>8}"
        print(header)
        print("-" * len(header))
        for rec in records:
            print(
                f"{rec['scene_id']:<24}{rec['mAP']:>8.3f}{rec['AP50']:>8.3f}"
                f"{rec['AP25']:>8.3f}{rec.get('mIoU', float('nan')):>8.3f}"
            )
        print(
            f"{'mean':<24}{agg.get('mAP', float('nan')):>8.3f}"
            f"{agg.get('AP50', float('nan')):>8.3f}{agg.get('AP25', float('nan')):>8.3f}"
            f"{agg.get('mIoU', float('nan')):>8.3f}"
        )
    _write_manifest(out, "eval", args, started)
    return 0


# ---------------------------------------------------------------------------
# ema
# ---------------------------------------------------------------------------

def _load_params(path) -> ParamVector:
    _, arrays = read_container(path)
    if "params" not in arrays:
        raise ValueError(f"container '{path}' is missing array 'params'")
    return ParamVector(values=arrays["params"])


def cmd_ema(args) -> int:
    started = time.time()
    teacher = _load_params(args.teacher)
    student = _load_params(args.student)
    blended = teacher
    for _ in range(args.steps):
        blended = ema_update(blended, student, args.alpha)

    k = args.steps
    closed = teacher.values * args.alpha**k + student.values * (1.0 - args.alpha**k)
    denom = np.maximum(np.abs(closed), 1e-12)
    max_rel_dev = float(np.max(np.abs(blended.values - closed) / denom)) if k else 0.0

    out = Path(args.out)
    write_container(out, {"params": blended.values}, scene_id="ema")
    check = {
        "steps": k,
        "alpha": args.alpha,
        "closed_form_max_rel_deviation": max_rel_dev,
    }
    with open(out / "ema_check.json", "w", encoding="utf-8") as fh:
        json.dump(check, fh, indent=2, sort_keys=True)
        fh.write("\n")
    _log({"event": "ema", **check}, args.quiet)
    _write_manifest(out, "ema", args, started)
    return 0


# ---------------------------------------------------------------------------
# augment
# ---------------------------------------------------------------------------

def _augment_one(task):
    scene_dir, out_dir, strength, seed, kwargs = task
    scene = load_scene(scene_dir)
    augmented = augment(scene, strength, seed, **kwargs)
    out_path = Path(out_dir) / Path(scene_dir).name
    save_scene(augmented, out_path)
    return {"scene_id": augmented.scene_id, "strength": strength}


def cmd_augment(args) -> int:
    started = time.time()
    out = Path(args.out)
    kwargs = {
        "jitter_sigma": args.jitter_sigma,
        "elastic_magnitude": args.elastic_magnitude,
        "color_jitter": args.color_jitter,
    }
    dirs = _scene_dirs(Path(args.scene))
    tasks = [(d, out, args.strength, args.seed, kwargs) for d in dirs]
    results = _pool_map(_augment_one, tasks, args.jobs)
    for rec in results:
        _log({"event": "augmented", **rec}, args.quiet)
    _write_manifest(out, "augment", args, started)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icr3d",
        description="Instance pseudo-label generation, kernel inference and "
        "evaluation for 3D point-cloud instance segmentation",
    )
    parser.add_argument("--version", action="version", version=__version__)
    default_jobs = int(os.environ.get("ICR_JOBS", "1"))
    sub = parser.add_subparsers(dest="command", required=True)

    def _common(p):
        p.add_argument("--quiet", action="store_true", help="suppress JSON logs")
        p.add_argument("--jobs", type=int, default=default_jobs, help="worker processes")

    p = sub.add_parser("gen", help="generate synthetic scenes")
    p.add_argument("--config", type=Path, default=None, help="generator config JSON")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seeds", required=True, help="e.g. '7', '0-99' or '1,5,9'")
    _common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("enhance", help="soft masks to instance pseudo labels")
    p.add_argument("--scene", type=Path, required=True, help="container or directory of containers")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--threshold-cap", type=float, default=0.5)
    p.add_argument("--otsu-bins", type=int, default=256)
    p.add_argument("--fg-threshold", type=float, default=0.5)
    p.add_argument("--min-points", type=int, default=100)
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.add_argument("--no-superpoint", action="store_true", help="skip superpoint refinement")
    _common(p)
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("infer", help="candidates -> kernels -> soft masks")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--radius", type=float, default=0.3)
    p.add_argument("--heat-floor", type=float, default=0.1)
    p.add_argument("--max-candidates", type=int, default=128)
    p.add_argument("--merge-threshold", type=float, default=0.5)
    p.add_argument("--affinity-sigma", type=float, default=1.0)
    _common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("--pred", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ambiguity", action="store_true", help="add ambiguity statistics")
    _common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ema", help="blend teacher toward student parameters")
    p.add_argument("--teacher", type=Path, required=True)
    p.add_argument("--student", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.999)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)
    _common(p)
    p.set_defaults(func=cmd_ema)

    p = sub.add_parser("augment", help="weak/strong scene augmentation")
    p.add_argument("--scene", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--strength", choices=("weak", "strong"), default="weak")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter-sigma", type=float, default=0.01)
    p.add_argument("--elastic-magnitude", type=float, default=0.02)
    p.add_argument("--color-jitter", type=float, default=0.05)
    _common(p)
    p.set_defaults(func=cmd_augment)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single exit path so every failure is reported
        print(json.dumps({"event": "error", "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
