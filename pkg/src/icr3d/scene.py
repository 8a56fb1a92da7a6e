"""Scene data types, the ICRS v1 on-disk container, and preprocessing.

A scene is a point cloud with optional colors, superpoints and semantic /
instance ground truth. Instance IDs are 1-based with -1 for background;
0 is never a valid instance ID. All types are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._accel import group_modes

FORMAT_VERSION = 1

_DTYPE_BY_CODE = {"f32": np.dtype("<f4"), "i32": np.dtype("<i4")}


def _frozen(values, dtype):
    out = np.array(values, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


def _check_length(name, arr, n):
    if arr.shape[0] != n:
        raise ValueError(
            f"array '{name}' has leading dimension {arr.shape[0]}, expected {n}"
        )


@dataclass(frozen=True)
class Scene:
    """A point cloud with optional attributes and ground truth.

    coords are meters, colors are RGB in [0, 1]. ``sem_gt`` uses -1 for
    unlabeled/background and 1..category_count otherwise; ``inst_gt`` uses
    -1 for background and a contiguous 1..I for instances. ``superpoint_id``
    partitions the points into non-negative groups.
    """

    coords: np.ndarray
    colors: np.ndarray | None = None
    superpoint_id: np.ndarray | None = None
    sem_gt: np.ndarray | None = None
    inst_gt: np.ndarray | None = None
    category_count: int = 1
    scene_id: str = "scene"
    labeled: bool = False

    def __post_init__(self):
        coords = _frozen(self.coords, np.float32)
        if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] == 0:
            raise ValueError(f"coords must be (N, 3) with N > 0, got {coords.shape}")
        object.__setattr__(self, "coords", coords)
        n = coords.shape[0]
        if self.category_count < 1:
            raise ValueError("category_count must be >= 1")

        if self.colors is not None:
            colors = _frozen(self.colors, np.float32)
            _check_length("colors", colors, n)
            if colors.ndim != 2 or colors.shape[1] != 3:
                raise ValueError(f"colors must be (N, 3), got {colors.shape}")
            if colors.min() < 0.0 or colors.max() > 1.0:
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", colors)

        if self.superpoint_id is not None:
            sp = _frozen(self.superpoint_id, np.int32)
            _check_length("superpoint_id", sp, n)
            if sp.min() < 0:
                raise ValueError("superpoint_id must be non-negative")
            object.__setattr__(self, "superpoint_id", sp)

        if self.sem_gt is not None:
            sem = _frozen(self.sem_gt, np.int32)
            _check_length("sem_gt", sem, n)
            bad = (sem != -1) & ((sem < 1) | (sem > self.category_count))
            if bad.any():
                raise ValueError(
                    "sem_gt values must be -1 or in 1..category_count"
                )
            object.__setattr__(self, "sem_gt", sem)

        if self.inst_gt is not None:
            inst = _frozen(self.inst_gt, np.int32)
            _check_length("inst_gt", inst, n)
            used = np.unique(inst[inst != -1])
            if used.size and (used[0] < 1 or not np.array_equal(
                used, np.arange(1, used.size + 1, dtype=used.dtype)
            )):
                raise ValueError(
                    "inst_gt instance IDs must form a contiguous set 1..I"
                )
            if self.sem_gt is not None and ((inst >= 1) & (self.sem_gt < 1)).any():
                raise ValueError(
                    "every point with inst_gt >= 1 must have sem_gt >= 1"
                )
            object.__setattr__(self, "inst_gt", inst)

    @property
    def n_points(self) -> int:
        return self.coords.shape[0]

    @property
    def instance_count(self) -> int:
        if self.inst_gt is None:
            return 0
        return int(max(self.inst_gt.max(), 0))

    @property
    def has_superpoints(self) -> bool:
        return self.superpoint_id is not None


@dataclass(frozen=True)
class SoftMaskSet:
    """Per-point, per-instance membership scores in [0, 1], shape (N, I)."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, copy=True)
        if scores.dtype not in (np.float32, np.float64):
            scores = scores.astype(np.float64)
        if scores.ndim != 2:
            raise ValueError(f"scores must be 2-D (N, I), got {scores.shape}")
        if scores.size and (scores.min() < 0.0 or scores.max() > 1.0):
            raise ValueError("soft mask scores must lie in [0, 1]")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def n_points(self) -> int:
        return self.scores.shape[0]

    @property
    def instance_count(self) -> int:
        return self.scores.shape[1]


@dataclass(frozen=True)
class HardLabeling:
    """Per-point instance IDs with -1 background, plus optional per-instance
    category and confidence aligned with IDs 1..instance_count."""

    inst_id: np.ndarray
    inst_category: np.ndarray | None = None
    inst_confidence: np.ndarray | None = None
    instance_count: int | None = None

    def __post_init__(self):
        ids = _frozen(self.inst_id, np.int32)
        if ids.ndim != 1 or ids.shape[0] == 0:
            raise ValueError("inst_id must be a non-empty 1-D array")
        if ((ids < -1) | (ids == 0)).any():
            raise ValueError("instance IDs must be -1 or >= 1 (0 is invalid)")
        object.__setattr__(self, "inst_id", ids)
        count = self.instance_count
        if count is None:
            count = int(max(ids.max(), 0))
        elif ids.max() > count:
            raise ValueError("inst_id exceeds declared instance_count")
        object.__setattr__(self, "instance_count", int(count))

        if self.inst_category is not None:
            cat = _frozen(self.inst_category, np.int32)
            if cat.shape != (count,):
                raise ValueError("inst_category must have one entry per instance")
            if cat.size and cat.min() < 1:
                raise ValueError("instance categories must be >= 1")
            object.__setattr__(self, "inst_category", cat)
        if self.inst_confidence is not None:
            conf = _frozen(self.inst_confidence, np.float64)
            if conf.shape != (count,):
                raise ValueError("inst_confidence must have one entry per instance")
            if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
                raise ValueError("instance confidences must lie in [0, 1]")
            object.__setattr__(self, "inst_confidence", conf)

    @property
    def n_points(self) -> int:
        return self.inst_id.shape[0]

    def point_counts(self) -> np.ndarray:
        """Points per instance ID 1..instance_count."""
        fg = self.inst_id[self.inst_id >= 1]
        return np.bincount(fg - 1, minlength=self.instance_count)


@dataclass(frozen=True)
class SemanticScores:
    """Per-point category scores (logits), shape (N, C)."""

    scores: np.ndarray

    def __post_init__(self):
        scores = np.array(self.scores, copy=True)
        if scores.dtype not in (np.float32, np.float64):
            scores = scores.astype(np.float64)
        if scores.ndim != 2 or scores.shape[1] < 1:
            raise ValueError(f"scores must be (N, C), got {scores.shape}")
        if not np.isfinite(scores).all():
            raise ValueError("semantic scores must be finite")
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def category_count(self) -> int:
        return self.scores.shape[1]

    def probs(self) -> np.ndarray:
        """Row-wise softmax of the scores."""
        z = self.scores.astype(np.float64)
        z = z - z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def argmax_categories(self) -> np.ndarray:
        """Predicted category per point, values in 1..C."""
        return np.argmax(self.scores, axis=1).astype(np.int32) + 1


# ---------------------------------------------------------------------------
# ICRS v1 container
# ---------------------------------------------------------------------------

SCENE_ARRAYS = ("coords", "colors", "superpoint_id", "sem_gt", "inst_gt")


def _dtype_code(arr: np.ndarray) -> str:
    if np.issubdtype(arr.dtype, np.floating):
        return "f32"
    if np.issubdtype(arr.dtype, np.integer):
        info = np.iinfo(np.int32)
        if arr.size and (arr.min() < info.min or arr.max() > info.max):
            raise ValueError("integer array exceeds the i32 range of the container")
        return "i32"
    if arr.dtype == np.bool_:
        return "i32"
    raise ValueError(f"unsupported array dtype {arr.dtype} for the container")


def write_container(path, arrays, scene_id="scene", category_count=1, labeled=False):
    """Write arrays as an ICRS v1 directory: manifest.json + one raw file per
    array (row-major, little-endian, no header), in manifest order."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    table = []
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        data = np.ascontiguousarray(arr, dtype=_DTYPE_BY_CODE[code])
        fname = f"{name}.bin"
        with open(path / fname, "wb") as fh:
            fh.write(data.tobytes())
        table.append(
            {"name": name, "dtype": code, "shape": list(arr.shape), "file": fname}
        )
    manifest = {
        "format_version": FORMAT_VERSION,
        "scene_id": scene_id,
        "C": int(category_count),
        "labeled": bool(labeled),
        "arrays": table,
    }
    with open(path / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_container(path):
    """Read an ICRS v1 directory. Returns (manifest dict, {name: array})."""
    path = Path(path)
    mpath = path / "manifest.json"
    if not mpath.is_file():
        raise ValueError(f"missing manifest.json in container '{path}'")
    with open(mpath, encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(
            f"unsupported container format_version {manifest.get('format_version')!r}"
        )
    arrays = {}
    for entry in manifest.get("arrays", []):
        name = entry["name"]
        code = entry["dtype"]
        if code not in _DTYPE_BY_CODE:
            raise ValueError(f"array '{name}' has unknown dtype code '{code}'")
        dtype = _DTYPE_BY_CODE[code]
        shape = tuple(int(s) for s in entry["shape"])
        fpath = path / entry["file"]
        if not fpath.is_file():
            raise ValueError(f"array '{name}' is missing its data file '{entry['file']}'")
        raw = np.fromfile(fpath, dtype=dtype)
        expected = int(np.prod(shape)) if shape else 1
        if raw.size != expected:
            raise ValueError(
                f"shape mismatch for array '{name}': manifest declares {shape} "
                f"({expected} elements) but file holds {raw.size}"
            )
        arrays[name] = raw.reshape(shape)
    return manifest, arrays


def save_scene(scene: Scene, path, extras=None):
    """Persist a scene (and optional extra arrays) as an ICRS container."""
    arrays = {"coords": scene.coords}
    for name in SCENE_ARRAYS[1:]:
        value = getattr(scene, name)
        if value is not None:
            arrays[name] = value
    if extras:
        for name, arr in extras.items():
            if name in arrays:
                raise ValueError(f"extra array '{name}' collides with a scene array")
            arrays[name] = arr
    write_container(
        path,
        arrays,
        scene_id=scene.scene_id,
        category_count=scene.category_count,
        labeled=scene.labeled,
    )


def load_scene(path) -> Scene:
    """Load a scene from an ICRS container, validating all invariants."""
    manifest, arrays = read_container(path)
    if "coords" not in arrays:
        raise ValueError(f"container '{path}' has no 'coords' array")
    return Scene(
        coords=arrays["coords"],
        colors=arrays.get("colors"),
        superpoint_id=arrays.get("superpoint_id"),
        sem_gt=arrays.get("sem_gt"),
        inst_gt=arrays.get("inst_gt"),
        category_count=int(manifest.get("C", 1)),
        scene_id=str(manifest.get("scene_id", "scene")),
        labeled=bool(manifest.get("labeled", False)),
    )


# ---------------------------------------------------------------------------
# Preprocessing
# ---------------------------------------------------------------------------

def renumber_instances(ids: np.ndarray):
    """Renumber used instance IDs contiguously from 1, preserving order.

    Returns (new_ids, kept) where kept[k] is the old ID renamed to k+1.
    """
    ids = np.asarray(ids)
    kept = np.unique(ids[ids >= 1])
    remap = np.zeros(int(ids.max()) + 2 if ids.size else 1, dtype=ids.dtype)
    remap[kept] = np.arange(1, kept.size + 1, dtype=ids.dtype)
    out = np.where(ids >= 1, remap[np.maximum(ids, 0)], ids)
    return out.astype(np.int32), kept


def voxel_downsample(scene: Scene, voxel_size: float):
    """Collapse the scene to one representative point per occupied voxel.

    Coordinates become the centroid of the voxel members, colors are
    averaged, and labels are decided by majority vote (ties to the smallest
    ID; semantic and instance labels are voted jointly so the sem/inst
    consistency invariant survives). Voxel keys are floor((x - min) / size)
    so the result does not depend on global placement. Returns the reduced
    scene plus an index map sending each input point to its output row.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    coords = scene.coords.astype(np.float64)
    rel = coords - coords.min(axis=0)
    key = np.floor(rel / voxel_size).astype(np.int64)
    dims = key.max(axis=0) + 1
    flat = np.ravel_multi_index((key[:, 0], key[:, 1], key[:, 2]), dims)

    # Canonical member order (voxel, then coordinates) makes the reduction
    # independent of input permutation, bit for bit.
    order = np.lexsort((coords[:, 2], coords[:, 1], coords[:, 0], flat))
    sflat = flat[order]
    starts = np.flatnonzero(np.r_[True, sflat[1:] != sflat[:-1]])
    counts = np.diff(np.append(starts, sflat.shape[0]))
    group_of_sorted = np.repeat(np.arange(starts.size), counts)
    index_map = np.empty(scene.n_points, dtype=np.int64)
    index_map[order] = group_of_sorted

    def _mean(values):
        sums = np.add.reduceat(values[order], starts, axis=0)
        return (sums / counts[:, None]).astype(np.float32)

    new_coords = _mean(coords)
    new_colors = _mean(scene.colors.astype(np.float64)) if scene.colors is not None else None

    sem = scene.sem_gt
    inst = scene.inst_gt
    new_sem = new_inst = None
    if sem is not None and inst is not None:
        # Joint (inst, sem) vote; -1 maps to slot 0 so ties still favor it.
        pair = (inst.astype(np.int64) + 1) * (scene.category_count + 2) + (
            sem.astype(np.int64) + 1
        )
        mode_pair = group_modes(index_map, pair, prefer_foreground=False)
        new_inst = (mode_pair // (scene.category_count + 2) - 1).astype(np.int32)
        new_sem = (mode_pair % (scene.category_count + 2) - 1).astype(np.int32)
    elif sem is not None:
        new_sem = group_modes(index_map, sem, prefer_foreground=False).astype(np.int32)
    elif inst is not None:
        new_inst = group_modes(index_map, inst, prefer_foreground=False).astype(np.int32)
    if new_inst is not None:
        new_inst, _ = renumber_instances(new_inst)

    new_sp = None
    if scene.superpoint_id is not None:
        new_sp = group_modes(
            index_map, scene.superpoint_id, prefer_foreground=False
        ).astype(np.int32)

    reduced = Scene(
        coords=new_coords,
        colors=new_colors,
        superpoint_id=new_sp,
        sem_gt=new_sem,
        inst_gt=new_inst,
        category_count=scene.category_count,
        scene_id=scene.scene_id,
        labeled=scene.labeled,
    )
    return reduced, index_map


def random_subsample(scene: Scene, ratio: float, seed: int):
    """Uniformly subsample round(N * ratio) points (at least one).

    The exact ratio semantics are the caller's choice; instance IDs are
    renumbered if the sampling drops an instance entirely. Returns the
    reduced scene and the sorted indices of the kept points.
    """
    if not 0 < ratio <= 1:
        raise ValueError("ratio must be in (0, 1]")
    rng = np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, 0x5375627361]))
    k = max(1, int(round(scene.n_points * ratio)))
    idx = np.sort(rng.choice(scene.n_points, size=k, replace=False))

    def _take(arr):
        return None if arr is None else arr[idx]

    inst = _take(scene.inst_gt)
    if inst is not None:
        inst, _ = renumber_instances(inst)
    return (
        Scene(
            coords=scene.coords[idx],
            colors=_take(scene.colors),
            superpoint_id=_take(scene.superpoint_id),
            sem_gt=_take(scene.sem_gt),
            inst_gt=inst,
            category_count=scene.category_count,
            scene_id=scene.scene_id,
            labeled=scene.labeled,
        ),
        idx,
    )
