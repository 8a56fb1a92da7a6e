"""Seeded synthetic scenes with planted ground truth, controlled prediction
corruption, and weak/strong augmentations.

Scenes are disjoint point blobs separated by a configurable gap, so the
planted soft masks, heatmap and kernels are all mutually consistent with
the ground-truth partition: projecting the ideal masks recovers it exactly,
the heatmap equals the supervision target formula, and the planted linear
kernels separate every instance with a logit margin of at least 2.

Randomness is counter-based (Philox keyed by seed and a purpose tag), so
every quantity is reproducible independently of call order.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import KernelSet
from .scene import Scene, SemanticScores, SoftMaskSet

IN_SCORE = 0.95
OUT_SCORE = 0.05
DUP_SCORE = 0.96
KERNEL_SCALE = 6.0
SEM_LOGIT = 4.0
FEATURE_NOISE = 0.01
SIZE_FLOOR = 0.1


def tagged_rng(seed: int, tag: str) -> np.random.Generator:
    """Deterministic generator keyed by (seed, purpose tag)."""
    digest = hashlib.blake2s(tag.encode("utf-8"), digest_size=8).digest()
    word = int.from_bytes(digest, "little")
    return np.random.Generator(np.random.Philox(key=[seed & 0xFFFFFFFFFFFFFFFF, word]))


@dataclass(frozen=True)
class GenConfig:
    seed: int = 0
    instance_count: tuple = (3, 6)
    points_per_instance: tuple = (150, 400)
    extent: tuple = (8.0, 8.0, 3.0)
    shape: str = "gaussian-blob"
    gap: float = 0.3
    superpoint_size: float = 0.15
    category_count: int = 5
    feature_dim: int = 16
    background_points: tuple = (40, 120)

    def __post_init__(self):
        for name in ("instance_count", "points_per_instance", "background_points"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ValueError(f"{name} range ({lo}, {hi}) is empty or negative")
        if self.instance_count[0] < 1:
            raise ValueError("at least one instance is required")
        if self.points_per_instance[0] < 1:
            raise ValueError("instances need at least one point")
        if self.shape not in ("gaussian-blob", "box"):
            raise ValueError(f"unknown instance shape '{self.shape}'")
        if self.gap < 0:
            raise ValueError("gap must be non-negative")
        if self.superpoint_size <= 0:
            raise ValueError("superpoint_size must be positive")
        if self.category_count < 1:
            raise ValueError("category_count must be >= 1")
        if self.feature_dim < self.instance_count[1]:
            raise ValueError(
                "feature_dim must be >= the instance_count upper bound so the "
                "planted kernels can separate every instance"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "GenConfig":
        kwargs = dict(data)
        for name in (
            "instance_count",
            "points_per_instance",
            "background_points",
            "extent",
        ):
            if name in kwargs:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs)


@dataclass(frozen=True)
class CorruptionConfig:
    duplicate_rate: float = 0.0
    attenuation: float = 0.0
    boundary_noise: float = 0.0
    sem_flip_rate: float = 0.0

    def __post_init__(self):
        for name in ("duplicate_rate", "attenuation", "sem_flip_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.boundary_noise < 0:
            raise ValueError("boundary_noise must be non-negative (meters)")


@dataclass(frozen=True)
class GeneratedScene:
    """A scene plus every planted prediction-side quantity."""

    scene: Scene
    kernels: KernelSet
    soft_masks: SoftMaskSet
    heatmap: np.ndarray
    sem_scores: SemanticScores
    features: np.ndarray  # (N, D) mask-reconstruction features
    kernel_features: np.ndarray  # (N, D+4) per-point kernel parameter field


@dataclass(frozen=True)
class CorruptedPredictions:
    soft_masks: SoftMaskSet
    heatmap: np.ndarray
    sem_scores: SemanticScores
    attenuated: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    duplicates: tuple = ()  # (column_index, source_instance_id) pairs


def _place_instances(cfg: GenConfig, rng, n_inst):
    """Sample centers and bounding radii with pairwise separation >= gap."""
    extent = np.asarray(cfg.extent, dtype=np.float64)
    centers = np.zeros((n_inst, 3))
    radii = np.zeros(n_inst)
    half_extents = np.zeros((n_inst, 3))
    for i in range(n_inst):
        placed = False
        for _ in range(400):
            if cfg.shape == "box":
                half = rng.uniform(0.15, 0.45, size=3)
                r = float(np.linalg.norm(half))
            else:
                half = np.zeros(3)
                r = float(rng.uniform(0.25, 0.6))
            margin = r + 1e-3
            if np.any(extent <= 2 * margin):
                continue
            c = rng.uniform(margin, extent - margin)
            ok = True
            for j in range(i):
                if np.linalg.norm(c - centers[j]) < r + radii[j] + cfg.gap:
                    ok = False
                    break
            if ok:
                centers[i] = c
                radii[i] = r
                half_extents[i] = half
                placed = True
                break
        if not placed:
            raise ValueError(
                "infeasible packing: could not place instances with the "
                "requested gap inside the room extent"
            )
    return centers, radii, half_extents


def _sample_blob(rng, center, radius, count):
    out = np.empty((count, 3))
    have = 0
    while have < count:
        draw = rng.normal(0.0, radius / 2.5, size=(2 * (count - have) + 8, 3))
        keep = draw[np.linalg.norm(draw, axis=1) <= radius]
        take = min(count - have, keep.shape[0])
        out[have : have + take] = keep[:take]
        have += take
    return out + center


def generate_scene(cfg: GenConfig) -> GeneratedScene:
    """Generate a scene and all planted predictions for a fixed seed."""
    n_inst = int(tagged_rng(cfg.seed, "count").integers(
        cfg.instance_count[0], cfg.instance_count[1] + 1
    ))
    place_rng = tagged_rng(cfg.seed, "place")
    centers, radii, half_extents = _place_instances(cfg, place_rng, n_inst)

    point_rng = tagged_rng(cfg.seed, "points")
    sizes = point_rng.integers(
        cfg.points_per_instance[0], cfg.points_per_instance[1] + 1, size=n_inst
    )
    chunks = []
    for i in range(n_inst):
        if cfg.shape == "box":
            pts = centers[i] + point_rng.uniform(
                -half_extents[i], half_extents[i], size=(sizes[i], 3)
            )
        else:
            pts = _sample_blob(point_rng, centers[i], radii[i], int(sizes[i]))
        chunks.append(pts)
    inst_ids = np.repeat(np.arange(1, n_inst + 1), sizes)

    bg_rng = tagged_rng(cfg.seed, "background")
    extent = np.asarray(cfg.extent, dtype=np.float64)
    n_bg = int(bg_rng.integers(cfg.background_points[0], cfg.background_points[1] + 1))
    bg = np.empty((0, 3))
    if n_bg:
        got = []
        need = n_bg
        while need > 0:
            draw = bg_rng.uniform(0.0, extent, size=(2 * need + 8, 3))
            d = np.linalg.norm(draw[:, None, :] - centers[None, :, :], axis=2)
            keep = draw[(d > radii[None, :]).all(axis=1)]
            take = min(need, keep.shape[0])
            got.append(keep[:take])
            need -= take
        bg = np.concatenate(got, axis=0)
    coords = np.concatenate(chunks + [bg], axis=0)
    inst_gt = np.concatenate([inst_ids, np.full(n_bg, -1, dtype=np.int64)])
    n = coords.shape[0]

    perm = tagged_rng(cfg.seed, "shuffle").permutation(n)
    coords = coords[perm]
    inst_gt = inst_gt[perm].astype(np.int32)

    cls_rng = tagged_rng(cfg.seed, "classes")
    inst_cat = cls_rng.integers(1, cfg.category_count + 1, size=n_inst).astype(np.int32)
    sem_gt = np.where(inst_gt >= 1, inst_cat[np.maximum(inst_gt, 1) - 1], -1).astype(
        np.int32
    )
    colors = tagged_rng(cfg.seed, "colors").random((n, 3)).astype(np.float32)

    # Superpoints: grid cells split per ground-truth region, so every
    # superpoint lies inside one instance (or the background).
    cell = np.floor((coords - coords.min(axis=0)) / cfg.superpoint_size).astype(np.int64)
    region = np.maximum(inst_gt, 0).astype(np.int64)
    dims = cell.max(axis=0) + 1
    key = ((region * dims[0] + cell[:, 0]) * dims[1] + cell[:, 1]) * dims[2] + cell[:, 2]
    _, superpoint_id = np.unique(key, return_inverse=True)

    scene = Scene(
        coords=coords.astype(np.float32),
        colors=colors,
        superpoint_id=superpoint_id.astype(np.int32),
        sem_gt=sem_gt,
        inst_gt=inst_gt,
        category_count=cfg.category_count,
        scene_id=f"synth-{cfg.seed:06d}",
        labeled=True,
    )

    fg = inst_gt >= 1
    member = np.zeros((n, n_inst), dtype=bool)
    member[np.flatnonzero(fg), inst_gt[fg] - 1] = True
    soft = np.where(member, IN_SCORE, OUT_SCORE).astype(np.float32)

    # Heat target recomputed here on purpose: the supervision module derives
    # the same formula independently, and tests cross-check the two paths.
    coords64 = coords.astype(np.float64)
    cen = np.zeros((n_inst, 3))
    for i in range(n_inst):
        cen[i] = coords64[inst_gt == i + 1].mean(axis=0)
    heat = np.zeros(n)
    size_coeff = np.zeros(n_inst)
    for i in range(n_inst):
        pts = inst_gt == i + 1
        d2 = np.sum((coords64[pts] - cen[i]) ** 2, axis=1)
        size_coeff[i] = max(np.sqrt(d2.max()), SIZE_FLOOR)
        heat[pts] = np.exp(-d2 / size_coeff[i] ** 2)

    feat_rng = tagged_rng(cfg.seed, "features")
    noise = np.clip(feat_rng.normal(0.0, FEATURE_NOISE, size=(n, cfg.feature_dim)), -0.04, 0.04)
    features = noise
    features[fg] += np.eye(cfg.feature_dim)[inst_gt[fg] - 1]
    features = features.astype(np.float32)

    weights = np.zeros((n_inst, cfg.feature_dim + 3))
    weights[:, : cfg.feature_dim] = KERNEL_SCALE * np.eye(cfg.feature_dim)[:n_inst]
    bias = np.full(n_inst, -KERNEL_SCALE / 2.0)
    hottest = np.empty(n_inst, dtype=np.int64)
    for i in range(n_inst):
        pts = np.flatnonzero(inst_gt == i + 1)
        hottest[i] = pts[int(np.argmax(heat[pts]))]
    kernels = KernelSet(
        weights=weights,
        bias=bias,
        centroid_coords=coords64[hottest],
        centroid_heat=heat[hottest],
    )

    kernel_features = np.zeros((n, cfg.feature_dim + 4), dtype=np.float32)
    kernel_features[fg, : cfg.feature_dim + 3] = weights[inst_gt[fg] - 1]
    kernel_features[fg, -1] = bias[inst_gt[fg] - 1]
    kernel_features[~fg, -1] = -KERNEL_SCALE

    sem_scores = np.zeros((n, cfg.category_count), dtype=np.float32)
    sem_scores[fg, sem_gt[fg] - 1] = SEM_LOGIT

    return GeneratedScene(
        scene=scene,
        kernels=kernels,
        soft_masks=SoftMaskSet(soft),
        heatmap=heat,
        sem_scores=SemanticScores(sem_scores),
        features=features,
        kernel_features=kernel_features,
    )


def corrupt_predictions(
    gen: GeneratedScene, cc: CorruptionConfig, seed: int
) -> CorruptedPredictions:
    """Inject controlled noise into the planted predictions.

    Each instance spawns a duplicate column with probability
    ``duplicate_rate``: a slightly stronger membership ball displaced by
    ``boundary_noise`` meters. When ``attenuation`` is positive a random
    non-empty subset of columns is scaled by (1 - attenuation). Semantic
    argmaxes are flipped on a ``sem_flip_rate`` share of points. The
    all-zero config is the identity.
    """
    scene = gen.scene
    inst_gt = scene.inst_gt.astype(np.int64)
    coords = scene.coords.astype(np.float64)
    n_inst = scene.instance_count
    scores = gen.soft_masks.scores.astype(np.float64).copy()

    duplicates = []
    dup_rng = tagged_rng(seed, "duplicate")
    if cc.duplicate_rate > 0:
        spawn = dup_rng.random(n_inst) < cc.duplicate_rate
        new_cols = []
        for i in np.flatnonzero(spawn) + 1:
            pts = inst_gt == i
            center = coords[pts].mean(axis=0)
            radius = float(np.linalg.norm(coords[pts] - center, axis=1).max())
            direction = dup_rng.normal(size=3)
            norm = np.linalg.norm(direction)
            offset = (
                direction / norm * cc.boundary_noise if norm > 0 else np.zeros(3)
            )
            inside = np.linalg.norm(coords - (center + offset), axis=1) <= radius
            new_cols.append(np.where(inside, DUP_SCORE, OUT_SCORE))
            duplicates.append((scores.shape[1] + len(new_cols) - 1, int(i)))
        if new_cols:
            scores = np.concatenate([scores, np.stack(new_cols, axis=1)], axis=1)

    attenuated = np.empty(0, dtype=np.int64)
    if cc.attenuation > 0 and scores.shape[1] > 0:
        att_rng = tagged_rng(seed, "attenuate")
        k = int(att_rng.integers(1, scores.shape[1] + 1))
        attenuated = np.sort(att_rng.choice(scores.shape[1], size=k, replace=False))
        scores[:, attenuated] *= 1.0 - cc.attenuation

    sem = gen.sem_scores.scores.astype(np.float64).copy()
    if cc.sem_flip_rate > 0 and sem.shape[1] > 1:
        flip_rng = tagged_rng(seed, "semflip")
        n_flip = int(round(cc.sem_flip_rate * sem.shape[0]))
        if n_flip:
            pts = flip_rng.choice(sem.shape[0], size=n_flip, replace=False)
            targets = flip_rng.integers(0, sem.shape[1] - 1, size=n_flip)
            for p, t in zip(pts, targets):
                cur = int(np.argmax(sem[p]))
                other = int(t if t < cur else t + 1)
                sem[p, cur], sem[p, other] = sem[p, other], sem[p, cur]

    return CorruptedPredictions(
        soft_masks=SoftMaskSet(scores),
        heatmap=gen.heatmap.copy(),
        sem_scores=SemanticScores(sem),
        attenuated=attenuated,
        duplicates=tuple(duplicates),
    )


def _trilinear(grid, spacing, origin, points):
    rel = (points - origin) / spacing
    base = np.floor(rel).astype(np.int64)
    frac = rel - base
    dims = np.array(grid.shape[:3])
    out = np.zeros((points.shape[0], 3))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                idx = np.minimum(base + (dx, dy, dz), dims - 1)
                w = (
                    (frac[:, 0] if dx else 1 - frac[:, 0])
                    * (frac[:, 1] if dy else 1 - frac[:, 1])
                    * (frac[:, 2] if dz else 1 - frac[:, 2])
                )
                out += w[:, None] * grid[idx[:, 0], idx[:, 1], idx[:, 2]]
    return out


def augment(
    scene: Scene,
    strength: str,
    seed: int,
    jitter_sigma: float = 0.01,
    elastic_magnitude: float = 0.02,
    elastic_spacing: float = 0.2,
    color_jitter: float = 0.05,
) -> Scene:
    """Weak or strong augmentation of a scene; labels pass through unchanged.

    Weak: random x/y axis flips plus a rotation about z (a rigid map).
    Strong adds per-point Gaussian coordinate jitter, a smooth elastic
    displacement field interpolated from a coarse noise grid, and per-channel
    color scale/shift. With all strong magnitudes zero, strong reduces to
    weak bit for bit.
    """
    if strength not in ("weak", "strong"):
        raise ValueError("strength must be 'weak' or 'strong'")
    coords = scene.coords.astype(np.float64)
    center = coords.mean(axis=0)

    flip_rng = tagged_rng(seed, "flip")
    signs = np.where(flip_rng.random(2) < 0.5, -1.0, 1.0)
    rot_rng = tagged_rng(seed, "rotate")
    theta = rot_rng.uniform(0.0, 2.0 * np.pi)
    cos_t, sin_t = np.cos(theta), np.sin(theta)

    out = coords - center
    out[:, 0] *= signs[0]
    out[:, 1] *= signs[1]
    x, y = out[:, 0].copy(), out[:, 1].copy()
    out[:, 0] = cos_t * x - sin_t * y
    out[:, 1] = sin_t * x + cos_t * y
    out += center

    colors = scene.colors
    if strength == "strong":
        jit_rng = tagged_rng(seed, "jitter")
        out = out + jitter_sigma * jit_rng.normal(size=out.shape)

        if elastic_spacing <= 0:
            raise ValueError("elastic_spacing must be positive")
        ela_rng = tagged_rng(seed, "elastic")
        origin = out.min(axis=0)
        span = out.max(axis=0) - origin
        dims = np.maximum(np.ceil(span / elastic_spacing).astype(np.int64) + 2, 2)
        grid = elastic_magnitude * ela_rng.normal(size=(dims[0], dims[1], dims[2], 3))
        out = out + _trilinear(grid, elastic_spacing, origin, out)

        if colors is not None:
            col_rng = tagged_rng(seed, "color")
            scale = 1.0 + col_rng.uniform(-color_jitter, color_jitter, size=3)
            shift = col_rng.uniform(-color_jitter, color_jitter, size=3)
            colors = np.clip(
                colors.astype(np.float64) * scale + shift, 0.0, 1.0
            ).astype(np.float32)

    return Scene(
        coords=out.astype(np.float32),
        colors=colors,
        superpoint_id=scene.superpoint_id,
        sem_gt=scene.sem_gt,
        inst_gt=scene.inst_gt,
        category_count=scene.category_count,
        scene_id=scene.scene_id,
        labeled=scene.labeled,
    )
