"""Instance-consistency pseudo-label generation, kernel-based instance
inference, supervision losses, EMA blending and segmentation metrics for 3D
point clouds, with a synthetic-scene oracle substrate and a CLI."""

__version__ = "0.1.0"

from .ema import ParamVector, ema_update
from .enhance import (
    EnhanceConfig,
    EnhanceReport,
    filter_instances,
    generate_pseudo_labels,
    instance_confidence,
    inter_enhance,
    intra_enhance,
    otsu_threshold,
    project,
    purity_score,
    purity_scores,
    superpoint_refine,
    vote_categories,
)
from .kernels import (
    CandidateSet,
    KernelSet,
    LocalizeConfig,
    aggregate_candidates,
    find_candidates,
    reconstruct_masks,
)
from .metrics import (
    EvalResult,
    InstancePrediction,
    ambiguity_stats,
    average_precision,
    labeling_to_predictions,
    mean_iou,
    rand_index,
)
from .scene import (
    HardLabeling,
    Scene,
    SemanticScores,
    SoftMaskSet,
    load_scene,
    random_subsample,
    read_container,
    save_scene,
    voxel_downsample,
    write_container,
)
from .supervision import (
    LossBreakdown,
    SupervisionTargets,
    localization_loss,
    make_targets,
    match_instances,
    reconstruction_loss,
    representation_loss,
    semantic_loss,
    total_loss,
)
from .synth import (
    CorruptionConfig,
    GenConfig,
    GeneratedScene,
    augment,
    corrupt_predictions,
    generate_scene,
    tagged_rng,
)

__all__ = [name for name in dir() if not name.startswith("_")]
