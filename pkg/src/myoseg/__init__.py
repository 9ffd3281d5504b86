"""Cascade multi-sequence myocardial pathology segmentation.

Stage one finds the left ventricle with a multi-encoder network regularized by
a denoising auto-encoder shape prior; stage two segments scar and edema inside
that candidate with per-modality branches joined by channel-attention fusion.
Ships with a synthetic phantom generator so the whole pipeline trains and
evaluates on a laptop CPU.
"""

from .data import (
    CLASS_BACKGROUND,
    CLASS_EDEMA,
    CLASS_LV_POOL,
    CLASS_MYOCARDIUM,
    CLASS_SCAR,
    MODALITIES,
    BinaryMask,
    LabelMap,
    MultiModalityImage,
    lv_mask_from_labels,
    mask_apply,
    read_case,
    read_dataset,
    write_case,
)
from .errors import (
    ConfigError,
    DataFormatError,
    EmptyMaskError,
    ParameterError,
    ShapeMismatchError,
    TrainingDivergedError,
    ValidationError,
)
from .phantom import PhantomParams, generate_case, generate_dataset
from .metrics import (
    MetricsRecord,
    boundary_pixels,
    dice_score,
    evaluate_case,
    hausdorff_distance,
)
from .losses import (
    LossWeights,
    assn_total_loss,
    l2_reconstruction_loss,
    one_hot_targets,
    prsn_total_loss,
    soft_dice_loss,
    soft_dice_loss_binary,
)
from .dae import CorruptionSpec, DenoisingAutoencoder, corrupt_label, dae_forward, train_dae
from .fusion import ChannelAttentionFusion, SumProductMaxFusion, input_level_fuse
from .anatomy import AnatomyNet, assn_forward, extract_candidate, train_anatomy
from .pathology import (
    BRANCH_CLASSES,
    PATHOLOGY_VARIANTS,
    PathologyNet,
    SingleBranchNet,
    branch_targets,
    predict_labels,
    predict_pathology,
    train_pathology,
)
from .checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint, weights_hash
from .trainer import TrainConfig, TrainLog, set_determinism
from .experiments import (
    ExperimentConfig,
    render_report,
    run_anatomy_ablation,
    run_pathology_ablation,
)

__version__ = "0.1.0"

__all__ = [
    "AnatomyNet",
    "BinaryMask",
    "BRANCH_CLASSES",
    "ChannelAttentionFusion",
    "CLASS_BACKGROUND",
    "CLASS_EDEMA",
    "CLASS_LV_POOL",
    "CLASS_MYOCARDIUM",
    "CLASS_SCAR",
    "ConfigError",
    "CorruptionSpec",
    "DataFormatError",
    "DenoisingAutoencoder",
    "EmptyMaskError",
    "ExperimentConfig",
    "LabelMap",
    "LossWeights",
    "MetricsRecord",
    "MODALITIES",
    "MultiModalityImage",
    "ParameterError",
    "PathologyNet",
    "PATHOLOGY_VARIANTS",
    "PhantomParams",
    "ShapeMismatchError",
    "SingleBranchNet",
    "SumProductMaxFusion",
    "TrainConfig",
    "TrainingDivergedError",
    "TrainLog",
    "ValidationError",
    "assn_forward",
    "assn_total_loss",
    "boundary_pixels",
    "branch_targets",
    "corrupt_label",
    "dae_forward",
    "dice_score",
    "evaluate_case",
    "extract_candidate",
    "generate_case",
    "generate_dataset",
    "hausdorff_distance",
    "input_level_fuse",
    "l2_reconstruction_loss",
    "load_checkpoint",
    "lv_mask_from_labels",
    "mask_apply",
    "one_hot_targets",
    "predict_labels",
    "predict_pathology",
    "prsn_total_loss",
    "read_case",
    "read_dataset",
    "render_report",
    "run_anatomy_ablation",
    "run_pathology_ablation",
    "save_checkpoint",
    "checkpoint_bytes",
    "weights_hash",
    "set_determinism",
    "soft_dice_loss",
    "soft_dice_loss_binary",
    "train_anatomy",
    "train_dae",
    "train_pathology",
    "write_case",
]
