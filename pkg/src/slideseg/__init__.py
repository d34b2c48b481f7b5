"""Landslide detection and segmentation from multispectral image patches."""

from .augment import AugmentConfig, augment_batch, cutmix, random_rotate, rotate
from .bands import BandSpec, CANONICAL_SPECS, derive_band, engineer_stack, preset
from .data import (
    BandStack,
    DatasetIndex,
    GroundTruthMask,
    Sample,
    dataset_stats,
    load_dataset,
    read_mask,
    read_sample,
    write_mask,
)
from .harness import (
    TrainConfig,
    cross_validate,
    evaluate,
    make_folds,
    split_dataset,
    train,
)
from .losses import (
    LossConfig,
    combined_loss,
    cross_entropy,
    focal_loss,
    iou_loss,
    multi_head_loss,
)
from .metrics import ConfusionCounts, EvalReport, confusion_counts, f1_score, miou
from .model import (
    FeatureMapShape,
    HeadOutputs,
    ModelConfig,
    UNet,
    build_model,
    count_parameters,
    ensemble_average,
    load_checkpoint,
    predict_mask,
    save_checkpoint,
)

__version__ = "0.1.0"
