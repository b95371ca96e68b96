"""Object-centric similarity scoring for rendered novel-view images."""

__version__ = "0.1.0"

from .backend import (  # noqa: E402
    Detection,
    FeatureMap,
    ModelConfig,
    TensorImage,
    load_image,
    load_model,
    preprocess,
)
from .baselines import BaselineScores, ms_ssim, patch_metric, psnr, ssim
from .harness import (
    DegradationPlan,
    PoseGrid,
    SplitSpec,
    apply_object_blur,
    ingest_mos,
    make_degradation_plan,
    normalize_for_leaderboard,
    normalize_series,
    pearson,
    pose_grid,
    spearman,
    split_dataset,
)
from .metric import (
    ClassAggregate,
    FeatBox,
    ObjectIndexRecord,
    collect_class_indices,
    map_bbox_to_featmap,
    object_index_value,
)
from .saliency import (
    SaliencyConfig,
    SaliencyMap,
    class_saliency,
    compute_saliency,
    object_saliency,
    uniform_saliency,
)
from .scoring import (
    EvaluationReport,
    compute_osim,
    evaluate_scene,
    render_low_quality_overlay,
)

__all__ = [
    "BaselineScores",
    "ClassAggregate",
    "DegradationPlan",
    "Detection",
    "EvaluationReport",
    "FeatBox",
    "FeatureMap",
    "ModelConfig",
    "ObjectIndexRecord",
    "PoseGrid",
    "SaliencyConfig",
    "SaliencyMap",
    "SplitSpec",
    "TensorImage",
    "apply_object_blur",
    "class_saliency",
    "collect_class_indices",
    "compute_osim",
    "compute_saliency",
    "evaluate_scene",
    "ingest_mos",
    "load_image",
    "load_model",
    "make_degradation_plan",
    "map_bbox_to_featmap",
    "ms_ssim",
    "normalize_for_leaderboard",
    "normalize_series",
    "object_index_value",
    "object_saliency",
    "patch_metric",
    "pearson",
    "pose_grid",
    "preprocess",
    "psnr",
    "render_low_quality_overlay",
    "spearman",
    "split_dataset",
    "ssim",
    "uniform_saliency",
]
