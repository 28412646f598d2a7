"""Occlusion-robust generative compositional classification head.

A spherical-kernel dictionary turns unit-norm feature maps into per-cell
log likelihoods; per-class spatial mixture models and a fixed bank of
position-independent occluder mixtures then compete cell by cell, giving
classification scores that ignore occluded regions and a per-cell occluder
localization map. Includes end-to-end gradient training and a synthetic
occlusion benchmark.
"""

from .backbone import (
    BackboneParams,
    Image,
    default_backbone,
    extract_features,
    load_feature_map,
    read_image,
    write_image,
)
from .bench import (
    EvalReport,
    SyntheticSample,
    apply_occluder,
    downsample_mask,
    evaluate,
    generate_backgrounds,
    generate_dataset,
    load_dataset,
    roc_curve,
    save_dataset,
)
from .errors import (
    CompheadError,
    DivergenceError,
    FormatError,
    GenerationError,
    GeometryError,
    InitError,
    ShapeError,
)
from .head import (
    InferenceResult,
    MixtureBank,
    OccluderBank,
    infer_from_likelihood,
    median_filter_3x3,
    mixture_log_likelihood_plane,
    occluder_log_likelihood_plane,
    occlusion_score_map,
    robust_score,
)
from .model import CompModel, load_model, save_model
from .tensor_io import ModelManifest, read_tensor, write_tensor
from .trainer import (
    TrainConfig,
    TrainState,
    init_model,
    learn_occluder_models,
    loss_gradients,
    total_loss,
    train,
)
from .vmf import (
    VmfDictionary,
    compute_likelihood_tensor,
    spherical_cluster,
    spherical_cluster_ml,
    vmf_log_density,
)

__version__ = "0.1.0"

__all__ = [
    "BackboneParams", "Image", "default_backbone", "extract_features",
    "load_feature_map", "read_image", "write_image",
    "EvalReport", "SyntheticSample", "apply_occluder", "downsample_mask",
    "evaluate", "generate_backgrounds", "generate_dataset", "load_dataset",
    "roc_curve", "save_dataset",
    "CompheadError", "DivergenceError", "FormatError", "GenerationError",
    "GeometryError", "InitError", "ShapeError",
    "InferenceResult", "MixtureBank", "OccluderBank", "infer_from_likelihood",
    "median_filter_3x3", "mixture_log_likelihood_plane",
    "occluder_log_likelihood_plane", "occlusion_score_map", "robust_score",
    "CompModel", "load_model", "save_model",
    "ModelManifest", "read_tensor", "write_tensor",
    "TrainConfig", "TrainState", "init_model", "learn_occluder_models",
    "loss_gradients", "total_loss", "train",
    "VmfDictionary", "compute_likelihood_tensor", "spherical_cluster",
    "spherical_cluster_ml", "vmf_log_density",
]
