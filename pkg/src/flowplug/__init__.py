"""Identity-aware latent disentanglement over per-layer style codes.

A conditional invertible flow maps each style code (conditioned on its
layer index) into a factorized latent space where labeled attributes
occupy individual coordinates and everything else -- identity included --
lives in a standard-Gaussian block kept tight per person by a contrastive
loss. Includes a synthetic invertible backbone with ground-truth factors,
an editing pipeline, and quantitative disentanglement evaluation.
"""

from .editing import EditRequest, EditResult, edit_attribute, interpolate_attribute, minimal_edit
from .evaluation import (
    EvalConfig,
    EvalReport,
    ProbeConfig,
    ProbeModel,
    accuracy_protocol,
    evaluate_dataset,
    identity_drift,
    rank_protocol,
    run_evaluation,
    spearman_rho,
    train_probe,
)
from .flow import (
    CouplingLayer,
    FlowConfig,
    FlowModel,
    StyleCode,
    StyleStack,
    build_flow,
    coupling_forward,
    coupling_inverse,
    to_latent,
    to_style,
)
from .losses import LossConfig, contrastive_loss, nll_loss, total_loss
from .prior import LabelStats, LatentPair, PriorConfig, label_to_mean, log_prior, sample_latent
from .synthetic import (
    GroundTruthFactors,
    MockBackbone,
    SyntheticConfig,
    SyntheticDataset,
    backbone_generate,
    backbone_invert,
    generate_dataset,
    load_dataset,
    make_backbone,
    save_dataset,
    save_ground_truth,
)
from .training import Checkpoint, TrainConfig, load_checkpoint, make_batches, save_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "EditRequest",
    "EditResult",
    "edit_attribute",
    "interpolate_attribute",
    "minimal_edit",
    "EvalConfig",
    "EvalReport",
    "ProbeConfig",
    "ProbeModel",
    "accuracy_protocol",
    "evaluate_dataset",
    "identity_drift",
    "rank_protocol",
    "run_evaluation",
    "spearman_rho",
    "train_probe",
    "CouplingLayer",
    "FlowConfig",
    "FlowModel",
    "StyleCode",
    "StyleStack",
    "build_flow",
    "coupling_forward",
    "coupling_inverse",
    "to_latent",
    "to_style",
    "LossConfig",
    "contrastive_loss",
    "nll_loss",
    "total_loss",
    "LabelStats",
    "LatentPair",
    "PriorConfig",
    "label_to_mean",
    "log_prior",
    "sample_latent",
    "GroundTruthFactors",
    "MockBackbone",
    "SyntheticConfig",
    "SyntheticDataset",
    "backbone_generate",
    "backbone_invert",
    "generate_dataset",
    "load_dataset",
    "make_backbone",
    "save_dataset",
    "save_ground_truth",
    "Checkpoint",
    "TrainConfig",
    "load_checkpoint",
    "make_batches",
    "save_checkpoint",
    "train",
]
