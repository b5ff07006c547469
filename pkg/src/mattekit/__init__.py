"""mattekit: composition-preserving strong augmentation, trimap sweeps,
matting losses and the SAD/MSE/Grad/Conn evaluation suite."""

from . import augment, config, dataset, io, losses, metrics, report, strategy, trimap
from .core import (
    SamplePair,
    clamp_for_export,
    composite,
    composition_residual,
)
from .dataset import Manifest, PipelineOptions, TrainingPatch, build_manifest, emit_batch, iter_patches
from .metrics import MetricConstants, conn_error, evaluate_set, grad_error, mse, sad
from .strategy import SaPolicy, augment_sample, register_pseudo_label_hook, sample_decision
from .trimap import generate_trimap, sweep_sets

__version__ = "0.1.0"

__all__ = [
    "augment",
    "config",
    "dataset",
    "io",
    "losses",
    "metrics",
    "report",
    "strategy",
    "trimap",
    "SamplePair",
    "clamp_for_export",
    "composite",
    "composition_residual",
    "Manifest",
    "PipelineOptions",
    "TrainingPatch",
    "build_manifest",
    "emit_batch",
    "iter_patches",
    "MetricConstants",
    "conn_error",
    "evaluate_set",
    "grad_error",
    "mse",
    "sad",
    "SaPolicy",
    "augment_sample",
    "register_pseudo_label_hook",
    "sample_decision",
    "generate_trimap",
    "sweep_sets",
    "__version__",
]
