"""Training-framework bridge for mattekit.

Exposes the seeded patch iterator, the pseudo-label hook, and the
metric/loss evaluators as plain numpy-array calls. Everything here
delegates to mattekit itself, so results are bit-identical to the CLI's
file outputs for the same configuration: patch arrays carry the
export-domain values (PNG code / max code) as contiguous float32.

The iterator is meant to be consumed from a single host thread; worker
processes run behind it and hook callbacks are serialized in the
consuming process.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping, Optional, Union

import numpy as np

from mattekit import losses  # re-exported namespace
from mattekit.config import load_config
from mattekit.dataset import EmitStats, Manifest, iter_patches
from mattekit.metrics import MetricConstants, conn_error, grad_error, mse, sad
from mattekit.strategy import register_pseudo_label_hook, registered_pseudo_label_hook
from mattekit.trimap import UNKNOWN

__version__ = "0.1.0"

__all__ = [
    "BoundPatch",
    "open_pipeline",
    "eval_metrics",
    "losses",
    "register_pseudo_label_hook",
    "registered_pseudo_label_hook",
    "__version__",
]

PseudoLabelHook = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class BoundPatch:
    """One pipeline patch as dense arrays plus its replay record.

    image: (H, W, 3) float32, alpha: (H, W) float32, trimap: (H, W) uint8
    with codes {0, 128, 255}. Contents are bit-identical to the PNG files
    the CLI writes for the same (config, index).
    """

    index: int
    image: np.ndarray
    alpha: np.ndarray
    trimap: np.ndarray
    record: Mapping


@dataclass
class PipelineStats:
    """Mutable counters filled while the iterator is consumed."""

    inner: EmitStats = field(default_factory=EmitStats)

    @property
    def emitted(self) -> int:
        return self.inner.emitted

    @property
    def skipped(self) -> int:
        return self.inner.skipped_no_hook + self.inner.skipped_hook_error


def open_pipeline(
    config_path,
    n: int,
    workers: Optional[int] = None,
    hook: Optional[PseudoLabelHook] = None,
    stats: Optional[PipelineStats] = None,
) -> Iterator[BoundPatch]:
    """Stream the first ``n`` training patches for a run configuration.

    Patches arrive in index order regardless of the worker count. A
    pseudo-label hook (argument, or one registered globally via
    ``register_pseudo_label_hook``) receives (image, trimap) and returns
    the alpha target; samples that need a pseudo label and have no hook
    are skipped and counted, never mislabeled. Configuration problems
    raise with the CLI's diagnostic text.
    """
    config = load_config(config_path)
    manifest_path = Path(config.output_dir) / "manifest.json"
    if not manifest_path.is_file():
        raise FileNotFoundError(
            f"manifest not found: {manifest_path} (run `mattekit compose` first)"
        )
    manifest = Manifest.load(manifest_path)
    inner_stats = stats.inner if stats is not None else None
    for patch in iter_patches(
        manifest,
        config.policy,
        config.seed,
        n,
        workers=config.workers if workers is None else workers,
        options=config.pipeline,
        hook=hook,
        stats=inner_stats,
    ):
        yield BoundPatch(
            index=patch.index,
            image=np.ascontiguousarray(patch.image, dtype=np.float32),
            alpha=np.ascontiguousarray(patch.alpha, dtype=np.float32),
            trimap=np.ascontiguousarray(patch.trimap, dtype=np.uint8),
            record=patch.record,
        )


def eval_metrics(
    pred: np.ndarray,
    gt: np.ndarray,
    trimap: np.ndarray,
    constants: Union[MetricConstants, Mapping, None] = None,
) -> dict:
    """All four matting errors over the trimap's unknown region.

    Delegates to the mattekit implementations, so values are identical to
    the CLI's report CSVs for the same arrays.
    """
    if constants is None:
        c = MetricConstants()
    elif isinstance(constants, MetricConstants):
        c = constants
    else:
        c = MetricConstants(**dict(constants))
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    trimap = np.asarray(trimap)
    return {
        "sad": sad(pred, gt, trimap, c.whole_image),
        "mse": mse(pred, gt, trimap, c.whole_image),
        "grad": grad_error(pred, gt, trimap, sigma=c.grad_sigma, q=c.grad_q, whole_image=c.whole_image),
        "conn": conn_error(
            pred, gt, trimap,
            step=c.conn_step, theta=c.conn_theta,
            connectivity=c.connectivity, whole_image=c.whole_image,
        ),
        "unknown_px": int((trimap == UNKNOWN).sum()),
    }
