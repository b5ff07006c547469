"""Reference implementations of the training losses, framework-free.

These are evaluators only (they return values, not gradients); training
frameworks re-express them on tensors and can check against these.
Computation is float64. ``region`` is an optional boolean mask; None
means whole image. Gradients use forward differences, which makes the
gradient-penalty term the standard anisotropic total variation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from .trimap import UNKNOWN

PYRAMID_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0


@dataclass(frozen=True)
class LossConfig:
    gp_weight: float = 0.01  # lambda of the gradient penalty
    laplacian_levels: int = 5
    unknown_only: bool = True

    def __post_init__(self):
        if self.gp_weight < 0:
            raise ValueError("gp_weight must be >= 0")
        if self.laplacian_levels < 1:
            raise ValueError("laplacian_levels must be >= 1")


def region_from_trimap(trimap: np.ndarray) -> np.ndarray:
    return np.asarray(trimap) == UNKNOWN


def _masked(arr: np.ndarray, region: Optional[np.ndarray]) -> np.ndarray:
    if region is None:
        return arr.reshape(-1)
    region = np.asarray(region, dtype=bool)
    if region.shape != arr.shape[: region.ndim]:
        raise ValueError(f"region {region.shape} does not match raster {arr.shape}")
    if not region.any():
        raise ValueError("empty loss region")
    return arr[region].reshape(-1)


def l1_alpha(pred: np.ndarray, gt: np.ndarray, region: Optional[np.ndarray] = None) -> float:
    """Mean absolute alpha error over the region."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred {pred.shape} vs gt {gt.shape}")
    return float(np.mean(_masked(np.abs(pred - gt), region)))


def composition_loss(
    pred: np.ndarray,
    image: np.ndarray,
    fg: np.ndarray,
    bg: np.ndarray,
    region: Optional[np.ndarray] = None,
) -> float:
    """Mean |image - (pred * fg + (1 - pred) * bg)| over the region, per channel."""
    pred = np.asarray(pred, dtype=np.float64)
    image = np.asarray(image, dtype=np.float64)
    fg = np.asarray(fg, dtype=np.float64)
    bg = np.asarray(bg, dtype=np.float64)
    if image.shape != fg.shape or fg.shape != bg.shape or image.shape[:2] != pred.shape:
        raise ValueError("image/fg/bg/pred dimensions do not match")
    a = pred[:, :, None]
    err = np.abs(image - (a * fg + (1.0 - a) * bg))
    return float(np.mean(_masked(err, region)))


def _pyr_blur(arr: np.ndarray) -> np.ndarray:
    out = ndimage.correlate1d(arr, PYRAMID_KERNEL, axis=0, mode="reflect")
    return ndimage.correlate1d(out, PYRAMID_KERNEL, axis=1, mode="reflect")


def _pyr_reduce(arr: np.ndarray) -> np.ndarray:
    return _pyr_blur(arr)[::2, ::2]


def _pyr_expand(arr: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.zeros(shape, dtype=arr.dtype)
    up[::2, ::2] = arr
    return 4.0 * _pyr_blur(up)


def laplacian_pyramid(arr: np.ndarray, levels: int) -> list[np.ndarray]:
    """Band-pass levels 1..levels of the Gaussian Laplacian pyramid."""
    arr = np.asarray(arr, dtype=np.float64)
    if min(arr.shape) < 2**levels:
        raise ValueError(f"raster {arr.shape} too small for a {levels}-level pyramid")
    bands = []
    current = arr
    for _ in range(levels):
        down = _pyr_reduce(current)
        bands.append(current - _pyr_expand(down, current.shape))
        current = down
    return bands


def laplacian_loss(pred: np.ndarray, gt: np.ndarray, levels: int = 5) -> float:
    """Sum over pyramid levels of 2^(k-1) * mean-L1 of the band difference."""
    pred_bands = laplacian_pyramid(pred, levels)
    gt_bands = laplacian_pyramid(np.asarray(gt, dtype=np.float64), levels)
    total = 0.0
    for k, (pb, gb) in enumerate(zip(pred_bands, gt_bands), start=1):
        total += 2.0 ** (k - 1) * float(np.mean(np.abs(pb - gb)))
    return total


def _forward_diffs(arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ValueError(f"need a (H, W) raster with H, W >= 2, got {arr.shape}")
    dx = arr[:, 1:] - arr[:, :-1]
    dy = arr[1:, :] - arr[:-1, :]
    return dx, dy


def total_variation(arr: np.ndarray) -> float:
    """Anisotropic L1 total variation under forward differences."""
    dx, dy = _forward_diffs(arr)
    return float(np.abs(dx).sum() + np.abs(dy).sum())


def gradient_loss(pred: np.ndarray, gt: np.ndarray) -> float:
    """L1 norm of forward-difference gradient mismatch, summed over both axes."""
    px, py = _forward_diffs(pred)
    gx, gy = _forward_diffs(gt)
    if px.shape != gx.shape:
        raise ValueError("pred and gt dimensions do not match")
    return float(np.abs(px - gx).sum() + np.abs(py - gy).sum())


def gradient_penalty_loss(pred: np.ndarray, gt: np.ndarray, gp_weight: float = 0.01) -> float:
    """Gradient loss plus a smoothness penalty on the prediction:
    gradient_loss + gp_weight * TV(pred)."""
    if gp_weight < 0:
        raise ValueError("gp_weight must be >= 0")
    base = gradient_loss(pred, gt)
    if gp_weight == 0:
        return base
    return base + gp_weight * total_variation(pred)
