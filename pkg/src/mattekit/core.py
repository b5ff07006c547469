"""Alpha composition primitives.

Rasters are plain numpy arrays: color images are (H, W, 3) float32,
alpha mattes (H, W) float32 with values in [0, 1]. Image values may
leave [0, 1] inside augmentation chains; clamping is nonlinear and
would silently break the composition-commutation guarantee, so it
happens only at export time (``clamp_for_export`` / the PNG writers).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

DTYPE = np.float32

# Residual budget for samples that are supposed to satisfy the
# composition equation exactly (float32 rounding only).
RESIDUAL_TOL = 1e-5


class DimensionMismatchError(ValueError):
    """Rasters that must share dimensions do not."""


def as_image(arr) -> np.ndarray:
    """Coerce to a (H, W, 3) float32 color raster."""
    img = np.asarray(arr, dtype=DTYPE)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) color raster, got shape {img.shape}")
    return img


def as_alpha(arr, check_range: bool = True) -> np.ndarray:
    """Coerce to a (H, W) float32 alpha matte, optionally verifying [0, 1]."""
    alpha = np.asarray(arr, dtype=DTYPE)
    if alpha.ndim != 2:
        raise ValueError(f"expected (H, W) alpha matte, got shape {alpha.shape}")
    if check_range and (alpha.min() < 0.0 or alpha.max() > 1.0):
        raise ValueError(
            f"alpha values outside [0, 1]: min={alpha.min():.6g} max={alpha.max():.6g}"
        )
    return alpha


def _check_dims(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> None:
    if fg.shape != bg.shape or fg.shape[:2] != alpha.shape:
        raise DimensionMismatchError(
            f"fg {fg.shape}, bg {bg.shape}, alpha {alpha.shape} do not share dimensions"
        )


def composite(fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Blend foreground over background: out = alpha * fg + (1 - alpha) * bg.

    Computed per pixel and channel in float32, unclamped.
    """
    fg = as_image(fg)
    bg = as_image(bg)
    alpha = as_alpha(alpha)
    _check_dims(fg, bg, alpha)
    a = alpha[:, :, None]
    return (a * fg + (DTYPE(1.0) - a) * bg).astype(DTYPE, copy=False)


def composition_residual(
    image: np.ndarray, fg: np.ndarray, bg: np.ndarray, alpha: np.ndarray
) -> float:
    """Max absolute deviation of ``image`` from the composite of (fg, bg, alpha).

    Zero (up to float32 rounding) iff the sample satisfies the composition
    equation; large for samples whose image was edited after compositing.
    """
    image = as_image(image)
    expected = composite(fg, bg, alpha)
    if image.shape != expected.shape:
        raise DimensionMismatchError(
            f"image {image.shape} does not match composite {expected.shape}"
        )
    return float(np.abs(image - expected).max())


def clamp_for_export(image: np.ndarray) -> np.ndarray:
    """Clip all values to [0, 1]. Idempotent; use only at export boundaries."""
    return np.clip(np.asarray(image, dtype=DTYPE), 0.0, 1.0)


@dataclass
class SamplePair:
    """A matting sample: foreground, background, alpha and (optionally) the
    composited image. All rasters share dimensions."""

    fg: np.ndarray
    bg: np.ndarray
    alpha: np.ndarray
    composite: Optional[np.ndarray] = None

    def __post_init__(self):
        self.fg = as_image(self.fg)
        self.bg = as_image(self.bg)
        self.alpha = as_alpha(self.alpha)
        _check_dims(self.fg, self.bg, self.alpha)
        if self.composite is not None:
            self.composite = as_image(self.composite)

    @property
    def height(self) -> int:
        return self.alpha.shape[0]

    @property
    def width(self) -> int:
        return self.alpha.shape[1]

    def residual(self) -> Optional[float]:
        if self.composite is None:
            return None
        return composition_residual(self.composite, self.fg, self.bg, self.alpha)

    def check(self, tol: float = RESIDUAL_TOL) -> "SamplePair":
        """Verify the stored composite satisfies the composition equation."""
        r = self.residual()
        if r is not None and r > tol:
            raise ValueError(f"composite violates composition equation: residual {r:.3g} > {tol:.3g}")
        return self
