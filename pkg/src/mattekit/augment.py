"""The three augmentation families and their frozen (realized) forms.

Linear pixel-wise ops are realized as an explicit per-pixel affine
transform: a gain map, an offset map and a channel permutation. Because
alpha is a per-pixel scalar shared by all channels, any such transform
commutes with alpha composition, so the same realized op can be replayed
on the composite, the foreground and the background and must agree.
Nonlinear pixel-wise ops apply a pointwise curve; region-wise ops mix
multiple pixels (blur, lossy compression) and therefore break the
composition equation, which is why only they support ``apply_to_alpha``.

All randomness is drawn at ``realize`` time from a caller-owned
generator; a realized op is immutable and re-applies bit-identically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import cv2
import numpy as np
from scipy import ndimage

from .core import DTYPE, as_alpha, as_image
from .io import jpeg_roundtrip

LINEAR = "linear_pixelwise"
NONLINEAR = "nonlinear_pixelwise"
REGION = "region_wise"

LINEAR_KINDS = (
    "linear_contrast",
    "brightness",
    "channel_inversion",
    "channel_shuffle",
    "gaussian_noise",
    "poisson_noise",
    "random_dropout",
    "cloud_overlay",
    "snow_overlay",
    "multiply",
    "salt_and_pepper",
)
NONLINEAR_KINDS = ("gamma_contrast", "hue_saturation_add", "histogram_equalization")
REGION_KINDS = ("gaussian_blur", "jpeg_compression")

# Sampling ranges for op parameters. The ranges keep augmented images
# plausible; every one of them can be overridden per op instance.
DEFAULT_RANGES: dict[str, dict] = {
    "linear_contrast": {"gain": (0.5, 1.5)},
    "brightness": {"offset": (-0.2, 0.2)},
    "channel_inversion": {},
    "channel_shuffle": {},
    "gaussian_noise": {"sigma": (0.0, 0.1)},
    "poisson_noise": {"lam": (30.0, 120.0)},
    "random_dropout": {"rate": (0.0, 0.05)},
    "cloud_overlay": {"amplitude": (0.05, 0.2), "cell_px": 32},
    "snow_overlay": {"density": (0.001, 0.01), "strength": (0.3, 0.8)},
    "multiply": {"gain": (0.7, 1.3)},
    "salt_and_pepper": {"rate": (0.0, 0.02)},
    "gamma_contrast": {"gamma": (0.5, 2.0)},
    "hue_saturation_add": {"hue": (-0.05, 0.05), "saturation": (-0.2, 0.2)},
    "histogram_equalization": {"bins": 256},
    "gaussian_blur": {"sigma": (0.5, 3.0)},
    "jpeg_compression": {"quality": (40, 95)},
}


class UnrealizedOpError(RuntimeError):
    """Op applied before its randomness was frozen."""


class GroundTruthPolicyError(ValueError):
    """apply_to_alpha called for an op whose ground truth must stay unmodified."""


def category_of(kind: str) -> str:
    if kind in LINEAR_KINDS:
        return LINEAR
    if kind in NONLINEAR_KINDS:
        return NONLINEAR
    if kind in REGION_KINDS:
        return REGION
    raise KeyError(f"unknown augmentation kind {kind!r}")


def registry() -> dict[str, tuple[str, ...]]:
    """Augmentation kinds grouped by category."""
    return {LINEAR: LINEAR_KINDS, NONLINEAR: NONLINEAR_KINDS, REGION: REGION_KINDS}


@dataclass(frozen=True)
class LinearPixelwiseParams:
    """Realized per-pixel affine transform out = perm(gain * x + offset).

    gain/offset are (H, W, 3) float32 maps matching the target raster;
    channel_perm permutes the output channels (identity allowed).
    """

    gain: np.ndarray
    offset: np.ndarray
    channel_perm: tuple[int, int, int] = (0, 1, 2)


@dataclass
class AugmentationOp:
    """One augmentation, unrealized (ranges only) or realized (params frozen)."""

    kind: str
    category: str = ""
    ranges: dict = field(default_factory=dict)
    params: Optional[dict] = None
    linear: Optional[LinearPixelwiseParams] = None
    dims: Optional[tuple[int, int]] = None  # (height, width)

    def __post_init__(self):
        if not self.category:
            self.category = category_of(self.kind)
        elif self.category != category_of(self.kind):
            raise ValueError(f"kind {self.kind!r} is not in category {self.category!r}")
        merged = dict(DEFAULT_RANGES[self.kind])
        merged.update(self.ranges)
        self.ranges = merged

    @property
    def is_realized(self) -> bool:
        return self.params is not None


def make_op(kind: str, **ranges) -> AugmentationOp:
    """Build an unrealized op, optionally overriding its sampling ranges."""
    return AugmentationOp(kind=kind, ranges=ranges)


def _uniform(rng: np.random.Generator, lo_hi) -> float:
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi))


def _broadcast_maps(gain, offset, h: int, w: int) -> LinearPixelwiseParams:
    g = np.broadcast_to(np.asarray(gain, dtype=DTYPE), (h, w, 3)).copy()
    b = np.broadcast_to(np.asarray(offset, dtype=DTYPE), (h, w, 3)).copy()
    return LinearPixelwiseParams(gain=g, offset=b)


def _cloud_field(rng: np.random.Generator, h: int, w: int, cell_px: int) -> np.ndarray:
    # Low-frequency value noise: coarse grid in [-1, 1] upsampled bilinearly.
    gh = max(2, int(math.ceil(h / cell_px)) + 1)
    gw = max(2, int(math.ceil(w / cell_px)) + 1)
    grid = rng.uniform(-1.0, 1.0, size=(gh, gw)).astype(np.float32)
    return cv2.resize(grid, (w, h), interpolation=cv2.INTER_LINEAR)


def realize(
    op: AugmentationOp,
    rng: np.random.Generator,
    dims: tuple[int, int],
    reference: Optional[np.ndarray] = None,
) -> AugmentationOp:
    """Freeze all random draws of ``op`` for a raster of the given (H, W).

    ``reference`` feeds signal-dependent noise (poisson); once drawn the
    op is a fixed transform, so it can be replayed on any raster of the
    same dimensions.
    """
    if op.is_realized:
        raise ValueError(f"op {op.kind!r} is already realized")
    h, w = int(dims[0]), int(dims[1])
    if h <= 0 or w <= 0:
        raise ValueError(f"dims must be positive, got {dims}")

    r = op.ranges
    params: dict = {}
    linear: Optional[LinearPixelwiseParams] = None
    kind = op.kind

    if kind == "linear_contrast":
        a = _uniform(rng, r["gain"])
        params = {"gain": a}
        linear = _broadcast_maps(a, (1.0 - a) * 0.5, h, w)  # pivot at mid-gray
    elif kind == "brightness":
        b = _uniform(rng, r["offset"])
        params = {"offset": b}
        linear = _broadcast_maps(1.0, b, h, w)
    elif kind == "channel_inversion":
        params = {}
        linear = _broadcast_maps(-1.0, 1.0, h, w)
    elif kind == "channel_shuffle":
        perm = tuple(int(c) for c in rng.permutation(3))
        params = {"perm": perm}
        base = _broadcast_maps(1.0, 0.0, h, w)
        linear = LinearPixelwiseParams(base.gain, base.offset, channel_perm=perm)
    elif kind == "gaussian_noise":
        sigma = _uniform(rng, r["sigma"])
        params = {"sigma": sigma}
        noise = rng.normal(0.0, sigma, size=(h, w, 3)).astype(DTYPE) if sigma > 0 else np.zeros((h, w, 3), DTYPE)
        linear = LinearPixelwiseParams(np.ones((h, w, 3), DTYPE), noise)
    elif kind == "poisson_noise":
        lam = _uniform(rng, r["lam"])
        params = {"lam": lam}
        if reference is not None:
            level = np.clip(as_image(reference), 0.0, 1.0).astype(np.float64)
        else:
            level = np.full((h, w, 3), 0.5)
        expected = lam * level
        noise = ((rng.poisson(expected) - expected) / lam).astype(DTYPE)
        linear = LinearPixelwiseParams(np.ones((h, w, 3), DTYPE), noise)
    elif kind == "random_dropout":
        rate = _uniform(rng, r["rate"])
        params = {"rate": rate}
        dropped = rng.random((h, w)) < rate
        gain = np.ones((h, w, 3), DTYPE)
        gain[dropped] = 0.0
        linear = LinearPixelwiseParams(gain, np.zeros((h, w, 3), DTYPE))
    elif kind == "cloud_overlay":
        amp = _uniform(rng, r["amplitude"])
        params = {"amplitude": amp}
        cloud = (amp * _cloud_field(rng, h, w, int(r["cell_px"]))).astype(DTYPE)
        linear = LinearPixelwiseParams(
            np.ones((h, w, 3), DTYPE), np.repeat(cloud[:, :, None], 3, axis=2)
        )
    elif kind == "snow_overlay":
        density = _uniform(rng, r["density"])
        strength = r["strength"]
        params = {"density": density}
        flakes = rng.random((h, w)) < density
        offset = np.zeros((h, w), DTYPE)
        offset[flakes] = rng.uniform(strength[0], strength[1], size=int(flakes.sum())).astype(DTYPE)
        linear = LinearPixelwiseParams(
            np.ones((h, w, 3), DTYPE), np.repeat(offset[:, :, None], 3, axis=2)
        )
    elif kind == "multiply":
        a = _uniform(rng, r["gain"])
        params = {"gain": a}
        linear = _broadcast_maps(a, 0.0, h, w)
    elif kind == "salt_and_pepper":
        rate = _uniform(rng, r["rate"])
        params = {"rate": rate}
        hit = rng.random((h, w)) < rate
        salt = rng.random((h, w)) < 0.5
        gain = np.ones((h, w, 3), DTYPE)
        offset = np.zeros((h, w, 3), DTYPE)
        gain[hit] = 0.0
        offset[hit & salt] = 1.0  # pepper stays 0
        linear = LinearPixelwiseParams(gain, offset)
    elif kind == "gamma_contrast":
        params = {"gamma": _uniform(rng, r["gamma"])}
    elif kind == "hue_saturation_add":
        params = {
            "hue": _uniform(rng, r["hue"]),
            "saturation": _uniform(rng, r["saturation"]),
        }
    elif kind == "histogram_equalization":
        params = {"bins": int(r["bins"])}
    elif kind == "gaussian_blur":
        params = {"sigma": _uniform(rng, r["sigma"])}
    elif kind == "jpeg_compression":
        qlo, qhi = r["quality"]
        params = {"quality": int(rng.integers(int(qlo), int(qhi) + 1))}
    else:  # pragma: no cover - guarded by category_of
        raise KeyError(kind)

    return AugmentationOp(
        kind=op.kind, category=op.category, ranges=dict(op.ranges),
        params=params, linear=linear, dims=(h, w),
    )


def gaussian_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian, truncated at 3 sigma, normalized to unit sum."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _blur(arr: np.ndarray, sigma: float) -> np.ndarray:
    kernel = gaussian_kernel1d(sigma)
    out = arr.astype(np.float64, copy=False)
    out = ndimage.correlate1d(out, kernel, axis=0, mode="nearest")
    out = ndimage.correlate1d(out, kernel, axis=1, mode="nearest")
    return out.astype(DTYPE)


def _require_realized(op: AugmentationOp, arr: np.ndarray) -> None:
    if not op.is_realized:
        raise UnrealizedOpError(f"op {op.kind!r} must be realized before apply")
    if op.dims != arr.shape[:2]:
        raise ValueError(f"op realized for dims {op.dims}, raster has {arr.shape[:2]}")


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    from matplotlib.colors import rgb_to_hsv

    return rgb_to_hsv(np.clip(rgb, 0.0, 1.0))


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    from matplotlib.colors import hsv_to_rgb

    return hsv_to_rgb(hsv)


def apply(op: AugmentationOp, image: np.ndarray) -> np.ndarray:
    """Apply a realized op to a color raster.

    Linear ops run unclamped; nonlinear curves operate on the domain they
    are defined on (gamma clips negatives, HSV/equalization clip to [0, 1]);
    jpeg goes through the clamped 8-bit projection by nature.
    """
    image = as_image(image)
    _require_realized(op, image)

    if op.category == LINEAR:
        p = op.linear
        out = p.gain * image + p.offset
        if p.channel_perm != (0, 1, 2):
            out = out[:, :, p.channel_perm]
        return out.astype(DTYPE, copy=False)

    kind = op.kind
    if kind == "gamma_contrast":
        return np.power(np.clip(image, 0.0, None), DTYPE(op.params["gamma"])).astype(DTYPE)
    if kind == "hue_saturation_add":
        hsv = _rgb_to_hsv(image)
        hsv[..., 0] = np.mod(hsv[..., 0] + op.params["hue"], 1.0)
        hsv[..., 1] = np.clip(hsv[..., 1] + op.params["saturation"], 0.0, 1.0)
        return _hsv_to_rgb(hsv).astype(DTYPE)
    if kind == "histogram_equalization":
        bins = op.params["bins"]
        codes = np.rint(np.clip(image, 0.0, 1.0) * (bins - 1)).astype(np.int64)
        out = np.empty_like(image)
        for c in range(3):
            hist = np.bincount(codes[..., c].ravel(), minlength=bins)
            cdf = np.cumsum(hist).astype(np.float64)
            cdf /= cdf[-1]
            out[..., c] = cdf[codes[..., c]].astype(DTYPE)
        return out
    if kind == "gaussian_blur":
        return _blur(image, op.params["sigma"])
    if kind == "jpeg_compression":
        return jpeg_roundtrip(image, op.params["quality"])
    raise KeyError(kind)  # pragma: no cover


def apply_to_alpha(op: AugmentationOp, alpha: np.ndarray) -> np.ndarray:
    """Replay a region-wise op's spatial transform on the alpha matte.

    Pixel-wise ops are rejected: their ground truth must stay unmodified
    (linear ones commute with composition; nonlinear ones go through the
    pseudo-label path instead). Output is re-clamped to [0, 1].
    """
    alpha = as_alpha(alpha)
    if op.category != REGION:
        raise GroundTruthPolicyError(
            f"{op.kind!r} is {op.category}; alpha ground truth must not be modified"
        )
    _require_realized(op, alpha)
    if op.kind == "gaussian_blur":
        out = _blur(alpha, op.params["sigma"])
    else:  # jpeg_compression: round-trip the matte as an 8-bit grayscale image
        out = jpeg_roundtrip(alpha, op.params["quality"])
    return np.clip(out, 0.0, 1.0).astype(DTYPE)
