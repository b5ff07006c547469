"""Trimap synthesis from alpha mattes and the coarse-to-fine dilation sweeps.

Construction erodes the certain-foreground and certain-background masks
by a disk of radius ``d`` and labels everything else unknown. Eroding the
certain masks (rather than dilating the fractional band) guarantees that
labels never contradict the ground truth for any d: surviving FG pixels
always have alpha >= 1 - eps and surviving BG pixels alpha <= eps, while
every fractional pixel lands in the unknown band.
"""

from __future__ import annotations

from typing import Mapping, Optional

import cv2
import numpy as np

from .core import as_alpha

BG = 0
UNKNOWN = 128
FG = 255

# "pure" tolerance matching 8-bit ground-truth quantization
EPS = 1.0 / 255.0

# Evaluation sweep: label -> inclusive integer range of dilation distances.
SWEEP_RANGES: dict[str, tuple[int, int]] = {
    "20": (11, 20),
    "30": (21, 30),
    "40": (31, 40),
    "50": (41, 50),
}


def disk(radius: int) -> np.ndarray:
    """Discrete disk structuring element: offsets with dy^2 + dx^2 <= r^2."""
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (yy * yy + xx * xx <= r * r).astype(np.uint8)


def generate_trimap(alpha: np.ndarray, d: int) -> np.ndarray:
    """Ternary trimap from alpha with certainty eroded by disk radius ``d``.

    Pixels outside the frame count as certain, so a matte with no boundary
    (e.g. all-foreground) stays fully labeled instead of eroding away.
    """
    alpha = as_alpha(alpha)
    if d < 1:
        raise ValueError(f"dilation distance must be >= 1, got {d}")
    kernel = disk(int(d))
    fg_certain = (alpha >= 1.0 - EPS).astype(np.uint8)
    bg_certain = (alpha <= EPS).astype(np.uint8)
    # cv2.erode's default border value is +inf for erosion: out-of-frame
    # pixels never erode the certain masks.
    fg = cv2.erode(fg_certain, kernel)
    bg = cv2.erode(bg_certain, kernel)
    tri = np.full(alpha.shape, UNKNOWN, dtype=np.uint8)
    tri[fg.astype(bool)] = FG
    tri[bg.astype(bool)] = BG
    return tri


def draw_trimap(
    alpha: np.ndarray, rng: np.random.Generator, d_range: tuple[int, int]
) -> tuple[np.ndarray, int]:
    """Trimap with d drawn uniformly from the inclusive integer range."""
    lo, hi = int(d_range[0]), int(d_range[1])
    d = int(rng.integers(lo, hi + 1))
    return generate_trimap(alpha, d), d


def sweep_sets(
    alpha: np.ndarray,
    rng: np.random.Generator,
    ranges: Optional[Mapping[str, tuple[int, int]]] = None,
) -> dict[str, tuple[np.ndarray, int]]:
    """One trimap per sweep set, coarse to fine: {label: (trimap, drawn_d)}.

    Defaults to the four sets "20"/"30"/"40"/"50" with d drawn from
    [11, 20], [21, 30], [31, 40], [41, 50] respectively.
    """
    if ranges is None:
        ranges = SWEEP_RANGES
    out: dict[str, tuple[np.ndarray, int]] = {}
    for label in sorted(ranges, key=lambda s: ranges[s][0]):
        out[label] = draw_trimap(alpha, rng, ranges[label])
    return out


def unknown_mask(trimap: np.ndarray) -> np.ndarray:
    return np.asarray(trimap) == UNKNOWN
