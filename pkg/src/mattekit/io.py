"""PNG import/export and quantization helpers.

Color images are 8-bit RGB PNG. Alpha mattes are grayscale PNG, 8-bit
or 16-bit (16-bit preferred for ground truth); integer codes map to
[0, 1] by division by the max code value. Trimaps are 8-bit PNG with
exactly the codes {0, 128, 255}.
"""

from __future__ import annotations

import io as _io
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from .core import DTYPE, as_alpha, as_image, clamp_for_export

PathLike = Union[str, Path]

TRIMAP_CODES = (0, 128, 255)


def quantize_image(image: np.ndarray) -> np.ndarray:
    """Clamp and round a float color raster to 8-bit codes."""
    return np.rint(clamp_for_export(as_image(image)) * 255.0).astype(np.uint8)


def quantize_alpha(alpha: np.ndarray, bits: int = 16) -> np.ndarray:
    """Clamp and round an alpha matte to 8- or 16-bit codes."""
    if bits not in (8, 16):
        raise ValueError(f"alpha bit depth must be 8 or 16, got {bits}")
    alpha = np.clip(as_alpha(alpha, check_range=False), 0.0, 1.0)
    maxcode = (1 << bits) - 1
    codes = np.rint(alpha.astype(np.float64) * maxcode)
    return codes.astype(np.uint8 if bits == 8 else np.uint16)


def dequantize(codes: np.ndarray) -> np.ndarray:
    """Map integer codes back to float32 [0, 1] by dividing by the max code."""
    maxcode = np.iinfo(codes.dtype).max
    return (codes.astype(np.float64) / maxcode).astype(DTYPE)


def load_image(path: PathLike) -> np.ndarray:
    """Read an RGB PNG/JPEG into a (H, W, 3) float32 raster in [0, 1]."""
    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return (np.asarray(rgb, dtype=np.float64) / 255.0).astype(DTYPE)


def save_image(path: PathLike, image: np.ndarray) -> None:
    """Write a color raster as 8-bit RGB PNG (clamped at export)."""
    Image.fromarray(quantize_image(image), mode="RGB").save(path, format="PNG")


def load_alpha(path: PathLike) -> np.ndarray:
    """Read an 8- or 16-bit grayscale PNG into a float32 alpha matte."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim == 3:  # RGB-coded matte: channels must agree
        if not (arr[..., 0] == arr[..., 1]).all() or not (arr[..., 1] == arr[..., 2]).all():
            raise ValueError(f"{path}: color image is not a grayscale matte")
        arr = arr[..., 0]
    if arr.dtype == np.uint8 or arr.dtype == np.uint16:
        return dequantize(arr)
    if arr.dtype == np.int32:  # Pillow mode "I" for some 16-bit files
        return (arr.astype(np.float64) / 65535.0).astype(DTYPE)
    raise ValueError(f"{path}: unsupported alpha dtype {arr.dtype}")


def save_alpha(path: PathLike, alpha: np.ndarray, bits: int = 16) -> None:
    """Write an alpha matte as grayscale PNG at the given bit depth."""
    Image.fromarray(quantize_alpha(alpha, bits=bits)).save(path, format="PNG")


def load_trimap(path: PathLike) -> np.ndarray:
    """Read a ternary trimap PNG; rejects any code outside {0, 128, 255}."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    bad = ~np.isin(arr, TRIMAP_CODES)
    if bad.any():
        values = sorted(np.unique(arr[bad]).tolist())
        raise ValueError(f"{path}: trimap contains non-ternary codes {values}")
    return arr.astype(np.uint8)


def save_trimap(path: PathLike, trimap: np.ndarray) -> None:
    trimap = np.asarray(trimap)
    if trimap.dtype != np.uint8 or not np.isin(trimap, TRIMAP_CODES).all():
        raise ValueError("trimap must be uint8 with codes {0, 128, 255}")
    Image.fromarray(trimap, mode="L").save(path, format="PNG")


def jpeg_roundtrip(image: np.ndarray, quality: int) -> np.ndarray:
    """Encode a raster as baseline JPEG at the given quality and decode it back.

    The input is projected to clamped 8-bit first; output is float32 in [0, 1].
    Accepts (H, W, 3) color or (H, W) grayscale rasters.
    """
    if not 1 <= int(quality) <= 100:
        raise ValueError(f"jpeg quality must be in [1, 100], got {quality}")
    arr = np.asarray(image)
    if arr.ndim == 3:
        codes = quantize_image(arr)
        im = Image.fromarray(codes, mode="RGB")
    elif arr.ndim == 2:
        codes = quantize_alpha(arr, bits=8)
        im = Image.fromarray(codes, mode="L")
    else:
        raise ValueError(f"expected 2-D or 3-D raster, got shape {arr.shape}")
    buf = _io.BytesIO()
    im.save(buf, format="JPEG", quality=int(quality))
    buf.seek(0)
    with Image.open(buf) as back:
        decoded = np.asarray(back)
    return (decoded.astype(np.float64) / 255.0).astype(DTYPE)
