"""SAD / MSE / Grad / Conn matting errors, restricted to the trimap's
unknown region.

Constants follow the conventional matting evaluation setup: SAD scaled
by 1/1000, Grad uses first-order Gaussian-derivative filters at scale
1.4 with squared differences and a 1e-3 scale, Conn uses threshold step
0.1, theta 0.15, 4-connectivity and a 1e-3 scale. All of them are
configurable, and the Grad/Conn implementations are pinned by
brute-force oracles in the test suite so any change is visible.

Metrics are computed in float64 regardless of the pipeline's float32
rasters.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import io as mio
from .trimap import UNKNOWN

CSV_COLUMNS = ("image_id", "sad", "mse", "grad", "conn", "unknown_px")


@dataclass(frozen=True)
class MetricConstants:
    grad_sigma: float = 1.4
    grad_q: int = 2
    conn_step: float = 0.1
    conn_theta: float = 0.15
    connectivity: int = 4  # 4 or 8
    whole_image: bool = False  # evaluate everywhere instead of unknown-only


@dataclass
class MetricReport:
    image_id: str
    sad: float = math.nan
    mse: float = math.nan
    grad: float = math.nan
    conn: float = math.nan
    unknown_px: int = 0
    error: Optional[str] = None

    def row(self) -> list:
        return [self.image_id, self.sad, self.mse, self.grad, self.conn, self.unknown_px]


def _region(pred: np.ndarray, gt: np.ndarray, tri: np.ndarray, whole: bool) -> np.ndarray:
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    tri = np.asarray(tri)
    if pred.shape != gt.shape or pred.shape != tri.shape:
        raise ValueError(
            f"pred {pred.shape}, gt {gt.shape}, trimap {tri.shape} do not share dimensions"
        )
    return np.ones(tri.shape, bool) if whole else (tri == UNKNOWN)


def sad(pred: np.ndarray, gt: np.ndarray, tri: np.ndarray, whole_image: bool = False) -> float:
    """Sum of absolute differences over the unknown region, in units of 1e3."""
    mask = _region(pred, gt, tri, whole_image)
    if not mask.any():
        return math.nan  # undefined, not zero
    diff = np.abs(pred.astype(np.float64) - gt.astype(np.float64))
    return float(diff[mask].sum() / 1000.0)


def mse(pred: np.ndarray, gt: np.ndarray, tri: np.ndarray, whole_image: bool = False) -> float:
    """Mean squared error over the unknown region."""
    mask = _region(pred, gt, tri, whole_image)
    if not mask.any():
        return math.nan
    diff = pred.astype(np.float64) - gt.astype(np.float64)
    return float(np.mean(diff[mask] ** 2))


def gauss_smooth_kernel1d(sigma: float) -> np.ndarray:
    """Sampled Gaussian truncated at 3 sigma, unit sum."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def gauss_deriv_kernel1d(sigma: float) -> np.ndarray:
    """First-order Gaussian derivative, normalized so a unit ramp yields
    unit gradient under correlation."""
    radius = int(math.ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    d = x * g
    return d / (x * x * g).sum()


def gradient_magnitude(arr: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian-derivative gradient magnitude at scale sigma (replicated edges)."""
    arr = np.asarray(arr, dtype=np.float64)
    radius = int(math.ceil(3.0 * sigma))
    if min(arr.shape) <= radius:
        raise ValueError(
            f"raster {arr.shape} degenerate for kernel radius {radius}"
        )
    smooth = gauss_smooth_kernel1d(sigma)
    deriv = gauss_deriv_kernel1d(sigma)
    gx = ndimage.correlate1d(arr, smooth, axis=0, mode="nearest")
    gx = ndimage.correlate1d(gx, deriv, axis=1, mode="nearest")
    gy = ndimage.correlate1d(arr, smooth, axis=1, mode="nearest")
    gy = ndimage.correlate1d(gy, deriv, axis=0, mode="nearest")
    return np.sqrt(gx * gx + gy * gy)


def grad_error(
    pred: np.ndarray,
    gt: np.ndarray,
    tri: np.ndarray,
    sigma: float = 1.4,
    q: int = 2,
    whole_image: bool = False,
) -> float:
    """Gradient error: sum over unknown of |g_pred - g_gt|^q, scaled by 1e-3."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    mask = _region(pred, gt, tri, whole_image)
    if not mask.any():
        return math.nan
    g_pred = gradient_magnitude(pred, sigma)
    g_gt = gradient_magnitude(gt, sigma)
    err = np.abs(g_pred - g_gt) ** q
    return float(err[mask].sum() / 1000.0)


def _label(mask: np.ndarray, connectivity: int):
    if connectivity == 4:
        structure = ndimage.generate_binary_structure(2, 1)
    elif connectivity == 8:
        structure = ndimage.generate_binary_structure(2, 2)
    else:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    return ndimage.label(mask, structure=structure)


def _largest_component(mask: np.ndarray, connectivity: int) -> Optional[np.ndarray]:
    """Largest connected component; ties broken by earliest pixel in raster
    order so the choice is deterministic and matches the test oracle."""
    labels, n = _label(mask, connectivity)
    if n == 0:
        return None
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = sizes.max()
    candidates = np.flatnonzero(sizes == best)
    if len(candidates) > 1:
        flat = labels.ravel()
        first = {int(lab): int(np.argmax(flat == lab)) for lab in candidates}
        winner = min(candidates, key=lambda lab: first[int(lab)])
    else:
        winner = candidates[0]
    return labels == winner


def connectivity_levels(
    pred: np.ndarray, gt: np.ndarray, step: float = 0.1, connectivity: int = 4
) -> Optional[np.ndarray]:
    """Per-pixel highest threshold at which the pixel stays connected to the
    largest region that is fully opaque in both maps.

    Binarizing both maps at threshold t gives the joint map J_t; a pixel's
    level is the largest t for which it is connected (through J_t) to the
    source region. At t = 0 the joint map covers everything, so every pixel
    has level >= 0. Returns None when no pixel is fully opaque in both maps
    (the connectivity source is undefined).
    """
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if not 0.0 < step < 1.0:
        raise ValueError(f"step must be in (0, 1), got {step}")
    omega = _largest_component((pred >= 1.0) & (gt >= 1.0), connectivity)
    if omega is None:
        return None
    levels = np.zeros(pred.shape, dtype=np.float64)
    n_steps = int(math.floor(1.0 / step + 1e-9))
    for k in range(1, n_steps + 1):
        t = k * step
        joint = (pred >= t) & (gt >= t)
        labels, n = _label(joint, connectivity)
        if n == 0:
            break
        omega_ids = np.unique(labels[omega])
        omega_ids = omega_ids[omega_ids > 0]
        reach = np.isin(labels, omega_ids)
        if not reach.any():
            break
        levels[reach] = t  # J_t shrinks with t, so assignments only grow
    return levels


def conn_error(
    pred: np.ndarray,
    gt: np.ndarray,
    tri: np.ndarray,
    step: float = 0.1,
    theta: float = 0.15,
    connectivity: int = 4,
    whole_image: bool = False,
) -> float:
    """Connectivity error: sum over unknown of |phi_pred - phi_gt|, scaled 1e-3.

    phi = 1 - d * [d >= theta] with d = value - connectivity level; NaN when
    the connectivity source (a region fully opaque in both maps) is empty.
    """
    mask = _region(pred, gt, tri, whole_image)
    if not mask.any():
        return math.nan
    levels = connectivity_levels(pred, gt, step=step, connectivity=connectivity)
    if levels is None:
        return math.nan
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    d_pred = pred - levels
    d_gt = gt - levels
    phi_pred = 1.0 - d_pred * (d_pred >= theta)
    phi_gt = 1.0 - d_gt * (d_gt >= theta)
    return float(np.abs(phi_pred - phi_gt)[mask].sum() / 1000.0)


def evaluate_pair(
    image_id: str,
    pred: np.ndarray,
    gt: np.ndarray,
    tri: np.ndarray,
    constants: MetricConstants = MetricConstants(),
) -> MetricReport:
    """All four metrics for one prediction/ground-truth/trimap triple."""
    c = constants
    unknown = int((np.asarray(tri) == UNKNOWN).sum())
    return MetricReport(
        image_id=image_id,
        sad=sad(pred, gt, tri, c.whole_image),
        mse=mse(pred, gt, tri, c.whole_image),
        grad=grad_error(pred, gt, tri, sigma=c.grad_sigma, q=c.grad_q, whole_image=c.whole_image),
        conn=conn_error(
            pred, gt, tri,
            step=c.conn_step, theta=c.conn_theta,
            connectivity=c.connectivity, whole_image=c.whole_image,
        ),
        unknown_px=unknown,
    )


def _png_stems(directory: Path) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.glob("*.png"))}


@dataclass
class SetEvaluation:
    reports: list[MetricReport] = field(default_factory=list)
    mean: Optional[MetricReport] = None
    missing: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.missing and all(r.error is None for r in self.reports)


def evaluate_set(
    pred_dir, gt_dir, tri_dir, constants: MetricConstants = MetricConstants()
) -> SetEvaluation:
    """Evaluate every stem-matched (pred, gt, trimap) PNG triple.

    Missing counterpart files are collected in ``missing``; per-image
    failures (e.g. dimension mismatches) become report entries with an
    error message while the run continues. The MEAN row averages the
    successful reports, ignoring NaNs per metric.
    """
    pred_dir, gt_dir, tri_dir = Path(pred_dir), Path(gt_dir), Path(tri_dir)
    preds = _png_stems(pred_dir)
    gts = _png_stems(gt_dir)
    tris = _png_stems(tri_dir)

    out = SetEvaluation()
    stems = sorted(set(preds) | set(gts))
    for stem in stems:
        lacking = [
            name
            for name, have in (("pred", stem in preds), ("gt", stem in gts), ("trimap", stem in tris))
            if not have
        ]
        if lacking:
            out.missing.append(f"{stem} (no {'/'.join(lacking)})")

    for stem in sorted(set(preds) & set(gts) & set(tris)):
        try:
            pred = mio.load_alpha(preds[stem])
            gt = mio.load_alpha(gts[stem])
            tri = mio.load_trimap(tris[stem])
            out.reports.append(evaluate_pair(stem, pred, gt, tri, constants))
        except (ValueError, OSError) as exc:
            out.reports.append(MetricReport(image_id=stem, error=str(exc)))

    good = [r for r in out.reports if r.error is None]
    if good:
        import warnings as _warnings

        with np.errstate(invalid="ignore"), _warnings.catch_warnings():
            _warnings.filterwarnings("ignore", message="Mean of empty slice")
            out.mean = MetricReport(
                image_id="MEAN",
                sad=float(np.nanmean([r.sad for r in good])),
                mse=float(np.nanmean([r.mse for r in good])),
                grad=float(np.nanmean([r.grad for r in good])),
                conn=float(np.nanmean([r.conn for r in good])),
                unknown_px=int(round(float(np.mean([r.unknown_px for r in good])))),
            )
    return out


def write_report_csv(path, evaluation: SetEvaluation) -> None:
    """Per-image rows plus a MEAN aggregate row, fixed column order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for report in evaluation.reports:
            if report.error is None:
                writer.writerow(report.row())
            else:
                writer.writerow([report.image_id, "error", "error", "error", "error", report.error])
        if evaluation.mean is not None:
            writer.writerow(evaluation.mean.row())


def read_mean_row(path) -> dict:
    """MEAN row of a report CSV as {metric: float}."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError(f"{path}: unexpected report schema {rows[0] if rows else '(empty)'}")
    for row in rows[1:]:
        if row[0] == "MEAN":
            return {
                "sad": float(row[1]),
                "mse": float(row[2]),
                "grad": float(row[3]),
                "conn": float(row[4]),
                "unknown_px": int(row[5]),
            }
    raise ValueError(f"{path}: no MEAN row")
