"""DIM-style dataset assembly and the on-the-fly training-patch pipeline.

A manifest pairs each foreground/alpha with sampled backgrounds (100 per
foreground for train, 20 for test by default). Training patches are
generated per index: basic augmentation (foreground affine, optional
foreground combination, random resize, unknown-band-biased 512 crop,
foreground jitter), then the strong-augmentation strategy, then trimap
synthesis. Every random draw comes from a stream derived from
(run seed, sample index), so output is bit-identical for any worker
count and any scheduling order.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterator, Optional

import cv2
import numpy as np

from . import strategy as sa
from .core import DTYPE, SamplePair
from .io import (
    dequantize,
    load_alpha,
    load_image,
    quantize_alpha,
    quantize_image,
    save_alpha,
    save_image,
    save_trimap,
)
from .strategy import SaPolicy
from .trimap import EPS, generate_trimap

log = logging.getLogger(__name__)

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


@dataclass(frozen=True)
class DatasetRules:
    train_bg_per_fg: int = 100
    test_bg_per_fg: int = 20

    def per_fg(self, split: str) -> int:
        return self.train_bg_per_fg if split == "train" else self.test_bg_per_fg


@dataclass(frozen=True)
class ManifestEntry:
    fg_path: str
    alpha_path: str
    bg_path: str
    split: str
    seed: int


@dataclass
class Manifest:
    seed: int
    rules: DatasetRules
    entries: list[ManifestEntry] = field(default_factory=list)

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "rules": asdict(self.rules),
            "entries": [asdict(e) for e in self.entries],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))

    @classmethod
    def load(cls, path) -> "Manifest":
        raw = json.loads(Path(path).read_text())
        return cls(
            seed=raw["seed"],
            rules=DatasetRules(**raw["rules"]),
            entries=[ManifestEntry(**e) for e in raw["entries"]],
        )


def _entry_seed(seed: int, split: str, index: int) -> int:
    digest = hashlib.blake2b(f"{seed}:{split}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


def _list_images(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS)


def build_manifest(
    fg_dir,
    alpha_dir,
    bg_dir,
    rules: DatasetRules = DatasetRules(),
    seed: int = 0,
    split: str = "train",
) -> Manifest:
    """Pair stem-matched foreground/alpha files with sampled backgrounds.

    Backgrounds are drawn per foreground without replacement while the
    pool allows; a pool smaller than the per-foreground quota falls back
    to replacement with a warning. Deterministic for a given seed.
    """
    fg_dir, alpha_dir, bg_dir = Path(fg_dir), Path(alpha_dir), Path(bg_dir)
    for d in (fg_dir, alpha_dir, bg_dir):
        if not d.is_dir():
            raise FileNotFoundError(f"dataset directory missing: {d}")
    fgs = _list_images(fg_dir)
    alphas = {p.stem: p for p in _list_images(alpha_dir)}
    bgs = _list_images(bg_dir)
    if not fgs or not bgs:
        raise ValueError(f"empty dataset directory: {fg_dir if not fgs else bg_dir}")

    unmatched = [p.name for p in fgs if p.stem not in alphas]
    if unmatched:
        raise ValueError(f"foregrounds without alpha mattes: {', '.join(unmatched)}")

    per_fg = rules.per_fg(split)
    replace = per_fg > len(bgs)
    if replace:
        warnings.warn(
            f"background pool ({len(bgs)}) smaller than {per_fg} per foreground; "
            "sampling with replacement"
        )

    entries: list[ManifestEntry] = []
    for fg_index, fg in enumerate(fgs):
        rng = np.random.default_rng(np.random.SeedSequence([seed, fg_index]))
        picks = rng.choice(len(bgs), size=per_fg, replace=replace)
        for bg_index in picks:
            entries.append(
                ManifestEntry(
                    fg_path=str(fg),
                    alpha_path=str(alphas[fg.stem]),
                    bg_path=str(bgs[int(bg_index)]),
                    split=split,
                    seed=_entry_seed(seed, split, len(entries)),
                )
            )
    seen = {e.seed for e in entries}
    if len(seen) != len(entries):  # blake2b collision: effectively unreachable
        raise RuntimeError("entry seed collision; change the manifest seed")
    return Manifest(seed=seed, rules=rules, entries=entries)


@dataclass(frozen=True)
class PipelineOptions:
    patch_size: int = 512
    p_combine: float = 0.5
    rotation_deg: float = 30.0
    scale_range: tuple[float, float] = (0.75, 1.25)
    shear_deg: float = 10.0
    flip_prob: float = 0.5
    resize_range: tuple[float, float] = (0.5, 1.5)
    jitter_hue: float = 0.04
    jitter_saturation: float = 0.15
    jitter_value: float = 0.15
    trimap_d: tuple[int, int] = (1, 30)
    alpha_bits: int = 16


@lru_cache(maxsize=48)
def _cached_rgb(path: str) -> np.ndarray:
    return load_image(path)


@lru_cache(maxsize=48)
def _cached_alpha(path: str) -> np.ndarray:
    return load_alpha(path)


def _affine_matrix(
    h: int, w: int, angle_deg: float, scale: float, shear_deg: float, flip: bool
) -> np.ndarray:
    t = math.radians(angle_deg)
    sh = math.tan(math.radians(shear_deg))
    rot = np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])
    shear = np.array([[1.0, sh], [0.0, 1.0]])
    flip_m = np.array([[-1.0 if flip else 1.0, 0.0], [0.0, 1.0]])
    lin = scale * rot @ shear @ flip_m
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    offset = np.array([cx, cy]) - lin @ np.array([cx, cy])
    return np.array(
        [[lin[0, 0], lin[0, 1], offset[0]], [lin[1, 0], lin[1, 1], offset[1]]]
    )


def _random_affine(
    fg: np.ndarray, alpha: np.ndarray, rng: np.random.Generator, opt: PipelineOptions
) -> tuple[np.ndarray, np.ndarray]:
    angle = rng.uniform(-opt.rotation_deg, opt.rotation_deg)
    scale = rng.uniform(*opt.scale_range)
    shear = rng.uniform(-opt.shear_deg, opt.shear_deg)
    flip = rng.random() < opt.flip_prob
    h, w = alpha.shape
    m = _affine_matrix(h, w, angle, scale, shear, flip)
    fg_out = cv2.warpAffine(
        fg, m, (w, h), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REPLICATE
    )
    alpha_out = cv2.warpAffine(
        alpha, m, (w, h), flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT, borderValue=0.0,
    )
    return fg_out, np.clip(alpha_out, 0.0, 1.0)


def _combine_foregrounds(
    fg: np.ndarray,
    alpha: np.ndarray,
    fg2: np.ndarray,
    alpha2: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    # alpha_new = 1 - (1 - a1)(1 - a2); color is the matching over-composite.
    h, w = alpha.shape
    if alpha2.shape != (h, w):
        fg2 = cv2.resize(fg2, (w, h), interpolation=cv2.INTER_LINEAR)
        alpha2 = np.clip(cv2.resize(alpha2, (w, h), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)
    a1 = alpha[:, :, None]
    a2 = alpha2[:, :, None]
    alpha_new = 1.0 - (1.0 - a1) * (1.0 - a2)
    color = (a1 * fg + (1.0 - a1) * a2 * fg2) / np.maximum(alpha_new, 1e-6)
    return color.astype(DTYPE), alpha_new[:, :, 0].astype(DTYPE)


def _random_resize(
    fg: np.ndarray, alpha: np.ndarray, rng: np.random.Generator, opt: PipelineOptions
) -> tuple[np.ndarray, np.ndarray]:
    s = rng.uniform(*opt.resize_range)
    h, w = alpha.shape
    if s * min(h, w) < opt.patch_size:  # resize floor: crop must stay possible
        s = opt.patch_size / min(h, w)
    nh = max(opt.patch_size, int(round(h * s)))
    nw = max(opt.patch_size, int(round(w * s)))
    fg_out = cv2.resize(fg, (nw, nh), interpolation=cv2.INTER_LINEAR)
    alpha_out = np.clip(cv2.resize(alpha, (nw, nh), interpolation=cv2.INTER_LINEAR), 0.0, 1.0)
    return fg_out, alpha_out


def _crop_near_unknown(
    fg: np.ndarray, alpha: np.ndarray, rng: np.random.Generator, patch: int
) -> tuple[np.ndarray, np.ndarray]:
    h, w = alpha.shape
    band = (alpha > EPS) & (alpha < 1.0 - EPS)
    flat = np.flatnonzero(band)
    if flat.size:
        pick = int(flat[int(rng.integers(flat.size))])
        cy, cx = divmod(pick, w)
    else:
        cy = int(rng.integers(h))
        cx = int(rng.integers(w))
    y0 = int(np.clip(cy - patch // 2, 0, h - patch))
    x0 = int(np.clip(cx - patch // 2, 0, w - patch))
    fg_out = np.ascontiguousarray(fg[y0 : y0 + patch, x0 : x0 + patch])
    alpha_out = np.ascontiguousarray(alpha[y0 : y0 + patch, x0 : x0 + patch])
    return fg_out, alpha_out


def _jitter_fg(fg: np.ndarray, rng: np.random.Generator, opt: PipelineOptions) -> np.ndarray:
    from matplotlib.colors import hsv_to_rgb, rgb_to_hsv

    dh = rng.uniform(-opt.jitter_hue, opt.jitter_hue)
    ds = rng.uniform(1.0 - opt.jitter_saturation, 1.0 + opt.jitter_saturation)
    dv = rng.uniform(1.0 - opt.jitter_value, 1.0 + opt.jitter_value)
    hsv = rgb_to_hsv(np.clip(fg, 0.0, 1.0))
    hsv[..., 0] = np.mod(hsv[..., 0] + dh, 1.0)
    hsv[..., 1] = np.clip(hsv[..., 1] * ds, 0.0, 1.0)
    hsv[..., 2] = np.clip(hsv[..., 2] * dv, 0.0, 1.0)
    return hsv_to_rgb(hsv).astype(DTYPE)


def _prepare_background(
    entry: ManifestEntry, rng: np.random.Generator, opt: PipelineOptions
) -> np.ndarray:
    bg = _cached_rgb(entry.bg_path)
    s = rng.uniform(*opt.resize_range)
    h, w = bg.shape[:2]
    if s * min(h, w) < opt.patch_size:
        s = opt.patch_size / min(h, w)
    nh = max(opt.patch_size, int(round(h * s)))
    nw = max(opt.patch_size, int(round(w * s)))
    bg = cv2.resize(bg, (nw, nh), interpolation=cv2.INTER_LINEAR)
    y0 = int(rng.integers(nh - opt.patch_size + 1))
    x0 = int(rng.integers(nw - opt.patch_size + 1))
    return np.ascontiguousarray(bg[y0 : y0 + opt.patch_size, x0 : x0 + opt.patch_size])


def basic_pipeline(
    entry: ManifestEntry,
    rng: np.random.Generator,
    options: PipelineOptions = PipelineOptions(),
    manifest: Optional[Manifest] = None,
) -> SamplePair:
    """Pre-strong-augmentation patch: affine, optional foreground merge,
    resize, unknown-biased crop, foreground jitter, background crop.

    Returns a SamplePair without a composite; composition happens in the
    strategy step so augmentation can precede it.
    """
    fg = _cached_rgb(entry.fg_path)
    alpha = _cached_alpha(entry.alpha_path)
    if fg.shape[:2] != alpha.shape:
        raise ValueError(
            f"{entry.fg_path}: foreground {fg.shape[:2]} does not match alpha {alpha.shape}"
        )

    fg, alpha = _random_affine(fg, alpha, rng, options)

    combine = rng.random() < options.p_combine
    if combine and manifest is not None:
        pool = manifest.split(entry.split) or manifest.entries
        other = pool[int(rng.integers(len(pool)))]
        fg2 = _cached_rgb(other.fg_path)
        alpha2 = _cached_alpha(other.alpha_path)
        fg, alpha = _combine_foregrounds(fg, alpha, fg2, alpha2)

    fg, alpha = _random_resize(fg, alpha, rng, options)
    fg, alpha = _crop_near_unknown(fg, alpha, rng, options.patch_size)
    fg = _jitter_fg(fg, rng, options)
    bg = _prepare_background(entry, rng, options)
    return SamplePair(fg=fg, bg=bg, alpha=alpha)


@dataclass
class TrainingPatch:
    """One emitted 512x512 patch in export domain: float values are exactly
    the PNG code values divided by the max code, so arrays round-trip
    bit-identically through the files."""

    index: int
    image: np.ndarray  # (H, W, 3) float32
    alpha: np.ndarray  # (H, W) float32
    trimap: np.ndarray  # (H, W) uint8 {0, 128, 255}
    record: dict


@dataclass
class EmitStats:
    requested: int = 0
    emitted: int = 0
    skipped_no_hook: int = 0
    skipped_hook_error: int = 0
    failures: list = field(default_factory=list)
    strategy_counts: dict = field(default_factory=dict)

    def count(self, strategy_name: str) -> None:
        self.strategy_counts[strategy_name] = self.strategy_counts.get(strategy_name, 0) + 1

    @property
    def shortfall(self) -> int:
        return self.requested - self.emitted

    def summary(self) -> str:
        lines = [f"emitted {self.emitted}/{self.requested} patches"]
        total = max(1, sum(self.strategy_counts.values()))
        for name in ("AF", "AFB", "AC", "none"):
            n = self.strategy_counts.get(name, 0)
            lines.append(f"  {name:<5} {n:>7}  ({n / total:.3f})")
        if self.skipped_no_hook:
            lines.append(f"  skipped (pseudo label, no hook): {self.skipped_no_hook}")
        if self.skipped_hook_error:
            lines.append(f"  skipped (hook error): {self.skipped_hook_error}")
        if self.failures:
            lines.append(f"  failures: {len(self.failures)}")
        return "\n".join(lines)


def _build_payload(
    manifest: Manifest,
    policy: SaPolicy,
    seed: int,
    index: int,
    options: PipelineOptions,
) -> tuple:
    """Full per-index pipeline; returns export-quantized arrays + record."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, index]))
    entries = manifest.split("train") or manifest.entries
    entry = entries[int(rng.integers(len(entries)))]
    sample = basic_pipeline(entry, rng, options, manifest)
    decision = sa.sample_decision(policy, rng)
    out, record = sa.augment_sample(sample, decision, rng, policy)
    tri_lo, tri_hi = options.trimap_d
    d = int(rng.integers(tri_lo, tri_hi + 1))
    tri = generate_trimap(out.alpha, d)
    rec = {
        "index": index,
        "run_seed": seed,
        "fg": entry.fg_path,
        "bg": entry.bg_path,
        "trimap_d": d,
        **record.to_dict(),
    }
    img_q = quantize_image(out.composite)
    alpha_q = quantize_alpha(out.alpha, bits=options.alpha_bits)
    return (index, img_q, alpha_q, tri, rec, record.pseudo_label_pending)


_WORKER_STATE: Optional[tuple] = None


def _init_worker(manifest: Manifest, policy: SaPolicy, seed: int, options: PipelineOptions):
    global _WORKER_STATE
    cv2.setNumThreads(1)
    _WORKER_STATE = (manifest, policy, seed, options)


def _emit_chunk(bounds: tuple[int, int]) -> list[tuple]:
    manifest, policy, seed, options = _WORKER_STATE
    payloads = []
    for index in range(bounds[0], bounds[1]):
        try:
            payloads.append(_build_payload(manifest, policy, seed, index, options))
        except Exception:
            payloads.append((index, None, None, None, traceback.format_exc(), False))
    return payloads


def _finalize(
    payload: tuple,
    hook,
    options: PipelineOptions,
    stats: EmitStats,
) -> Optional[TrainingPatch]:
    index, img_q, alpha_q, tri, rec, pending = payload
    if img_q is None:
        stats.failures.append((index, rec))
        log.error("patch %d failed:\n%s", index, rec)
        return None
    if pending:
        if hook is None:
            stats.skipped_no_hook += 1
            log.warning("patch %d needs a pseudo label but no hook is registered; skipped", index)
            return None
        try:
            pseudo = hook(dequantize(img_q), tri)
        except Exception as exc:
            stats.skipped_hook_error += 1
            log.error("patch %d: pseudo-label hook raised %r; skipped", index, exc)
            return None
        pseudo = np.asarray(pseudo, dtype=DTYPE)
        if pseudo.shape != tri.shape:
            stats.skipped_hook_error += 1
            log.error(
                "patch %d: hook returned shape %s, expected %s; skipped",
                index, pseudo.shape, tri.shape,
            )
            return None
        alpha_q = quantize_alpha(np.clip(pseudo, 0.0, 1.0), bits=options.alpha_bits)
        rec = {**rec, "pseudo_label_applied": True}
    stats.emitted += 1
    stats.count(rec["strategy"])
    return TrainingPatch(
        index=index,
        image=dequantize(img_q),
        alpha=dequantize(alpha_q),
        trimap=tri,
        record=rec,
    )


def iter_patches(
    manifest: Manifest,
    policy: SaPolicy,
    seed: int,
    n: int,
    workers: int = 1,
    options: PipelineOptions = PipelineOptions(),
    hook=None,
    stats: Optional[EmitStats] = None,
) -> Iterator[TrainingPatch]:
    """Stream patches for indices 0..n-1 in order.

    Workers only affect scheduling: every patch is a pure function of
    (seed, index). Pseudo-label hooks run serialized in the calling
    process, never inside workers.
    """
    if not manifest.entries:
        raise ValueError("manifest has no entries")
    if stats is None:
        stats = EmitStats()
    stats.requested += n
    if hook is None:
        hook = sa.registered_pseudo_label_hook()

    if workers <= 1:
        for index in range(n):
            try:
                payload = _build_payload(manifest, policy, seed, index, options)
            except Exception:
                payload = (index, None, None, None, traceback.format_exc(), False)
            patch = _finalize(payload, hook, options, stats)
            if patch is not None:
                yield patch
        return

    chunk = max(1, min(16, n // (workers * 4) or 1))
    bounds = [(start, min(start + chunk, n)) for start in range(0, n, chunk)]
    with ProcessPoolExecutor(
        max_workers=workers,
        initializer=_init_worker,
        initargs=(manifest, policy, seed, options),
    ) as pool:
        for payloads in pool.map(_emit_chunk, bounds):
            for payload in payloads:
                patch = _finalize(payload, hook, options, stats)
                if patch is not None:
                    yield patch


def emit_batch(
    manifest: Manifest,
    policy: SaPolicy,
    seed: int,
    n: int,
    workers: int = 1,
    options: PipelineOptions = PipelineOptions(),
    hook=None,
) -> tuple[list[TrainingPatch], EmitStats]:
    """Materialize n patches (minus skips); see iter_patches for streaming."""
    stats = EmitStats()
    patches = list(
        iter_patches(manifest, policy, seed, n, workers=workers, options=options, hook=hook, stats=stats)
    )
    if stats.shortfall:
        log.warning("emit_batch shortfall: %d of %d patches skipped", stats.shortfall, n)
    return patches, stats


def write_patch(out_dir, patch: TrainingPatch, alpha_bits: int = 16) -> dict:
    """Write one patch as PNG triple; returns the file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{patch.index:06d}"
    paths = {
        "img": out_dir / f"{stem}_img.png",
        "alpha": out_dir / f"{stem}_alpha.png",
        "trimap": out_dir / f"{stem}_trimap.png",
    }
    save_image(paths["img"], patch.image)
    save_alpha(paths["alpha"], patch.alpha, bits=alpha_bits)
    save_trimap(paths["trimap"], patch.trimap)
    return {k: str(v) for k, v in paths.items()}


def compose_entry(entry: ManifestEntry) -> tuple[np.ndarray, np.ndarray]:
    """Full-resolution composite for a manifest entry (test-set protocol).

    The background is scaled to cover the foreground and cropped at an
    entry-seeded random position; returns (image, alpha) floats.
    """
    rng = np.random.default_rng(np.random.SeedSequence([entry.seed]))
    fg = load_image(entry.fg_path)
    alpha = load_alpha(entry.alpha_path)
    if fg.shape[:2] != alpha.shape:
        raise ValueError(
            f"{entry.fg_path}: foreground {fg.shape[:2]} does not match alpha {alpha.shape}"
        )
    bg = load_image(entry.bg_path)
    fh, fw = alpha.shape
    bh, bw = bg.shape[:2]
    s = max(fh / bh, fw / bw)
    nh, nw = max(fh, int(math.ceil(bh * s))), max(fw, int(math.ceil(bw * s)))
    if (nh, nw) != (bh, bw):
        bg = cv2.resize(bg, (nw, nh), interpolation=cv2.INTER_LINEAR)
    y0 = int(rng.integers(nh - fh + 1))
    x0 = int(rng.integers(nw - fw + 1))
    bg = np.ascontiguousarray(bg[y0 : y0 + fh, x0 : x0 + fw])
    from .core import composite as _composite

    return _composite(fg, bg, alpha), alpha
