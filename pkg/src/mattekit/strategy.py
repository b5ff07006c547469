"""The strong-augmentation policy engine.

Per sample one of three strategies fires (or none): augment the
foreground alone (AF), augment foreground and background individually
(AFB), or augment the composited image (AC). AF/AFB happen before
composition, so the alpha ground truth always stays valid. AC happens
after composition: linear pixel-wise ops still preserve the composition
equation (the same affine transform lands on both F and B), region-wise
ops require the alpha to be modified by the same spatial transform or a
pseudo label, and nonlinear ops always require a pseudo label.

Defaults follow the schedule: P(AF) = P(AFB) = 0.25, AC fires with
probability 0.1 when neither happened, categories are drawn
(linear, nonlinear, region) = (0.8, 0.1, 0.1) inside AF/AFB and
(0.2, 0.4, 0.4) inside AC.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np

from . import augment
from .core import SamplePair, composite, composition_residual
from .augment import (
    LINEAR,
    NONLINEAR,
    REGION,
    AugmentationOp,
    apply,
    apply_to_alpha,
    make_op,
    realize,
)

AF = "AF"
AFB = "AFB"
AC = "AC"
NONE = "none"

KEEP = "keep"
MODIFY_ALPHA = "modify_alpha"
REQUEST_PSEUDO_LABEL = "request_pseudo_label"

_CATEGORIES = (LINEAR, NONLINEAR, REGION)

# Pseudo-label hook: (image, trimap) -> alpha. Registered at pipeline
# level; invoked by the patch pipeline, never inside worker processes.
PseudoLabelHook = Callable[[np.ndarray, np.ndarray], np.ndarray]
_pseudo_label_hook: Optional[PseudoLabelHook] = None


def register_pseudo_label_hook(hook: Optional[PseudoLabelHook]) -> None:
    """Install (or clear, with None) the pseudo-label callback."""
    global _pseudo_label_hook
    _pseudo_label_hook = hook


def registered_pseudo_label_hook() -> Optional[PseudoLabelHook]:
    return _pseudo_label_hook


@dataclass(frozen=True)
class SaPolicy:
    p_af: float = 0.25
    p_afb: float = 0.25
    p_ac_given_neither: float = 0.1
    category_probs_af_afb: tuple[float, float, float] = (0.8, 0.1, 0.1)
    category_probs_ac: tuple[float, float, float] = (0.2, 0.4, 0.4)
    # Region-wise ops under AC default to deterministic alpha modification;
    # the pseudo-label route is opt-in and needs a registered hook.
    ac_region_action: str = MODIFY_ALPHA
    # Extra transform on the composite before it reaches the hook
    # (none | rot90 | channel_shuffle | random). Identity by default so an
    # identity hook reproduces the plain AC sample.
    ac_pseudo_input_transform: str = "none"
    # Per-kind overrides of the op sampling ranges, e.g.
    # {"gaussian_blur": {"sigma": (1.0, 2.0)}}.
    op_ranges: dict = field(default_factory=dict)

    def validate(self) -> "SaPolicy":
        probs = [self.p_af, self.p_afb, self.p_ac_given_neither]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"strategy probabilities must be in [0, 1]: {probs}")
        if self.p_af + self.p_afb > 1.0 + 1e-9:
            raise ValueError(f"p_af + p_afb must be <= 1, got {self.p_af + self.p_afb}")
        for name, triple in (
            ("category_probs_af_afb", self.category_probs_af_afb),
            ("category_probs_ac", self.category_probs_ac),
        ):
            if len(triple) != 3 or any(p < 0 for p in triple):
                raise ValueError(f"{name} must be three nonnegative probabilities")
            if not math.isclose(sum(triple), 1.0, abs_tol=1e-9):
                raise ValueError(f"{name} must sum to 1, got {sum(triple)}")
        if self.ac_region_action not in (MODIFY_ALPHA, REQUEST_PSEUDO_LABEL):
            raise ValueError(f"bad ac_region_action {self.ac_region_action!r}")
        if self.ac_pseudo_input_transform not in ("none", "rot90", "channel_shuffle", "random"):
            raise ValueError(f"bad ac_pseudo_input_transform {self.ac_pseudo_input_transform!r}")
        for kind in self.op_ranges:
            try:
                augment.category_of(kind)
            except KeyError as exc:
                raise ValueError(f"op_ranges: {exc.args[0]}") from exc
        return self


@dataclass
class StrategyDecision:
    strategy: str
    ops: list[AugmentationOp] = field(default_factory=list)
    gt_action: str = KEEP


@dataclass
class AugmentationRecord:
    """Everything needed to audit or replay one augmented sample."""

    strategy: str
    gt_action: str
    ops: list[dict] = field(default_factory=list)
    pseudo_label_pending: bool = False
    pseudo_label_applied: bool = False
    pseudo_input_transform: Optional[list] = None
    residual_keep: Optional[float] = None
    residual_unmodified: Optional[float] = None
    residual_modified: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _draw_category(rng: np.random.Generator, triple) -> str:
    u = rng.random()
    acc = 0.0
    for category, p in zip(_CATEGORIES, triple):
        acc += p
        if u < acc:
            return category
    return _CATEGORIES[-1]


def _draw_op(rng: np.random.Generator, triple, op_ranges: dict) -> AugmentationOp:
    category = _draw_category(rng, triple)
    kinds = augment.registry()[category]
    kind = kinds[int(rng.integers(len(kinds)))]
    return make_op(kind, **op_ranges.get(kind, {}))


def sample_decision(policy: SaPolicy, rng: np.random.Generator) -> StrategyDecision:
    """Draw which strategy fires and its (unrealized) ops.

    Under defaults: P(AF) = P(AFB) = 0.25, P(AC) = 0.5 * 0.1 = 0.05,
    P(none) = 0.45. Ops stay unrealized; dimensions bind at apply time.
    """
    policy.validate()
    u = rng.random()
    if u < policy.p_af:
        op = _draw_op(rng, policy.category_probs_af_afb, policy.op_ranges)
        return StrategyDecision(AF, [op], KEEP)
    if u < policy.p_af + policy.p_afb:
        op_fg = _draw_op(rng, policy.category_probs_af_afb, policy.op_ranges)
        op_bg = _draw_op(rng, policy.category_probs_af_afb, policy.op_ranges)
        return StrategyDecision(AFB, [op_fg, op_bg], KEEP)
    if rng.random() < policy.p_ac_given_neither:
        op = _draw_op(rng, policy.category_probs_ac, policy.op_ranges)
        if op.category == LINEAR:
            action = KEEP
        elif op.category == REGION:
            action = policy.ac_region_action
        else:
            action = REQUEST_PSEUDO_LABEL
        return StrategyDecision(AC, [op], action)
    return StrategyDecision(NONE, [], KEEP)


def _op_summary(op: AugmentationOp, target: str) -> dict:
    params = {
        k: (v if not isinstance(v, tuple) else list(v)) for k, v in (op.params or {}).items()
    }
    return {"target": target, "kind": op.kind, "category": op.category, "params": params}


def _pseudo_input_transform(policy: SaPolicy, rng: np.random.Generator) -> Optional[list]:
    mode = policy.ac_pseudo_input_transform
    if mode == "random":
        mode = "rot90" if rng.random() < 0.5 else "channel_shuffle"
    if mode == "rot90":
        return ["rot90", int(rng.integers(1, 4))]
    if mode == "channel_shuffle":
        return ["channel_shuffle", [int(c) for c in rng.permutation(3)]]
    return None


def apply_input_transform(transform: Optional[list], image: np.ndarray) -> np.ndarray:
    if transform is None:
        return image
    name, arg = transform
    if name == "rot90":
        return np.ascontiguousarray(np.rot90(image, k=arg))
    if name == "channel_shuffle":
        return np.ascontiguousarray(image[:, :, arg])
    raise ValueError(f"unknown input transform {name!r}")


def apply_spatial_transform(transform: Optional[list], raster: np.ndarray) -> np.ndarray:
    """Spatial part of an input transform, for alpha/trimap alignment."""
    if transform is not None and transform[0] == "rot90":
        return np.ascontiguousarray(np.rot90(raster, k=transform[1]))
    return raster


def augment_sample(
    sample: SamplePair,
    decision: StrategyDecision,
    rng: np.random.Generator,
    policy: Optional[SaPolicy] = None,
) -> tuple[SamplePair, AugmentationRecord]:
    """Execute a strategy decision on a (fg, bg, alpha) sample.

    AF/AFB augment before composition, AC after. The returned sample
    always carries a composite; its fg/bg reflect the transform where the
    composition equation is preserved (AF/AFB always, AC for linear ops).
    Samples flagged ``request_pseudo_label`` keep the original alpha and
    must be resolved by the pipeline's hook before use.
    """
    dims = (sample.height, sample.width)
    alpha = sample.alpha
    record = AugmentationRecord(strategy=decision.strategy, gt_action=decision.gt_action)

    if decision.strategy == NONE:
        image = composite(sample.fg, sample.bg, alpha)
        out = SamplePair(sample.fg, sample.bg, alpha, image)
        record.residual_keep = composition_residual(image, out.fg, out.bg, alpha)
        return out, record

    if decision.strategy == AF:
        op = realize(decision.ops[0], rng, dims, reference=sample.fg)
        fg = apply(op, sample.fg)
        image = composite(fg, sample.bg, alpha)
        record.ops.append(_op_summary(op, "fg"))
        record.residual_keep = composition_residual(image, fg, sample.bg, alpha)
        return SamplePair(fg, sample.bg, alpha, image), record

    if decision.strategy == AFB:
        op_fg = realize(decision.ops[0], rng, dims, reference=sample.fg)
        op_bg = realize(decision.ops[1], rng, dims, reference=sample.bg)
        fg = apply(op_fg, sample.fg)
        bg = apply(op_bg, sample.bg)
        image = composite(fg, bg, alpha)
        record.ops.append(_op_summary(op_fg, "fg"))
        record.ops.append(_op_summary(op_bg, "bg"))
        record.residual_keep = composition_residual(image, fg, bg, alpha)
        return SamplePair(fg, bg, alpha, image), record

    if decision.strategy != AC:
        raise ValueError(f"unknown strategy {decision.strategy!r}")

    base = composite(sample.fg, sample.bg, alpha)
    op = realize(decision.ops[0], rng, dims, reference=base)
    image = apply(op, base)
    record.ops.append(_op_summary(op, "composite"))

    if decision.gt_action == KEEP:  # linear op: replay on fg and bg
        fg = apply(op, sample.fg)
        bg = apply(op, sample.bg)
        record.residual_keep = composition_residual(image, fg, bg, alpha)
        return SamplePair(fg, bg, alpha, image), record

    if decision.gt_action == MODIFY_ALPHA:
        modified = apply_to_alpha(op, alpha)
        record.residual_unmodified = composition_residual(image, sample.fg, sample.bg, alpha)
        record.residual_modified = composition_residual(image, sample.fg, sample.bg, modified)
        return SamplePair(sample.fg, sample.bg, modified, image), record

    # request_pseudo_label: alpha untouched; flag for the pipeline hook.
    record.pseudo_label_pending = True
    transform = _pseudo_input_transform(policy, rng) if policy is not None else None
    record.pseudo_input_transform = transform
    if transform is not None:
        image = apply_input_transform(transform, image)
        fg = apply_input_transform(transform, sample.fg)
        bg = apply_input_transform(transform, sample.bg)
        alpha = apply_spatial_transform(transform, alpha)
    else:
        fg, bg = sample.fg, sample.bg
    return SamplePair(fg, bg, alpha, image), record
