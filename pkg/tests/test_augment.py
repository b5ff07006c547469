import numpy as np
import pytest

from mattekit.augment import (
    LINEAR,
    LINEAR_KINDS,
    NONLINEAR,
    NONLINEAR_KINDS,
    REGION,
    REGION_KINDS,
    GroundTruthPolicyError,
    UnrealizedOpError,
    apply,
    apply_to_alpha,
    gaussian_kernel1d,
    make_op,
    realize,
    registry,
)
from mattekit.core import composite, composition_residual

from .conftest import step_edge_sample
from . import reference


def test_registry_contents():
    reg = registry()
    assert len(reg[LINEAR]) == 11
    assert len(reg[NONLINEAR]) == 3
    assert len(reg[REGION]) == 2
    assert "salt_and_pepper" in reg[LINEAR]
    assert "histogram_equalization" in reg[NONLINEAR]
    assert set(reg[REGION]) == {"gaussian_blur", "jpeg_compression"}


def test_channel_inversion_is_affine():
    op = realize(make_op("channel_inversion"), np.random.default_rng(0), (4, 5))
    assert np.all(op.linear.gain == -1.0)
    assert np.all(op.linear.offset == 1.0)
    assert op.linear.channel_perm == (0, 1, 2)
    img = np.random.default_rng(1).random((4, 5, 3), dtype=np.float32)
    assert np.allclose(apply(op, img), 1.0 - img, atol=1e-7)


def test_brightness_fixed_offset():
    op = realize(make_op("brightness", offset=(0.1, 0.1)), np.random.default_rng(0), (3, 3))
    assert np.all(op.linear.gain == 1.0)
    assert np.all(op.linear.offset == np.float32(0.1))


def test_identity_linear_contrast_is_bit_exact(rng):
    op = realize(make_op("linear_contrast", gain=(1.0, 1.0)), rng, (6, 7))
    img = np.random.default_rng(3).random((6, 7, 3), dtype=np.float32)
    assert np.array_equal(apply(op, img), img)


def test_realize_is_deterministic():
    op1 = realize(make_op("gaussian_noise"), np.random.default_rng(42), (8, 8))
    op2 = realize(make_op("gaussian_noise"), np.random.default_rng(42), (8, 8))
    assert np.array_equal(op1.linear.offset, op2.linear.offset)


def test_realized_apply_is_reproducible(rng):
    img = rng.random((16, 16, 3), dtype=np.float32)
    for kind in LINEAR_KINDS + NONLINEAR_KINDS + REGION_KINDS:
        op = realize(make_op(kind), np.random.default_rng(7), (16, 16), reference=img)
        assert np.array_equal(apply(op, img), apply(op, img)), kind


def test_realize_guards():
    op = realize(make_op("brightness"), np.random.default_rng(0), (4, 4))
    with pytest.raises(ValueError, match="already realized"):
        realize(op, np.random.default_rng(0), (4, 4))
    with pytest.raises(ValueError, match="positive"):
        realize(make_op("brightness"), np.random.default_rng(0), (0, 4))
    with pytest.raises(UnrealizedOpError):
        apply(make_op("brightness"), np.zeros((4, 4, 3), np.float32))
    with pytest.raises(ValueError, match="dims"):
        apply(op, np.zeros((5, 5, 3), np.float32))


def test_salt_and_pepper_sets_hit_pixels_to_binary(rng):
    op = realize(make_op("salt_and_pepper", rate=(0.3, 0.3)), rng, (32, 32))
    img = np.full((32, 32, 3), 0.5, np.float32)
    out = apply(op, img)
    hit = op.linear.gain[:, :, 0] == 0.0
    assert hit.any()
    assert np.isin(out[hit], [0.0, 1.0]).all()
    assert np.all(out[~hit] == 0.5)


def test_gaussian_blur_impulse_reproduces_kernel():
    sigma = 1.0
    op = realize(make_op("gaussian_blur", sigma=(sigma, sigma)), np.random.default_rng(0), (31, 31))
    img = np.zeros((31, 31, 3), np.float32)
    img[15, 15, :] = 1.0
    out = apply(op, img)
    k1d = gaussian_kernel1d(sigma)
    expected = np.outer(k1d, k1d)
    r = len(k1d) // 2
    window = out[15 - r : 15 + r + 1, 15 - r : 15 + r + 1, 0]
    assert np.abs(window - expected).max() < 1e-7
    outside = out[:, :, 0].copy()
    outside[15 - r : 15 + r + 1, 15 - r : 15 + r + 1] = 0.0
    assert np.all(outside == 0.0)


def test_blur_matches_naive_convolution(rng):
    sigma = 1.3
    op = realize(make_op("gaussian_blur", sigma=(sigma, sigma)), rng, (12, 15))
    img = np.random.default_rng(5).random((12, 15, 3), dtype=np.float32)
    out = apply(op, img)
    for c in range(3):
        expected = reference.gaussian_blur(img[:, :, c], sigma)
        assert np.abs(out[:, :, c] - expected).max() < 1e-6


def test_apply_to_alpha_blur_on_strip_matches_hand_convolution():
    sigma = 0.8
    op = realize(make_op("gaussian_blur", sigma=(sigma, sigma)), np.random.default_rng(0), (1, 8))
    alpha = np.array([[0, 0, 0, 0, 1, 1, 1, 1]], np.float32)
    out = apply_to_alpha(op, alpha)
    expected = reference.gaussian_blur(alpha, sigma)  # 1-row: vertical taps replicate
    assert np.abs(out - expected).max() < 1e-6


def test_apply_to_alpha_blur_constant_is_unchanged(rng):
    op = realize(make_op("gaussian_blur"), rng, (10, 10))
    alpha = np.full((10, 10), 0.6, np.float32)
    assert np.abs(apply_to_alpha(op, alpha) - 0.6).max() < 1e-6


def test_apply_to_alpha_jpeg_q100_nearly_lossless(rng):
    op = realize(make_op("jpeg_compression", quality=(100, 100)), rng, (24, 24))
    alpha = np.clip(np.random.default_rng(2).random((24, 24)), 0, 1).astype(np.float32)
    out = apply_to_alpha(op, alpha)
    assert np.abs(out - alpha).max() <= 2.0 / 255.0 + 1e-6


def test_apply_to_alpha_rejects_pixelwise_ops(rng):
    alpha = rng.random((8, 8), dtype=np.float32)
    for kind in ("brightness", "gamma_contrast"):
        op = realize(make_op(kind), np.random.default_rng(0), (8, 8))
        with pytest.raises(GroundTruthPolicyError):
            apply_to_alpha(op, alpha)


@pytest.mark.parametrize("kind", LINEAR_KINDS)
def test_linear_ops_commute_with_composition(kind):
    # The core guarantee: augment-then-compose equals compose-then-augment.
    rng = np.random.default_rng(99)
    for trial in range(20):
        fg = rng.random((32, 32, 3), dtype=np.float32)
        bg = rng.random((32, 32, 3), dtype=np.float32)
        alpha = rng.random((32, 32), dtype=np.float32)
        image = composite(fg, bg, alpha)
        op = realize(make_op(kind), rng, (32, 32), reference=image)
        lhs = apply(op, image)
        rhs = composite(apply(op, fg), apply(op, bg), alpha)
        assert np.abs(lhs - rhs).max() <= 1e-5, f"{kind} trial {trial}"


@pytest.mark.parametrize("kind", NONLINEAR_KINDS)
def test_nonlinear_ops_stay_in_range(kind, rng):
    img = rng.random((16, 16, 3), dtype=np.float32)
    op = realize(make_op(kind), np.random.default_rng(11), (16, 16))
    out = apply(op, img)
    assert out.shape == img.shape
    assert out.min() >= -1e-6 and out.max() <= 1.0 + 1e-6


def test_gamma_one_is_identity(rng):
    op = realize(make_op("gamma_contrast", gamma=(1.0, 1.0)), rng, (8, 8))
    img = np.random.default_rng(4).random((8, 8, 3), dtype=np.float32)
    assert np.allclose(apply(op, img), img, atol=1e-7)


def test_region_blur_breaks_composition_and_alpha_fix_helps():
    fg, bg, alpha = step_edge_sample()
    image = composite(fg, bg, alpha)
    op = realize(make_op("gaussian_blur", sigma=(2.5, 2.5)), np.random.default_rng(0), (64, 64))
    blurred = apply(op, image)
    residual_unmodified = composition_residual(blurred, fg, bg, alpha)
    residual_modified = composition_residual(blurred, fg, bg, apply_to_alpha(op, alpha))
    assert residual_unmodified > 0.05
    assert residual_modified < residual_unmodified


def test_poisson_noise_uses_reference_signal():
    dark = np.zeros((16, 16, 3), np.float32)
    bright = np.ones((16, 16, 3), np.float32)
    op_dark = realize(make_op("poisson_noise"), np.random.default_rng(5), (16, 16), reference=dark)
    op_bright = realize(make_op("poisson_noise"), np.random.default_rng(5), (16, 16), reference=bright)
    # noise magnitude grows with the signal level it was drawn against
    assert np.abs(op_bright.linear.offset).mean() > np.abs(op_dark.linear.offset).mean()


def test_channel_shuffle_permutes_channels(rng):
    op = realize(make_op("channel_shuffle"), np.random.default_rng(1), (4, 4))
    img = np.random.default_rng(2).random((4, 4, 3), dtype=np.float32)
    out = apply(op, img)
    assert np.array_equal(out, img[:, :, op.linear.channel_perm])
