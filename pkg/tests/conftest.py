import numpy as np
import pytest

from mattekit.io import save_alpha, save_image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def soft_disk_alpha(h, w, cy, cx, radius, feather=6.0):
    """Matte with a solid core, a soft ring and pure background."""
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
    alpha = np.clip((radius - dist) / feather + 1.0, 0.0, 1.0)
    return alpha.astype(np.float32)


def step_edge_sample(h=64, w=64, edge=None, fg_val=0.9, bg_val=0.1):
    """Hard vertical edge: the canonical sample that region ops destroy."""
    if edge is None:
        edge = w // 2
    fg = np.full((h, w, 3), fg_val, np.float32)
    bg = np.full((h, w, 3), bg_val, np.float32)
    alpha = np.zeros((h, w), np.float32)
    alpha[:, edge:] = 1.0
    return fg, bg, alpha


def make_corpus(root, n_fg=3, n_bg=4, fg_size=(240, 320), bg_size=(300, 400), seed=0):
    """Tiny on-disk dataset: fg/, alpha/, bg/ directories of PNGs."""
    gen = np.random.default_rng(seed)
    fg_dir, alpha_dir, bg_dir = root / "fg", root / "alpha", root / "bg"
    for d in (fg_dir, alpha_dir, bg_dir):
        d.mkdir(parents=True, exist_ok=True)
    h, w = fg_size
    for i in range(n_fg):
        ramp = np.linspace(0.15, 0.85, w, dtype=np.float32)
        fg = np.empty((h, w, 3), np.float32)
        for c in range(3):
            fg[:, :, c] = np.roll(ramp, i * 17 + c * 5)[None, :]
        fg += gen.normal(0, 0.02, fg.shape).astype(np.float32)
        save_image(fg_dir / f"fg_{i:02d}.png", np.clip(fg, 0, 1))
        alpha = soft_disk_alpha(
            h, w,
            cy=h // 2 + int(gen.integers(-h // 6, h // 6)),
            cx=w // 2 + int(gen.integers(-w // 6, w // 6)),
            radius=min(h, w) // 3,
        )
        save_alpha(alpha_dir / f"fg_{i:02d}.png", alpha, bits=8)
    bh, bw = bg_size
    for i in range(n_bg):
        yy, xx = np.mgrid[0:bh, 0:bw].astype(np.float32)
        bg = np.stack(
            [
                0.5 + 0.4 * np.sin(xx / (7.0 + i) + yy / 13.0),
                0.5 + 0.4 * np.cos(xx / 11.0 - yy / (9.0 + i)),
                0.5 + 0.3 * np.sin((xx + yy) / (15.0 + i)),
            ],
            axis=2,
        )
        save_image(bg_dir / f"bg_{i:02d}.png", np.clip(bg, 0, 1))
    return fg_dir, alpha_dir, bg_dir


@pytest.fixture
def corpus(tmp_path):
    return make_corpus(tmp_path / "data")
