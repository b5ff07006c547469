import numpy as np
import pytest

from mattekit.io import save_alpha, save_image


def make_corpus(root, n_fg=3, n_bg=4, fg_size=(240, 320), bg_size=(300, 400), seed=0):
    gen = np.random.default_rng(seed)
    fg_dir, alpha_dir, bg_dir = root / "fg", root / "alpha", root / "bg"
    for d in (fg_dir, alpha_dir, bg_dir):
        d.mkdir(parents=True, exist_ok=True)
    h, w = fg_size
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    for i in range(n_fg):
        fg = np.stack(
            [
                0.5 + 0.35 * np.sin(xx / (9.0 + i)),
                0.5 + 0.35 * np.cos(yy / (11.0 + i)),
                0.5 + 0.25 * np.sin((xx + yy) / 17.0),
            ],
            axis=2,
        )
        save_image(fg_dir / f"fg_{i:02d}.png", np.clip(fg, 0, 1))
        cy = h // 2 + int(gen.integers(-h // 6, h // 6))
        cx = w // 2 + int(gen.integers(-w // 6, w // 6))
        dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        alpha = np.clip((min(h, w) // 3 - dist) / 6.0 + 1.0, 0.0, 1.0)
        save_alpha(alpha_dir / f"fg_{i:02d}.png", alpha.astype(np.float32), bits=8)
    bh, bw = bg_size
    byy, bxx = np.mgrid[0:bh, 0:bw].astype(np.float64)
    for i in range(n_bg):
        bg = np.stack(
            [
                0.5 + 0.4 * np.sin(bxx / (6.0 + i) + byy / 15.0),
                0.5 + 0.4 * np.cos(bxx / 13.0),
                0.5 + 0.3 * np.sin(byy / (8.0 + i)),
            ],
            axis=2,
        )
        save_image(bg_dir / f"bg_{i:02d}.png", np.clip(bg, 0, 1))
    return fg_dir, alpha_dir, bg_dir


@pytest.fixture(scope="module")
def pipeline_run(tmp_path_factory):
    """Corpus + composed manifest + 10 CLI-emitted patches, shared per module."""
    from mattekit.cli import main

    root = tmp_path_factory.mktemp("bindings_run")
    fg_dir, alpha_dir, bg_dir = make_corpus(root / "data")
    out = root / "out"
    cfg = root / "run.toml"
    cfg.write_text(
        f"""
seed = 17
workers = 1
output_dir = "{out}"

[paths]
fg_dir = "{fg_dir}"
alpha_dir = "{alpha_dir}"
bg_dir = "{bg_dir}"

[rules]
train_bg_per_fg = 2

[pipeline]
patch_size = 96
trimap_d = [1, 6]
"""
    )
    assert main(["compose", "--config", str(cfg)]) == 0
    assert main(["augment", "--config", str(cfg), "-n", "10"]) == 0
    return cfg, out
