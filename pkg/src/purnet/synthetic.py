"""Seeded synthetic datasets: single geometric shapes on textured backgrounds.

Small enough to overfit on a CPU in minutes, with foreground kept well under
half the frame so adaptive thresholding stays meaningful.
"""

from pathlib import Path

import numpy as np
from PIL import Image

from .data import Sample


def _texture(rng: np.random.Generator, size: int, base: np.ndarray) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    fy, fx = rng.uniform(1.0, 3.0, size=2)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    wave = 0.08 * np.sin(2.0 * np.pi * (fy * yy + fx * xx) + phase)
    noise = rng.normal(0.0, 0.03, size=(size, size))
    return np.clip(base[None, None, :] + (wave + noise)[:, :, None], 0.0, 1.0)


def _shape_mask(rng: np.random.Generator, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    kind = rng.integers(3)
    cy = rng.uniform(0.35, 0.65) * size
    cx = rng.uniform(0.35, 0.65) * size
    if kind == 0:  # disk
        r = rng.uniform(0.18, 0.28) * size
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r**2
    elif kind == 1:  # axis-aligned rectangle
        hh = rng.uniform(0.16, 0.26) * size
        hw = rng.uniform(0.16, 0.26) * size
        mask = (np.abs(yy - cy) < hh) & (np.abs(xx - cx) < hw)
    else:  # ellipse
        ry = rng.uniform(0.16, 0.26) * size
        rx = rng.uniform(0.18, 0.28) * size
        mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1.0
    return mask.astype(np.float64)


def synthetic_dataset(n: int = 8, size: int = 64, seed: int = 0) -> list[Sample]:
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        bg_color = rng.uniform(0.1, 0.45, size=3)
        fg_color = rng.uniform(0.6, 0.95, size=3)
        background = _texture(rng, size, bg_color)
        foreground = _texture(rng, size, fg_color)
        mask = _shape_mask(rng, size)
        image = np.where(mask[:, :, None] > 0, foreground, background)
        samples.append(Sample(image=image, mask=mask, id=f"synthetic_{i:03d}"))
    return samples


def write_dataset(samples: list[Sample], root: str | Path) -> None:
    """Materialize samples as an on-disk image/mask directory pair."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for s in samples:
        Image.fromarray(np.round(s.image * 255.0).astype(np.uint8)).save(
            root / "images" / f"{s.id}.png"
        )
        Image.fromarray((s.mask * 255.0).astype(np.uint8)).save(
            root / "masks" / f"{s.id}.png"
        )
