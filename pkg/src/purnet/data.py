"""Dataset ingestion, preprocessing, and batching.

Expected layout: ``root/images/*.{png,jpg}`` and ``root/masks/*.png`` matched
by filename stem. Masks are 8-bit grayscale and are binarized at the midpoint
of the 8-bit range on load.
"""

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .superpixel import SuperpixelSegmentation


class DatasetError(Exception):
    """Raised for unpaired, unreadable, or inconsistently sized samples."""


@dataclass
class Sample:
    image: np.ndarray  # (H, W, 3) float in [0, 1]
    mask: np.ndarray  # (H, W) in {0, 1}
    id: str
    segmentation: SuperpixelSegmentation | None = None


def _load_image(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise DatasetError(f"unreadable image '{path}': {exc}") from exc


def _load_mask(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as img:
            raw = np.asarray(img.convert("L"))
    except OSError as exc:
        raise DatasetError(f"unreadable mask '{path}': {exc}") from exc
    return (raw >= 128).astype(np.float64)


def load_dataset(root: str | Path) -> list[Sample]:
    """Load all image/mask pairs under root, ordered by stem."""
    root = Path(root)
    image_dir = root / "images"
    mask_dir = root / "masks"
    if not image_dir.is_dir() or not mask_dir.is_dir():
        raise DatasetError(f"dataset root '{root}' needs images/ and masks/ subdirectories")

    image_paths = sorted(
        (p for p in image_dir.iterdir() if p.suffix.lower() in (".png", ".jpg")),
        key=lambda p: p.stem,
    )
    stems = {p.stem for p in image_paths}
    for m in mask_dir.glob("*.png"):
        if m.stem not in stems:
            raise DatasetError(f"mask without image: '{m.stem}'")

    samples = []
    for path in image_paths:
        mask_path = mask_dir / f"{path.stem}.png"
        if not mask_path.is_file():
            raise DatasetError(f"no mask for image '{path.stem}'")
        image = _load_image(path)
        mask = _load_mask(mask_path)
        if image.shape[:2] != mask.shape:
            raise DatasetError(
                f"size mismatch for '{path.stem}': image {image.shape[:2]} "
                f"vs mask {mask.shape}"
            )
        samples.append(Sample(image=image, mask=mask, id=path.stem))
    return samples


def _resize(sample: Sample, size: int) -> Sample:
    if sample.image.shape[:2] == (size, size):
        return sample
    img8 = Image.fromarray(np.round(sample.image * 255.0).astype(np.uint8))
    image = np.asarray(img8.resize((size, size), Image.BILINEAR), dtype=np.float64) / 255.0
    mask8 = Image.fromarray((sample.mask * 255.0).astype(np.uint8))
    mask = np.asarray(mask8.resize((size, size), Image.NEAREST), dtype=np.float64) / 255.0
    return replace(sample, image=image, mask=mask, segmentation=None)


def preprocess(
    sample: Sample,
    size: int = 320,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Sample:
    """Resize to size x size (bilinear image, nearest mask); in training mode
    additionally flip horizontally with probability 1/2 under ``rng``."""
    out = _resize(sample, size)
    if train:
        if rng is None:
            raise ValueError("training-mode preprocessing needs a seeded generator")
        if rng.random() < 0.5:
            seg = out.segmentation
            if seg is not None:
                seg = SuperpixelSegmentation(
                    labels=seg.labels[:, ::-1].copy(), region_count=seg.region_count
                )
            out = replace(
                out,
                image=out.image[:, ::-1].copy(),
                mask=out.mask[:, ::-1].copy(),
                segmentation=seg,
            )
    return out


def batches(samples: list[Sample], batch_size: int = 8, seed: int = 0, epoch: int = 0):
    """One epoch of batches under a seeded shuffle; the final short batch is kept."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    rng = np.random.default_rng([seed, epoch])
    order = rng.permutation(len(samples))
    for start in range(0, len(samples), batch_size):
        yield [samples[i] for i in order[start : start + batch_size]]


def collate(batch: list[Sample]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack a batch into (B, 3, H, W) images and (B, H, W) masks."""
    images = np.stack([s.image for s in batch]).transpose(0, 3, 1, 2)
    masks = np.stack([s.mask for s in batch])
    return (
        torch.from_numpy(np.ascontiguousarray(images)).float(),
        torch.from_numpy(masks).float(),
    )
