"""Image datasets: folder ingestion, procedural synthetic images, splits and batching.

All randomness here comes from numpy's PCG64 bit generator, seeded through
``SeedSequence``; both are specified algorithms, so splits, batch orders and
synthetic images reproduce across platforms.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".webp"}
FAMILIES = ("gaussian-blobs", "gradient-shapes")


def make_rng(*seed_words) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(s) for s in seed_words])))


@dataclass(frozen=True)
class SyntheticSpec:
    n_images: int = 2000
    resolution: int = 32
    family: str = "gaussian-blobs"
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown synthetic family {self.family!r}; choose from {FAMILIES}")
        if self.n_images <= 0 or self.resolution <= 0:
            raise ConfigError("n_images and resolution must be positive")


@dataclass(frozen=True)
class DatasetSpec:
    source: object  # folder path or SyntheticSpec
    resolution: int = 32
    splits: tuple = (0.8, 0.1, 0.1)
    seed: int = 0

    def __post_init__(self):
        if len(self.splits) != 3 or min(self.splits) < 0 or abs(sum(self.splits) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must be three nonnegative numbers summing to 1, got {self.splits}")


class ImageDataset:
    """In-memory image tensor (N, C, H, W) in [0, 1] with a fixed train/val/test split."""

    def __init__(self, images: torch.Tensor, splits=(0.8, 0.1, 0.1), seed: int = 0, names=None):
        if images.numel() == 0 or len(images) == 0:
            raise ConfigError("dataset is empty")
        self.images = images
        self.names = list(names) if names is not None else [f"{i:06d}" for i in range(len(images))]
        self.split_indices = split_indices(len(images), splits, seed)

    def __len__(self):
        return len(self.images)

    def split(self, name: str) -> "Subset":
        return Subset(self, self.split_indices[name])


class Subset:
    def __init__(self, parent: ImageDataset, indices):
        self.parent = parent
        self.indices = np.asarray(indices, dtype=np.int64)

    def __len__(self):
        return len(self.indices)

    @property
    def images(self) -> torch.Tensor:
        return self.parent.images[torch.from_numpy(self.indices)]


def split_indices(n: int, fractions, seed: int) -> dict:
    """Assign each index to exactly one of train/val/test, deterministically by seed."""
    train_f, val_f, test_f = fractions
    n_val = int(round(n * val_f))
    n_test = int(round(n * test_f))
    if n >= 10:
        n_val = max(n_val, 1 if val_f > 0 else 0)
        n_test = max(n_test, 1 if test_f > 0 else 0)
    n_train = n - n_val - n_test
    if n_train < 0 or (n >= 10 and train_f > 0 and n_train == 0):
        raise ConfigError(f"cannot split {n} items into fractions {fractions}")
    perm = make_rng(seed, 0x5B1).permutation(n)
    return {
        "train": np.sort(perm[:n_train]),
        "val": np.sort(perm[n_train:n_train + n_val]),
        "test": np.sort(perm[n_train + n_val:]),
    }


# ---------------------------------------------------------------------------
# folder ingestion


def _load_one(path: Path, resolution: int):
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            w, h = im.size
            side = min(w, h)
            left, top = (w - side) // 2, (h - side) // 2
            im = im.crop((left, top, left + side, top + side))
            if side != resolution:
                im = im.resize((resolution, resolution), Image.BICUBIC)
            arr = np.asarray(im, dtype=np.uint8)
    except Exception as exc:  # PIL raises a zoo of exception types
        warnings.warn(f"skipping unreadable file {path}: {exc}")
        return None
    return arr


def load_images(paths, resolution: int, workers: int = 1):
    """Decode images; results keep the order of ``paths`` regardless of ``workers``."""
    paths = list(paths)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            arrays = list(pool.map(lambda p: _load_one(p, resolution), paths))
    else:
        arrays = [_load_one(p, resolution) for p in paths]
    kept = [(p, a) for p, a in zip(paths, arrays) if a is not None]
    if not kept:
        return [], torch.zeros(0, 3, resolution, resolution)
    stack = np.stack([a for _, a in kept]).astype(np.float32) / 255.0
    return [p for p, _ in kept], torch.from_numpy(stack).permute(0, 3, 1, 2).contiguous()


def list_folder(folder) -> list:
    folder = Path(folder)
    if not folder.is_dir():
        raise ConfigError(f"dataset folder not found: {folder}")
    return sorted(p for p in folder.iterdir() if p.is_file())


def load_folder(spec: DatasetSpec, workers: int = 1) -> ImageDataset:
    files = list_folder(spec.source)
    paths, images = load_images(files, spec.resolution, workers)
    if not paths:
        raise ConfigError(f"no readable images in {spec.source}")
    log.info("loaded %d images from %s", len(paths), spec.source)
    return ImageDataset(images, spec.splits, spec.seed, names=[p.name for p in paths])


# ---------------------------------------------------------------------------
# synthetic images


def _grid(res):
    coords = (np.arange(res, dtype=np.float64) + 0.5) / res
    return np.meshgrid(coords, coords, indexing="ij")  # yy, xx


def _blobs(rng, res):
    yy, xx = _grid(res)
    bg = rng.uniform(0.0, 0.35, size=3)
    img = np.broadcast_to(bg[:, None, None], (3, res, res)).copy()
    for _ in range(rng.integers(1, 4)):
        cy, cx = rng.uniform(0.15, 0.85, size=2)
        sigma = rng.uniform(0.06, 0.2)
        color = rng.uniform(0.2, 1.0, size=3)
        bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        img = img + (color[:, None, None] - img) * bump[None]
    return img


def _shapes(rng, res):
    yy, xx = _grid(res)
    c0, c1 = rng.uniform(0.0, 1.0, size=(2, 3))
    angle = rng.uniform(0.0, 2 * np.pi)
    t = np.clip(0.5 + (np.cos(angle) * (xx - 0.5) + np.sin(angle) * (yy - 0.5)), 0.0, 1.0)
    img = c0[:, None, None] * (1 - t)[None] + c1[:, None, None] * t[None]
    cy, cx = rng.uniform(0.25, 0.75, size=2)
    size = rng.uniform(0.1, 0.3)
    color = rng.uniform(0.0, 1.0, size=3)
    if rng.integers(2):
        d = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2) - size
    else:
        d = np.maximum(np.abs(yy - cy), np.abs(xx - cx)) - size
    # soft edge one pixel wide keeps the images continuous in their parameters
    mask = np.clip(0.5 - d * res, 0.0, 1.0)
    return img * (1 - mask)[None] + color[:, None, None] * mask[None]


def generate_synthetic(spec: SyntheticSpec, splits=(0.8, 0.1, 0.1), split_seed=None) -> ImageDataset:
    rng = make_rng(spec.seed, 0x5E7)
    draw = _blobs if spec.family == "gaussian-blobs" else _shapes
    imgs = np.stack([draw(rng, spec.resolution) for _ in range(spec.n_images)])
    imgs = np.clip(imgs, 0.0, 1.0).astype(np.float32)
    seed = spec.seed if split_seed is None else split_seed
    return ImageDataset(torch.from_numpy(imgs), splits, seed)


# ---------------------------------------------------------------------------
# batching


def batch_indices(n: int, batch_size: int, epoch_seed: int) -> list:
    """Shuffled index batches for one epoch; the final partial batch is dropped."""
    if batch_size <= 0:
        raise ConfigError("batch_size must be positive")
    if batch_size > n:
        raise ConfigError(f"batch_size {batch_size} exceeds dataset size {n}")
    perm = make_rng(epoch_seed, 0xBA7C).permutation(n)
    n_batches = n // batch_size
    return [perm[i * batch_size:(i + 1) * batch_size] for i in range(n_batches)]


def batches(handle, batch_size: int, epoch_seed: int):
    """Yield image batches of one shuffled epoch from an ImageDataset or Subset."""
    images = handle.images
    for idx in batch_indices(len(images), batch_size, epoch_seed):
        yield images[torch.from_numpy(idx)]


# ---------------------------------------------------------------------------
# image output


def to_uint8(img: torch.Tensor) -> np.ndarray:
    """(C, H, W) float tensor -> (H, W, C) uint8 array, clamped to [0, 1]."""
    arr = img.detach().to(torch.float64).clamp(0.0, 1.0).mul(255.0).round().to(torch.uint8)
    return arr.permute(1, 2, 0).cpu().numpy()


def save_png(img: torch.Tensor, path) -> None:
    arr = to_uint8(img)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path, format="PNG")


def make_grid(images: torch.Tensor, ncol: int = 4, pad: int = 2) -> torch.Tensor:
    n, c, h, w = images.shape
    nrow = -(-n // ncol)
    grid = torch.ones(c, nrow * h + (nrow + 1) * pad, ncol * w + (ncol + 1) * pad, dtype=images.dtype)
    for i in range(n):
        r, q = divmod(i, ncol)
        y, x = pad + r * (h + pad), pad + q * (w + pad)
        grid[:, y:y + h, x:x + w] = images[i]
    return grid
