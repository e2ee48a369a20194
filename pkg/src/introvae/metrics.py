"""Evaluation metrics: MS-SSIM pair diversity, RMSE, Frechet distance on features, L1 nearest neighbours."""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import make_rng
from .errors import ConfigError, ShapeError
from .losses import frechet_distance

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


@dataclass(frozen=True)
class MsSsimConfig:
    scales: int = 5
    weights: tuple = MS_SSIM_WEIGHTS
    window: int = 11
    sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    data_range: float = 1.0

    def __post_init__(self):
        if self.scales < 1 or self.scales > len(self.weights):
            raise ConfigError(f"scales must be in [1, {len(self.weights)}]")
        if min(self.weights) < 0:
            raise ConfigError("scale weights must be nonnegative")
        if self.window % 2 != 1:
            raise ConfigError("window size must be odd")

    def usable_scales(self, min_side: int) -> int:
        """Largest scale count <= ``scales`` whose coarsest level still fits the window."""
        s = self.scales
        while s > 1 and min_side < 2 ** (s - 1) * self.window:
            s -= 1
        return s


def _gauss_window(size: int, sigma: float) -> torch.Tensor:
    x = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _blur(x: torch.Tensor, win: torch.Tensor) -> torch.Tensor:
    # separable valid-mode filtering on (N, 1, H, W)
    x = F.conv2d(x, win.view(1, 1, 1, -1))
    return F.conv2d(x, win.view(1, 1, -1, 1))


def _ssim_terms(x, y, win, c1, c2):
    mu_x, mu_y = _blur(x, win), _blur(y, win)
    sxx = _blur(x * x, win) - mu_x * mu_x
    syy = _blur(y * y, win) - mu_y * mu_y
    sxy = _blur(x * y, win) - mu_x * mu_y
    lum = (2 * mu_x * mu_y + c1) / (mu_x * mu_x + mu_y * mu_y + c1)
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    # full SSIM is the mean of the product map, not the product of means
    return (lum * cs).mean(dim=(1, 2, 3)), cs.mean(dim=(1, 2, 3))


def _to_luma(img: torch.Tensor) -> torch.Tensor:
    img = torch.as_tensor(img, dtype=torch.float64)
    if img.dim() == 3:
        img = img.unsqueeze(0)
    if img.dim() != 4:
        raise ShapeError(f"expected (C, H, W) or (B, C, H, W) images, got {tuple(img.shape)}")
    return img.mean(dim=1, keepdim=True)


def ms_ssim(a, b, cfg: MsSsimConfig = MsSsimConfig()):
    """Multi-scale SSIM on the channel-averaged luma of two images.

    Accepts single images (C, H, W), returning a float, or batches
    (B, C, H, W), returning a tensor of B values. Per-scale terms are clipped
    at 0 so the result stays in [0, 1].
    """
    single = torch.as_tensor(a).dim() == 3
    x, y = _to_luma(a), _to_luma(b)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(y.shape)}")
    min_side = min(x.shape[-2:])
    if min_side < cfg.window:
        raise ShapeError(f"images smaller than the {cfg.window}x{cfg.window} window")
    scales = cfg.usable_scales(min_side)
    if scales < cfg.scales:
        warnings.warn(f"{min_side}px images support only {scales} of {cfg.scales} MS-SSIM scales")
    w = torch.tensor(cfg.weights[:scales], dtype=torch.float64)
    w = w / w.sum()
    win = _gauss_window(cfg.window, cfg.sigma)
    c1 = (cfg.k1 * cfg.data_range) ** 2
    c2 = (cfg.k2 * cfg.data_range) ** 2

    out = torch.ones(x.shape[0], dtype=torch.float64)
    for j in range(scales):
        ssim, cs = _ssim_terms(x, y, win, c1, c2)
        term = ssim if j == scales - 1 else cs
        out = out * term.clamp(min=0.0) ** w[j]
        if j < scales - 1:
            x, y = F.avg_pool2d(x, 2), F.avg_pool2d(y, 2)
    return float(out[0]) if single else out


def pair_diversity(samples, n_pairs: int = 10000, seed: int = 0, cfg: MsSsimConfig = MsSsimConfig(),
                   chunk: int = 256) -> float:
    """Mean MS-SSIM over ``n_pairs`` random pairs of distinct samples (lower = more diverse)."""
    samples = torch.as_tensor(samples)
    n = samples.shape[0]
    if n_pairs <= 0:
        raise ConfigError("n_pairs must be positive")
    if n < 2:
        raise ConfigError("need at least two samples")
    rng = make_rng(seed, 0xD1)
    i = rng.integers(0, n, size=n_pairs)
    j = (i + rng.integers(1, n, size=n_pairs)) % n  # uniform over indices != i
    total = 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in range(0, n_pairs, chunk):
            ii = torch.from_numpy(i[s:s + chunk])
            jj = torch.from_numpy(j[s:s + chunk])
            total += float(ms_ssim(samples[ii], samples[jj], cfg).sum())
    return total / n_pairs


def rmse(originals, reconstructions) -> float:
    a = torch.as_tensor(originals, dtype=torch.float64)
    b = torch.as_tensor(reconstructions, dtype=torch.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return float(torch.sqrt(((a - b) ** 2).mean()))


# ---------------------------------------------------------------------------
# Frechet distance on feature sets


@dataclass
class FeatureSet:
    features: np.ndarray
    provenance: str = "pixel-flatten"

    def __post_init__(self):
        arr = np.asarray(self.features, dtype=np.float64)
        self.features = arr.reshape(-1, 1) if arr.ndim == 1 else arr
        if self.features.ndim != 2:
            raise ShapeError("features must be an (n_samples, feature_dim) matrix")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def pixel_features(images) -> FeatureSet:
    arr = torch.as_tensor(images).detach().to(torch.float64).reshape(len(images), -1).numpy()
    return FeatureSet(arr, "pixel-flatten")


def save_features(fs: FeatureSet, path) -> None:
    np.save(path, fs.features)


def load_features(path) -> FeatureSet:
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path, allow_pickle=False)
    else:
        # text matrix: first line "n_samples feature_dim", then one row per sample
        lines = path.read_text().split("\n")
        n, d = (int(v) for v in lines[0].replace(",", " ").split())
        arr = np.loadtxt(lines[1:], delimiter=None if "," not in lines[1] else ",", ndmin=2)
        if arr.shape != (n, d):
            raise ShapeError(f"{path}: header says {n}x{d}, body is {arr.shape[0]}x{arr.shape[1]}")
    return FeatureSet(arr, f"file:{path.name}")


def fit_gaussian(features, ridge: float = 1e-6):
    """Sample mean and unbiased covariance; adds ``ridge * I`` when the covariance is rank-deficient."""
    x = features.features if isinstance(features, FeatureSet) else np.atleast_2d(np.asarray(features, np.float64))
    n, d = x.shape
    if n < 2:
        raise ConfigError("need at least two samples to fit a Gaussian")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / (n - 1)
    if n <= d or np.linalg.matrix_rank(cov) < d:
        cov = cov + ridge * np.eye(d)
    return mean, cov


def frechet_score(real, fake) -> float:
    if real.dim != fake.dim:
        raise ShapeError(f"feature dimensions differ: {real.dim} vs {fake.dim}")
    mr, cr = fit_gaussian(real)
    mf, cf = fit_gaussian(fake)
    return frechet_distance(mr, cr, mf, cf)


# ---------------------------------------------------------------------------
# nearest neighbours


def nearest_neighbors_l1(query, images, k: int):
    """Indices and pixel-L1 distances of the ``k`` closest images; ties go to the lower index."""
    if k <= 0:
        raise ConfigError("k must be positive")
    data = torch.as_tensor(images, dtype=torch.float64)
    q = torch.as_tensor(query, dtype=torch.float64)
    if tuple(data.shape[1:]) != tuple(q.shape):
        raise ShapeError(f"query shape {tuple(q.shape)} does not match dataset images {tuple(data.shape[1:])}")
    if k > data.shape[0]:
        raise ConfigError(f"k={k} exceeds dataset size {data.shape[0]}")
    dist = (data - q).abs().reshape(data.shape[0], -1).sum(dim=1).numpy()
    order = np.argsort(dist, kind="stable")[:k]
    return order, dist[order]


# ---------------------------------------------------------------------------
# reports

REPORT_COLUMNS = ["metric", "name", "value", "n", "seed"]


@dataclass
class MetricRow:
    metric: str
    name: str
    value: float
    n: int
    seed: int

    def as_list(self):
        return [self.metric, self.name, repr(float(self.value)), self.n, self.seed]


def write_report(rows, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow(r.as_list())


def read_report(path) -> list:
    with open(path, newline="") as f:
        return [MetricRow(r["metric"], r["name"], float(r["value"]), int(r["n"]), int(r["seed"]))
                for r in csv.DictReader(f)]
