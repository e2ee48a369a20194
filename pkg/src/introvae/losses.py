"""Loss terms and closed-form distances.

Reduction convention used throughout: sum over latent (or pixel) dimensions,
mean over the batch. This keeps the margin ``m`` a per-sample quantity that
does not depend on batch size.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .config import HyperParams
from .errors import InvalidInputError, ShapeError


@dataclass
class LatentStats:
    """Posterior parameters for a batch: ``mu`` and ``log_var`` of shape (B, M_z)."""

    mu: torch.Tensor
    log_var: torch.Tensor

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape:
            raise ShapeError(f"mu {tuple(self.mu.shape)} and log_var {tuple(self.log_var.shape)} differ")
        if self.mu.shape[-1] == 0:
            raise ShapeError("latent dimension must be positive")

    @property
    def sigma(self) -> torch.Tensor:
        return torch.exp(0.5 * self.log_var)

    def detach(self) -> "LatentStats":
        return LatentStats(self.mu.detach(), self.log_var.detach())


@dataclass
class LossReport:
    l_ae: float
    kl_real: float
    kl_rec: float
    kl_sample: float
    l_encoder: float
    l_generator: float


def _check_finite(*tensors):
    for t in tensors:
        if not bool(torch.isfinite(t).all()):
            raise InvalidInputError("non-finite value in input")


def kl_divergence(mu, log_var=None, reduce=False):
    """KL(N(mu, exp(log_var)) || N(0, I)), summed over the last axis.

    Accepts a :class:`LatentStats` or the two tensors. Returns one value per
    sample, or the batch mean when ``reduce`` is true.
    """
    if isinstance(mu, LatentStats):
        mu, log_var = mu.mu, mu.log_var
    mu = torch.as_tensor(mu)
    log_var = torch.as_tensor(log_var)
    if mu.shape != log_var.shape:
        raise ShapeError(f"mu {tuple(mu.shape)} and log_var {tuple(log_var.shape)} differ")
    _check_finite(mu, log_var)
    # expm1 avoids cancellation in exp(v) - 1 - v near v = 0
    kl = 0.5 * (mu.pow(2) + torch.expm1(log_var) - log_var).sum(dim=-1)
    return kl.mean() if reduce else kl


def reparameterize(mu, log_var=None, noise=None):
    """z = mu + sigma * noise with sigma = exp(log_var / 2)."""
    if isinstance(mu, LatentStats):
        mu, log_var = mu.mu, mu.log_var
    mu = torch.as_tensor(mu)
    log_var = torch.as_tensor(log_var)
    noise = torch.as_tensor(noise, dtype=mu.dtype)
    if noise.shape != mu.shape or log_var.shape != mu.shape:
        raise ShapeError(
            f"shape mismatch: mu {tuple(mu.shape)}, log_var {tuple(log_var.shape)}, noise {tuple(noise.shape)}"
        )
    return mu + torch.exp(0.5 * log_var) * noise


def mse_recon(x, x_r):
    """Half the squared pixel error, summed over pixels and averaged over the batch.

    Inputs are (B, ...) batches; a single unbatched image is treated as B=1
    only if the caller adds the batch axis.
    """
    x = torch.as_tensor(x)
    x_r = torch.as_tensor(x_r)
    if x.shape != x_r.shape:
        raise ShapeError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_r.shape)}")
    diff = (x_r - x).reshape(x.shape[0], -1)
    return 0.5 * diff.pow(2).sum(dim=1).mean()


def hinge(margin, value):
    """max(0, margin - value); works on floats and tensors."""
    if isinstance(value, torch.Tensor):
        return torch.clamp(margin - value, min=0.0)
    return max(0.0, margin - value)


def loss_encoder(kl_real, kl_rec, kl_sample, l_ae, hp: HyperParams):
    return (
        kl_real
        + hp.alpha * (hinge(hp.margin, kl_rec) + hinge(hp.margin, kl_sample))
        + hp.beta * l_ae
    )


def loss_generator(kl_rec, kl_sample, l_ae, hp: HyperParams):
    return hp.alpha * (kl_rec + kl_sample) + hp.beta * l_ae


def frechet_distance(mean_a, cov_a, mean_b, cov_b, sym_tol=1e-6):
    """Squared 2-Wasserstein distance between two Gaussians.

    ``Tr((cov_a cov_b)^{1/2})`` is evaluated as the trace of the square root of
    the symmetric PSD matrix ``A^{1/2} cov_b A^{1/2}`` (``A = cov_a``), so no
    complex arithmetic is needed. Tiny negative eigenvalues are clamped to 0.
    """
    mean_a = np.atleast_1d(np.asarray(mean_a, dtype=np.float64))
    mean_b = np.atleast_1d(np.asarray(mean_b, dtype=np.float64))
    cov_a = np.atleast_2d(np.asarray(cov_a, dtype=np.float64))
    cov_b = np.atleast_2d(np.asarray(cov_b, dtype=np.float64))
    d = mean_a.shape[0]
    if mean_b.shape != (d,) or cov_a.shape != (d, d) or cov_b.shape != (d, d):
        raise ShapeError(
            f"dimension mismatch: means {mean_a.shape}/{mean_b.shape}, covs {cov_a.shape}/{cov_b.shape}"
        )
    for name, c in (("cov_a", cov_a), ("cov_b", cov_b)):
        if not np.all(np.isfinite(c)):
            raise InvalidInputError(f"{name} has non-finite entries")
        scale = max(1.0, float(np.abs(c).max()))
        if np.abs(c - c.T).max() > sym_tol * scale:
            raise InvalidInputError(f"{name} is not symmetric")
    cov_a = 0.5 * (cov_a + cov_a.T)
    cov_b = 0.5 * (cov_b + cov_b.T)

    w, v = np.linalg.eigh(cov_a)
    sqrt_a = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    inner = sqrt_a @ cov_b @ sqrt_a
    inner = 0.5 * (inner + inner.T)
    tr_sqrt = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()

    diff = mean_a - mean_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)
    return max(value, 0.0)
