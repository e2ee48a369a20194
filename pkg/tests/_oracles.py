"""Independent reference computations used by the tests."""
import math

import numpy as np
import torch
from scipy import integrate

ACCEPTANCE_RESULTS = {}


def kl_quadrature(mu, log_var):
    """KL(N(mu, sigma^2) || N(0, 1)) for one dimension by numerical integration."""
    sigma = math.exp(0.5 * log_var)

    def integrand(x):
        log_q = -0.5 * ((x - mu) / sigma) ** 2 - math.log(sigma) - 0.5 * math.log(2 * math.pi)
        log_p = -0.5 * x * x - 0.5 * math.log(2 * math.pi)
        return math.exp(log_q) * (log_q - log_p)

    lo, hi = mu - 12 * sigma, mu + 12 * sigma
    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


def central_fd(fn, tensors, h=1e-5):
    """Central finite differences of a scalar function w.r.t. every entry of ``tensors`` (modified in place)."""
    grads = []
    with torch.no_grad():
        for t in tensors:
            g = torch.zeros_like(t)
            flat, gflat = t.view(-1), g.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = float(fn())
                flat[i] = orig - h
                fm = float(fn())
                flat[i] = orig
                gflat[i] = (fp - fm) / (2 * h)
            grads.append(g)
    return grads


def rel_error(analytic, numeric):
    """Norm-relative error ||a - n|| / max(||a||, ||n||), 0 when both vanish."""
    a = torch.as_tensor(analytic, dtype=torch.float64).reshape(-1)
    n = torch.as_tensor(numeric, dtype=torch.float64).reshape(-1)
    denom = max(float(a.norm()), float(n.norm()))
    if denom == 0.0:
        return 0.0
    return float((a - n).norm()) / denom


def frechet_1d(m1, s1, m2, s2):
    return (m1 - m2) ** 2 + (s1 - s2) ** 2


def l1_rank_bruteforce(query, images):
    """Python-loop exhaustive scan: list of (distance, index) sorted with index tie-break."""
    q = np.asarray(query, dtype=np.float64).ravel()
    scored = []
    for i, img in enumerate(np.asarray(images, dtype=np.float64)):
        d = 0.0
        for a, b in zip(img.ravel(), q):
            d += abs(a - b)
        scored.append((d, i))
    scored.sort()
    return scored


def ms_ssim_reference(a, b, weights=(0.0448, 0.2856, 0.3001, 0.2363, 0.1333), win=11, sigma=1.5, k1=0.01, k2=0.03):
    """Straightforward MS-SSIM on 2-D grayscale arrays using a full 2-D window and scipy convolution."""
    from scipy.signal import convolve2d

    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    ax = np.arange(win) - (win - 1) / 2
    g = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma**2))
    g /= g.sum()
    c1, c2 = k1**2, k2**2
    w = np.asarray(weights) / np.sum(weights)

    def filt(img):
        return convolve2d(img, g, mode="valid")

    result = 1.0
    for j in range(len(w)):
        mx, my = filt(x), filt(y)
        vx, vy, cxy = filt(x * x) - mx**2, filt(y * y) - my**2, filt(x * y) - mx * my
        cs = np.mean((2 * cxy + c2) / (vx + vy + c2))
        if j == len(w) - 1:
            cs = np.mean((2 * mx * my + c1) / (mx**2 + my**2 + c1) * (2 * cxy + c2) / (vx + vy + c2))
        result *= max(cs, 0.0) ** w[j]
        h, wd = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
        x = x[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
        y = y[:h, :wd].reshape(h // 2, 2, wd // 2, 2).mean(axis=(1, 3))
    return result
