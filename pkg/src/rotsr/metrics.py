"""Image quality metrics and interpolation baselines."""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_WIN = 11
SSIM_SIGMA = 1.5


def _pair(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, max_val: float = 1.0) -> float:
    """10 log10(max^2 / mse); identical inputs give ``math.inf``."""
    m = mse(a, b)
    if m == 0:
        return math.inf
    return 10.0 * math.log10(max_val * max_val / m)


def gaussian_window(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(img, g):
    half = len(g) // 2
    out = ndimage.correlate1d(img, g, axis=0, mode="constant")
    out = ndimage.correlate1d(out, g, axis=1, mode="constant")
    return out[half:img.shape[0] - half, half:img.shape[1] - half]


def ssim_map(a, b, max_val: float = 1.0) -> np.ndarray:
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WIN:
        raise ValueError(f"SSIM needs 2-D images of at least {SSIM_WIN}x{SSIM_WIN}")
    g = gaussian_window()
    c1 = (SSIM_K1 * max_val) ** 2
    c2 = (SSIM_K2 * max_val) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a * mu_a
    var_b = _filter_valid(b * b, g) - mu_b * mu_b
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, max_val: float = 1.0) -> float:
    """Mean single-scale SSIM, 11x11 Gaussian window (sigma 1.5), valid region only."""
    return float(ssim_map(a, b, max_val).mean())


# ---------------------------------------------------------------------------
# interpolation baselines (align-corners-false, replicate borders)


def cubic_kernel(t, a: float = -0.5):
    t = np.abs(np.asarray(t, dtype=float))
    t2, t3 = t * t, t * t * t
    return np.where(t <= 1, (a + 2) * t3 - (a + 3) * t2 + 1,
                    np.where(t < 2, a * t3 - 5 * a * t2 + 8 * a * t - 4 * a, 0.0))


def linear_kernel(t):
    t = np.abs(np.asarray(t, dtype=float))
    return np.maximum(1 - t, 0.0)


def _resize_matrix(n_in: int, n_out: int, kernel, support: int) -> np.ndarray:
    s = n_out / n_in
    src = (np.arange(n_out) + 0.5) / s - 0.5
    base = np.floor(src).astype(int)
    mat = np.zeros((n_out, n_in))
    for off in range(-support + 1, support + 1):
        j = base + off
        w = kernel(src - j)
        np.add.at(mat, (np.arange(n_out), np.clip(j, 0, n_in - 1)), w)
    return mat


def _upsample(lr, s: int, kernel, support: int) -> np.ndarray:
    if s < 1:
        raise ValueError("scale must be >= 1")
    lr = np.asarray(lr, dtype=float)
    h, w = lr.shape
    my = _resize_matrix(h, h * s, kernel, support)
    mx = _resize_matrix(w, w * s, kernel, support)
    return my @ lr @ mx.T


def bicubic_upsample(lr, s: int) -> np.ndarray:
    """Separable Catmull-Rom (a = -0.5) upsampling."""
    return _upsample(lr, s, cubic_kernel, 2)


def bilinear_upsample(lr, s: int) -> np.ndarray:
    return _upsample(lr, s, linear_kernel, 1)
