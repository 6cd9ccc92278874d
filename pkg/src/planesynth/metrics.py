"""Image quality metrics for [0, 1] float images."""

from __future__ import annotations

import numpy as np
from scipy.signal import convolve2d

from .errors import DimensionMismatch

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB (peak = 1); identical images -> inf."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    win = np.outer(g, g)
    return win / win.sum()


def ssim(a, b, window_size: int = 11, sigma: float = 1.5) -> float:
    """Structural similarity with a Gaussian window, averaged over channels.

    Statistics use valid-window convolution (no padding). For images smaller
    than the window the window shrinks to the largest odd size that fits.
    """
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    h, w, channels = a.shape
    size = min(window_size, h, w)
    if size % 2 == 0:
        size -= 1
    if size < 1:
        raise DimensionMismatch("image too small for SSIM")
    win = _gaussian_window(size, sigma)
    scores = []
    for c in range(channels):
        x = a[:, :, c]
        y = b[:, :, c]
        mu_x = convolve2d(x, win, mode="valid")
        mu_y = convolve2d(y, win, mode="valid")
        mu_xx = mu_x * mu_x
        mu_yy = mu_y * mu_y
        mu_xy = mu_x * mu_y
        var_x = convolve2d(x * x, win, mode="valid") - mu_xx
        var_y = convolve2d(y * y, win, mode="valid") - mu_yy
        cov = convolve2d(x * y, win, mode="valid") - mu_xy
        num = (2 * mu_xy + SSIM_C1) * (2 * cov + SSIM_C2)
        den = (mu_xx + mu_yy + SSIM_C1) * (var_x + var_y + SSIM_C2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))
