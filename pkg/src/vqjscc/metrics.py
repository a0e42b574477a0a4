"""PSNR and multi-scale SSIM (with its dB transform)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ConfigError, ShapeError

MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
WINDOW = 11
SIGMA = 1.5
K1, K2 = 0.01, 0.03


def psnr(X, X_hat, peak: float = 1.0) -> float:
    """10 log10(peak^2 / MSE); +inf when the images are identical."""
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ShapeError(f"psnr: shapes differ, {X.shape} vs {X_hat.shape}")
    if peak <= 0:
        raise ValueError(f"peak must be positive, got {peak}")
    err = float(np.mean((X - X_hat) ** 2))
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / err)


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma * sigma))
    return g / g.sum()


def max_scales(H: int, W: int, window: int = WINDOW) -> int:
    """Largest scale count whose coarsest image still fits the window."""
    s = 0
    while min(H, W) >= (2**s) * window:
        s += 1
    return s


def _filter(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable 'valid' filtering of the last two axes."""
    h = len(g) // 2
    y = correlate1d(correlate1d(x, g, axis=-1, mode="constant"), g, axis=-2, mode="constant")
    return y[..., h : x.shape[-2] - h, h : x.shape[-1] - h]


def _ssim_terms(x: np.ndarray, y: np.ndarray, peak: float) -> tuple[float, float]:
    """(mean SSIM map, mean contrast-structure map) for 2-D images."""
    g = gaussian_window()
    c1 = (K1 * peak) ** 2
    c2 = (K2 * peak) ** 2
    mx, my = _filter(x, g), _filter(y, g)
    sxx = _filter(x * x, g) - mx * mx
    syy = _filter(y * y, g) - my * my
    sxy = _filter(x * y, g) - mx * my
    cs = (2 * sxy + c2) / (sxx + syy + c2)
    lum = (2 * mx * my + c1) / (mx * mx + my * my + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _downsample(x: np.ndarray) -> np.ndarray:
    H, W = x.shape[-2] // 2 * 2, x.shape[-1] // 2 * 2
    x = x[..., :H, :W]
    return 0.25 * (x[..., 0::2, 0::2] + x[..., 1::2, 0::2] + x[..., 0::2, 1::2] + x[..., 1::2, 1::2])


def scale_weights(scales: int) -> tuple:
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ConfigError(f"scales must be in [1, {len(MS_SSIM_WEIGHTS)}], got {scales}")
    w = MS_SSIM_WEIGHTS[:scales]
    total = sum(w)
    return tuple(v / total for v in w)


def _ms_ssim_2d(x, y, scales, weights, peak) -> float:
    value = 1.0
    for j in range(scales):
        ssim, cs = _ssim_terms(x, y, peak)
        last = j == scales - 1
        # negative structure terms are clamped so fractional powers stay real
        value *= max(ssim if last else cs, 0.0) ** weights[j]
        if not last:
            x, y = _downsample(x), _downsample(y)
    return value


def ms_ssim(X, X_hat, scales: int = 3, weights=None, peak: float = 1.0) -> float:
    """Multi-scale SSIM of (H, W), (C, H, W) or (B, C, H, W) images.

    Each channel (and batch item) is scored separately and the results are
    averaged. With ``scales=1`` this is the plain mean SSIM.
    """
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ShapeError(f"ms_ssim: shapes differ, {X.shape} vs {X_hat.shape}")
    if X.ndim < 2:
        raise ShapeError(f"ms_ssim: need at least 2-d images, got shape {X.shape}")
    H, W = X.shape[-2:]
    feasible = max_scales(H, W)
    if scales > feasible:
        raise ConfigError(f"{H}x{W} images support at most {feasible} scales, {scales} requested")
    w = scale_weights(scales) if weights is None else tuple(weights)
    if len(w) != scales:
        raise ConfigError(f"need {scales} weights, got {len(w)}")
    xs = X.reshape(-1, H, W)
    ys = X_hat.reshape(-1, H, W)
    return float(np.mean([_ms_ssim_2d(a, b, scales, w, peak) for a, b in zip(xs, ys)]))


def ms_ssim_db(v: float) -> float:
    """-10 log10(1 - v); +inf at v = 1."""
    v = float(v)
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"MS-SSIM value must lie in [0, 1], got {v}")
    if v == 1.0:
        return math.inf
    return -10.0 * math.log10(1.0 - v)


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    msssim: float
    msssim_db: float


def report(X, X_hat, scales: int | None = None, peak: float = 1.0) -> MetricReport:
    """PSNR and MS-SSIM, using as many scales (up to 3) as the image size allows."""
    X = np.asarray(X)
    if scales is None:
        scales = max(1, min(3, max_scales(*X.shape[-2:])))
    v = min(max(ms_ssim(X, X_hat, scales, peak=peak), 0.0), 1.0)
    return MetricReport(psnr(X, X_hat, peak), v, ms_ssim_db(v))
