"""Image quality (PSNR, SSIM) and depth accuracy metrics.

All images are float arrays on unit dynamic range [0, 1], either (H, W)
grayscale or (H, W, 3) RGB. SSIM reduces RGB to luminance first and is
computed with the standard 11x11 Gaussian window over valid centers only,
so it rejects images smaller than the window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_LUMA = np.array([0.299, 0.587, 0.114])
_WINDOW = 11
_SIGMA = 1.5
_C1 = 0.01 ** 2
_C2 = 0.03 ** 2


class MetricError(ValueError):
    pass


def _check_pair(a: np.ndarray, b: np.ndarray):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise MetricError(f"expected (H, W) or (H, W, 3) images, got {a.shape}")
    return a, b


def psnr(img_a: np.ndarray, img_b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    a, b = _check_pair(img_a, img_b)
    se = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[:2]:
            raise MetricError(f"mask shape {m.shape} does not match image {a.shape}")
        if not m.any():
            raise MetricError("mask selects no pixels")
        se = se[m]
    mse = float(se.mean())
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    return img @ _LUMA


def _gaussian_kernel() -> np.ndarray:
    offsets = np.arange(_WINDOW) - _WINDOW // 2
    g = np.exp(-(offsets ** 2) / (2.0 * _SIGMA ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _windowed_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    # valid-mode weighted local mean; small kernel, direct einsum
    windows = np.lib.stride_tricks.sliding_window_view(img, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel)


def _ssim_map(gray_a: np.ndarray, gray_b: np.ndarray) -> np.ndarray:
    kernel = _gaussian_kernel()
    mu_a = _windowed_mean(gray_a, kernel)
    mu_b = _windowed_mean(gray_b, kernel)
    var_a = _windowed_mean(gray_a * gray_a, kernel) - mu_a ** 2
    var_b = _windowed_mean(gray_b * gray_b, kernel) - mu_b ** 2
    cov = _windowed_mean(gray_a * gray_b, kernel) - mu_a * mu_b
    return (((2.0 * mu_a * mu_b + _C1) * (2.0 * cov + _C2))
            / ((mu_a ** 2 + mu_b ** 2 + _C1) * (var_a + var_b + _C2)))


def ssim(img_a: np.ndarray, img_b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """Structural similarity averaged over valid (fully inside) windows."""
    a, b = _check_pair(img_a, img_b)
    if a.shape[0] < _WINDOW or a.shape[1] < _WINDOW:
        raise MetricError(f"image {a.shape[:2]} is smaller than the "
                          f"{_WINDOW}x{_WINDOW} SSIM window")
    smap = _ssim_map(_to_gray(a), _to_gray(b))
    if mask is not None:
        m = np.asarray(mask, dtype=bool)
        if m.shape != a.shape[:2]:
            raise MetricError(f"mask shape {m.shape} does not match image {a.shape}")
        half = _WINDOW // 2
        inner = m[half:-half, half:-half]
        if not inner.any():
            raise MetricError("mask selects no valid window centers")
        return float(smap[inner].mean())
    return float(smap.mean())


def depth_metrics(pred: np.ndarray, gt: np.ndarray,
                  mask: np.ndarray | None = None,
                  tau: float = 0.05) -> tuple[float, float]:
    """Mean absolute depth error and the fraction within tau (acc@tau).

    Defaults to the foreground mask gt > 0; an empty mask is rejected so a
    silent all-background comparison cannot masquerade as perfect accuracy.
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise MetricError(f"depth shapes differ: {p.shape} vs {g.shape}")
    m = np.asarray(mask, dtype=bool) if mask is not None else g > 0
    if m.shape != g.shape:
        raise MetricError(f"mask shape {m.shape} does not match depth {g.shape}")
    if not m.any():
        raise MetricError("foreground mask selects no pixels")
    err = np.abs(p[m] - g[m])
    return float(err.mean()), float((err < tau).mean())


# -- evaluation report -------------------------------------------------------------


@dataclass
class ViewMetrics:
    view_index: int
    psnr: float
    ssim: float
    depth_abs_error: float | None = None
    depth_acc: float | None = None


@dataclass
class EvalReport:
    """Per-view metrics plus means, serializable to versioned JSON."""

    views: list
    mask: str = "whole-image"
    format_version: int = 1

    def to_dict(self) -> dict:
        def enc(v):
            if v is None:
                return None
            return "inf" if math.isinf(v) else float(v)

        finite = [v.psnr for v in self.views if math.isfinite(v.psnr)]
        means = {
            "psnr": float(np.mean(finite)) if finite else "inf",
            "ssim": float(np.mean([v.ssim for v in self.views])),
        }
        depth_err = [v.depth_abs_error for v in self.views
                     if v.depth_abs_error is not None]
        if depth_err:
            means["depth_abs_error"] = float(np.mean(depth_err))
            means["depth_acc"] = float(np.mean(
                [v.depth_acc for v in self.views if v.depth_acc is not None]))
        return {
            "format_version": self.format_version,
            "mask": self.mask,
            "views": [{
                "view_index": v.view_index,
                "psnr": enc(v.psnr),
                "ssim": enc(v.ssim),
                "depth_abs_error": enc(v.depth_abs_error),
                "depth_acc": enc(v.depth_acc),
            } for v in self.views],
            "mean": means,
            "num_infinite_psnr": sum(1 for v in self.views
                                     if math.isinf(v.psnr)),
        }
