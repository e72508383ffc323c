"""PSNR and SSIM on real magnitude images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

__all__ = ["PSNR_CAP", "MetricReport", "psnr", "ssim", "evaluate"]

PSNR_CAP = 200.0

_WIN = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


@dataclass(frozen=True)
class MetricReport:
    psnr_db: float
    ssim: float
    data_range: float

    def as_record(self) -> str:
        return f"psnr_db={self.psnr_db:.6f} ssim={self.ssim:.6f} data_range={self.data_range:.6g}"


def _pair(x, ref):
    x = np.asarray(x, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if x.shape != ref.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {ref.shape}")
    return x, ref


def psnr(x, ref, data_range: float) -> float:
    """10 log10(range^2 / MSE), capped at PSNR_CAP for identical inputs."""
    x, ref = _pair(x, ref)
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    mse = np.mean((x - ref) ** 2)
    if mse == 0:
        return PSNR_CAP
    return float(min(10.0 * np.log10(data_range ** 2 / mse), PSNR_CAP))


def _gauss(img):
    # truncate=3.5 gives an 11-tap window at sigma 1.5
    return gaussian_filter(img, _SIGMA, truncate=3.5, mode="reflect")


def ssim(x, ref, data_range: float) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    The mean runs over pixels whose full window lies inside the image.
    """
    x, ref = _pair(x, ref)
    if x.ndim != 2 or min(x.shape) < _WIN:
        raise ValueError(f"images must be 2-D and at least {_WIN}x{_WIN}, got {x.shape}")
    c1 = (_K1 * data_range) ** 2
    c2 = (_K2 * data_range) ** 2
    mx, my = _gauss(x), _gauss(ref)
    sxx = _gauss(x * x) - mx * mx
    syy = _gauss(ref * ref) - my * my
    sxy = _gauss(x * ref) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    pad = _WIN // 2
    return float(np.mean((num / den)[pad:-pad, pad:-pad]))


def evaluate(x, ref, data_range: float | None = None) -> MetricReport:
    data_range = float(np.max(ref)) if data_range is None else float(data_range)
    return MetricReport(psnr(x, ref, data_range), ssim(x, ref, data_range), data_range)
