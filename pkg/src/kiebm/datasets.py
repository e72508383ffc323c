"""Synthetic training sets and domain conversion for the energy models."""
from __future__ import annotations

import numpy as np

from .mri import apply_weight, fft2c, random_phantom, synth_sensitivities, to_channels, weight_matrix

__all__ = ["coil_images", "to_domain", "two_blob_images", "random_crops"]


def coil_images(n: int, H: int, W: int, seed: int = 0, coils: int = 4) -> np.ndarray:
    """Single-coil complex images: random phantom times one random coil map.

    Every image is scaled to unit peak magnitude.
    """
    rng = np.random.default_rng(seed)
    out = np.empty((n, H, W), dtype=complex)
    for i in range(n):
        img = random_phantom(H, W, rng)
        maps = synth_sensitivities(coils, H, W, seed=int(rng.integers(2**31)))
        z = maps[rng.integers(coils)] * img
        out[i] = z / np.abs(z).max()
    return out


def to_domain(images: np.ndarray, domain: str, weight=None, dtype=np.float32) -> np.ndarray:
    """Complex images (N, H, W) -> network inputs (N, 2, H, W) for ``domain``.

    The weighted-k-space domain multiplies the centered spectrum by the
    weight matrix. Each sample is scaled to unit peak magnitude.
    """
    z = np.asarray(images)
    if z.ndim == 2:
        z = z[None]
    if z.ndim != 3:
        raise ValueError(f"expected (N, H, W) images, got shape {z.shape}")
    if domain == "weighted-kspace":
        if weight is None:
            weight = weight_matrix(0.1, 0.5, z.shape[-2], z.shape[-1])
        z = apply_weight(fft2c(z), weight)
    elif domain != "image":
        raise ValueError(f"unknown domain {domain!r}")
    peak = np.max(np.abs(z), axis=(-2, -1), keepdims=True)
    z = z / np.where(peak > 0, peak, 1.0)
    return to_channels(z, dtype=dtype)


def two_blob_images(n: int, size: int = 8, seed: int = 0, dtype=np.float32) -> np.ndarray:
    """Toy two-mode set: a bright blob in the upper-left or lower-right quadrant.

    Returned already as 2-channel inputs (imaginary channel zero), values in [0, 1].
    """
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    out = np.zeros((n, 2, size, size), dtype=dtype)
    for i in range(n):
        mode = rng.integers(2)
        c = size * (0.3 if mode == 0 else 0.7) + rng.normal(0, 0.3, size=2)
        sigma = size * rng.uniform(0.12, 0.18)
        out[i, 0] = np.exp(-((yy - c[0]) ** 2 + (xx - c[1]) ** 2) / (2 * sigma ** 2))
    return out


def random_crops(x: np.ndarray, n: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Random ``size`` x ``size`` spatial crops of (N, C, H, W) inputs."""
    N, _, H, W = x.shape
    out = np.empty((n, x.shape[1], size, size), dtype=x.dtype)
    for k in range(n):
        i = rng.integers(N)
        y, z = rng.integers(0, H - size + 1), rng.integers(0, W - size + 1)
        out[k] = x[i, :, y:y + size, z:z + size]
    return out
