"""MRI signal plumbing: centered FFTs, masks, k-space weighting, coils, phantoms."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ParameterError",
    "SamplingMask",
    "WeightMatrix",
    "fft2c",
    "ifft2c",
    "to_channels",
    "from_channels",
    "generate_mask",
    "weight_matrix",
    "apply_weight",
    "unapply_weight",
    "sos_combine",
    "apply_sensitivities",
    "adjoint_sensitivities",
    "shepp_logan",
    "random_phantom",
    "synth_sensitivities",
    "simulate_acquisition",
    "zero_filled",
]

MASK_KINDS = ("cartesian1d", "random2d", "poisson2d")


class ParameterError(ValueError):
    """Invalid parameter value (negative weight exponent, R too large, ...)."""


def _check_same_shape(a, b, what="inputs"):
    if np.shape(a) != np.shape(b):
        raise ParameterError(f"{what} have mismatched shapes {np.shape(a)} and {np.shape(b)}")


# ---------------------------------------------------------------------------
# transforms
# ---------------------------------------------------------------------------

def fft2c(x: np.ndarray) -> np.ndarray:
    """Centered orthonormal 2-D FFT over the last two axes (DC at the center)."""
    x = np.fft.ifftshift(x, axes=(-2, -1))
    x = np.fft.fft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def ifft2c(x: np.ndarray) -> np.ndarray:
    x = np.fft.ifftshift(x, axes=(-2, -1))
    x = np.fft.ifft2(x, norm="ortho")
    return np.fft.fftshift(x, axes=(-2, -1))


def to_channels(z: np.ndarray, dtype=None) -> np.ndarray:
    """Complex (..., H, W) -> real (..., 2, H, W) with real/imag channels."""
    out = np.stack([z.real, z.imag], axis=-3)
    return out if dtype is None else out.astype(dtype)


def from_channels(x: np.ndarray) -> np.ndarray:
    return x[..., 0, :, :] + 1j * x[..., 1, :, :]


# ---------------------------------------------------------------------------
# sampling masks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SamplingMask:
    pattern: np.ndarray
    kind: str
    accel: float
    seed: int

    @property
    def density(self) -> float:
        return float(self.pattern.mean())

    @property
    def omega(self) -> np.ndarray:
        return self.pattern.astype(bool)


def _cartesian1d(H, W, R, acs):
    if R > W:
        raise ParameterError(f"acceleration {R} exceeds {W} phase-encoding lines")
    cols = np.zeros(W, dtype=bool)
    center = W // 2
    cols[(np.arange(W) - center) % R == 0] = True
    if acs:
        lo = max(center - acs // 2, 0)
        cols[lo:lo + acs] = True
    return np.broadcast_to(cols, (H, W)).copy()


def _random2d(H, W, R, rng):
    n = int(round(H * W / R))
    flat = np.zeros(H * W, dtype=bool)
    flat[rng.permutation(H * W)[:n]] = True
    return flat.reshape(H, W)


def _dart_throw(H, W, r0, order, yy, xx):
    # radius grows linearly with distance from the k-space center
    dist = np.hypot(yy - H // 2, xx - W // 2) / (0.5 * np.hypot(H, W))
    radius = r0 * (1.0 + 2.0 * dist)
    occupied = np.zeros((H, W), dtype=bool)
    for idx in order:
        y, x = divmod(int(idx), W)
        r = radius[y, x]
        ri = int(np.floor(r))
        y0, y1 = max(y - ri, 0), min(y + ri + 1, H)
        x0, x1 = max(x - ri, 0), min(x + ri + 1, W)
        win = occupied[y0:y1, x0:x1]
        if win.any():
            wy, wx = np.nonzero(win)
            if np.min((wy + y0 - y) ** 2 + (wx + x0 - x) ** 2) < r * r:
                continue
        occupied[y, x] = True
    return occupied


def _poisson2d(H, W, R, rng, iters=18):
    target = H * W / R
    order = rng.permutation(H * W)
    yy, xx = np.mgrid[0:H, 0:W]
    lo, hi = 0.5, max(H, W) / 2.0
    best = None
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        pat = _dart_throw(H, W, mid, order, yy, xx)
        if best is None or abs(pat.sum() - target) < abs(best.sum() - target):
            best = pat
        if abs(pat.sum() - target) <= 0.01 * target:
            break
        if pat.sum() > target:
            lo = mid
        else:
            hi = mid
    pat = best.copy()
    # thin or grow at random to land on the target count
    n = int(round(target))
    on = np.flatnonzero(pat)
    if on.size > n:
        pat.flat[rng.choice(on, on.size - n, replace=False)] = False
    elif on.size < n:
        off = np.flatnonzero(~pat)
        pat.flat[rng.choice(off, n - on.size, replace=False)] = True
    return pat


def generate_mask(kind: str, R: float, H: int, W: int, seed: int = 0, acs: int = 0) -> SamplingMask:
    """Binary undersampling pattern with acceleration ``R``.

    ``cartesian1d`` keeps full readout (rows) and every R-th phase-encoding
    column through the center, plus ``acs`` central columns. ``random2d``
    picks round(H*W/R) pixels uniformly. ``poisson2d`` is variable-radius
    dart throwing with the base radius bisected to the target density.
    """
    if kind not in MASK_KINDS:
        raise ParameterError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    if R < 1:
        raise ParameterError(f"acceleration must be >= 1, got {R}")
    if R == 1:
        return SamplingMask(np.ones((H, W), dtype=np.uint8), kind, R, seed)
    rng = np.random.default_rng(seed)
    if kind == "cartesian1d":
        if R != int(R):
            raise ParameterError("cartesian1d needs an integer acceleration")
        pat = _cartesian1d(H, W, int(R), acs)
    elif kind == "random2d":
        pat = _random2d(H, W, R, rng)
    else:
        pat = _poisson2d(H, W, R, rng)
    return SamplingMask(pat.astype(np.uint8), kind, R, seed)


# ---------------------------------------------------------------------------
# k-space weighting
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WeightMatrix:
    values: np.ndarray
    r: float
    p: float
    floor: float


def frequency_grid(H: int, W: int) -> tuple[np.ndarray, np.ndarray]:
    """Centered integer frequencies (ky rows, kx columns) in [-N/2, N/2)."""
    ky = np.arange(H) - H // 2
    kx = np.arange(W) - W // 2
    return np.meshgrid(ky, kx, indexing="ij")


def weight_matrix(r: float, p: float, H: int, W: int, floor: float | None = None) -> WeightMatrix:
    """w = max((r*kx^2 + r*ky^2)^p, floor).

    ``floor`` defaults to 1e-3 of the unclamped maximum (or 1e-3 when that
    maximum is zero), keeping division by ``w`` defined at DC.
    """
    if r < 0 or p < 0:
        raise ParameterError(f"weight parameters must be non-negative, got r={r}, p={p}")
    ky, kx = frequency_grid(H, W)
    raw = np.power(r * kx.astype(float) ** 2 + r * ky.astype(float) ** 2, p)
    if floor is None:
        peak = raw.max()
        floor = 1e-3 * peak if peak > 0 else 1e-3
    if floor <= 0:
        raise ParameterError(f"floor must be positive, got {floor}")
    return WeightMatrix(np.maximum(raw, floor), float(r), float(p), float(floor))


def _weights(w) -> np.ndarray:
    return w.values if isinstance(w, WeightMatrix) else np.asarray(w)


def apply_weight(K: np.ndarray, w) -> np.ndarray:
    values = _weights(w)
    if K.shape[-2:] != values.shape:
        raise ParameterError(f"k-space shape {K.shape} does not match weight shape {values.shape}")
    return K * values


def unapply_weight(Kw: np.ndarray, w) -> np.ndarray:
    values = _weights(w)
    if Kw.shape[-2:] != values.shape:
        raise ParameterError(f"k-space shape {Kw.shape} does not match weight shape {values.shape}")
    return Kw / values


# ---------------------------------------------------------------------------
# coils
# ---------------------------------------------------------------------------

def sos_combine(coils: np.ndarray) -> np.ndarray:
    """Root sum of squares over the leading coil axis."""
    coils = np.asarray(coils)
    if coils.ndim != 3 or coils.shape[0] == 0:
        raise ParameterError(f"expected a non-empty (C, H, W) coil stack, got shape {coils.shape}")
    return np.sqrt(np.sum(np.abs(coils) ** 2, axis=0))


def apply_sensitivities(image: np.ndarray, maps: np.ndarray) -> np.ndarray:
    if image.shape != maps.shape[-2:]:
        raise ParameterError(f"image {image.shape} does not match maps {maps.shape}")
    return maps * image[None]


def adjoint_sensitivities(coils: np.ndarray, maps: np.ndarray) -> np.ndarray:
    _check_same_shape(coils, maps, "coil stack and maps")
    return np.sum(np.conj(maps) * coils, axis=0)


def synth_sensitivities(C: int, H: int, W: int, width: float = 0.45, seed: int | None = None) -> np.ndarray:
    """C smooth Gaussian lobes on a ring with smooth linear phase, SOS-normalized."""
    if C < 1:
        raise ParameterError("need at least one coil")
    yy, xx = np.mgrid[0:H, 0:W]
    yy = (yy - H / 2) / (H / 2)
    xx = (xx - W / 2) / (W / 2)
    if C == 1:
        return np.ones((1, H, W), dtype=complex)
    rng = np.random.default_rng(seed) if seed is not None else None
    maps = np.empty((C, H, W), dtype=complex)
    for c in range(C):
        ang = 2 * np.pi * c / C
        cy, cx = 0.8 * np.sin(ang), 0.8 * np.cos(ang)
        mag = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
        if rng is None:
            phase = 0.5 * np.pi * (np.cos(ang) * yy - np.sin(ang) * xx)
        else:
            a, b = rng.uniform(-0.5 * np.pi, 0.5 * np.pi, size=2)
            phase = a * yy + b * xx
        maps[c] = mag * np.exp(1j * phase)
    return maps / np.sqrt(np.sum(np.abs(maps) ** 2, axis=0))[None]


# ---------------------------------------------------------------------------
# phantoms and simulation
# ---------------------------------------------------------------------------

# modified Shepp-Logan (Toft): intensity, a, b, x0, y0, angle in degrees
_MODIFIED_SHEPP_LOGAN = np.array([
    [1.0, 0.69, 0.92, 0.0, 0.0, 0],
    [-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0],
    [-0.2, 0.1100, 0.3100, 0.22, 0.0, -18],
    [-0.2, 0.1600, 0.4100, -0.22, 0.0, 18],
    [0.1, 0.2100, 0.2500, 0.0, 0.35, 0],
    [0.1, 0.0460, 0.0460, 0.0, 0.1, 0],
    [0.1, 0.0460, 0.0460, 0.0, -0.1, 0],
    [0.1, 0.0460, 0.0230, -0.08, -0.605, 0],
    [0.1, 0.0230, 0.0230, 0.0, -0.606, 0],
    [0.1, 0.0230, 0.0460, 0.06, -0.605, 0],
])


def _ellipses(H, W, table):
    yy, xx = np.mgrid[0:H, 0:W]
    # y axis points up, as in the usual phantom plots
    y = 1.0 - 2.0 * (yy + 0.5) / H
    x = 2.0 * (xx + 0.5) / W - 1.0
    img = np.zeros((H, W))
    for rho, a, b, x0, y0, deg in table:
        t = np.deg2rad(deg)
        xr = (x - x0) * np.cos(t) + (y - y0) * np.sin(t)
        yr = -(x - x0) * np.sin(t) + (y - y0) * np.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += rho
    return img


def shepp_logan(H: int, W: int | None = None) -> np.ndarray:
    """Modified Shepp-Logan phantom with intensities in [0, 1]."""
    W = H if W is None else W
    return np.clip(_ellipses(H, W, _MODIFIED_SHEPP_LOGAN), 0.0, 1.0)


def random_phantom(H: int, W: int, rng: np.random.Generator) -> np.ndarray:
    """Randomly perturbed Shepp-Logan-like ellipse phantom in [0, 1]."""
    table = _MODIFIED_SHEPP_LOGAN.copy()
    n = len(table)
    table[:, 1:3] *= rng.uniform(0.8, 1.2, size=(n, 2))
    table[:, 3:5] += rng.uniform(-0.05, 0.05, size=(n, 2))
    table[:, 5] += rng.uniform(-15, 15, size=n)
    table[2:, 0] *= rng.uniform(0.5, 1.5, size=n - 2)
    img = _ellipses(H, W, table)
    img = np.clip(img, 0.0, None)
    return img / img.max()


def simulate_acquisition(image, maps, mask, noise_sigma: float = 0.0, seed: int = 0) -> np.ndarray:
    """Measured multi-coil k-space: M * (F(S_c I) + n_c)."""
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be non-negative")
    pattern = mask.pattern if isinstance(mask, SamplingMask) else np.asarray(mask)
    k = fft2c(apply_sensitivities(np.asarray(image, dtype=complex), maps))
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        # circular complex Gaussian with total variance noise_sigma^2
        k = k + noise_sigma / np.sqrt(2) * (rng.standard_normal(k.shape) + 1j * rng.standard_normal(k.shape))
    return k * pattern[None]


def zero_filled(f: np.ndarray) -> np.ndarray:
    """SOS image of the inverse-transformed measurements."""
    return sos_combine(ifft2c(f))
