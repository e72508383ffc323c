"""Reconstruction solvers alternating Langevin prior steps with data consistency.

Four schedules share the same building blocks:

* ``i-ebm``: image-domain prior on each coil image.
* ``k-ebm``: prior on weighted k-space of each coil.
* ``pki-ebm``: both priors from the same iterate, k-space estimates averaged.
* ``ski-ebm``: a full k-space run followed by an image-domain run.

Every outer iteration ends with a closed-form data-consistency step, so with
``lambda = 0`` the measured samples are reproduced exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .ebm import LangevinConfig, langevin_sample
from .metrics import psnr
from .mri import (
    adjoint_sensitivities,
    apply_sensitivities,
    apply_weight,
    fft2c,
    from_channels,
    ifft2c,
    sos_combine,
    to_channels,
    unapply_weight,
    weight_matrix,
)

__all__ = [
    "METHODS",
    "ConfigurationError",
    "ReconConfig",
    "ReconResult",
    "dc_kspace",
    "dc_image",
    "recon_iebm",
    "recon_kebm",
    "recon_pki",
    "recon_ski",
    "reconstruct",
]

METHODS = ("i-ebm", "k-ebm", "pki-ebm", "ski-ebm")
CALIBRATIONS = ("sos-calibration-free", "sensitivity-known")


class ConfigurationError(ValueError):
    """Model/domain or solver configuration mismatch."""


@dataclass
class ReconConfig:
    method: str = "pki-ebm"
    lambda_i: float = 0.0
    lambda_k: float = 0.0
    outer_iters: int = 200
    stage2_iters: int | None = None
    # inference sampler: the training step (20) overshoots when applied every outer iteration
    langevin: LangevinConfig = field(default_factory=lambda: LangevinConfig(step=0.01, steps=5))
    noise_decay: float = 0.97
    weight_r: float = 0.1
    weight_p: float = 0.5
    weight_floor: float | None = None
    calibration: str = "sos-calibration-free"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.calibration not in CALIBRATIONS:
            raise ConfigurationError(f"unknown calibration {self.calibration!r}")
        if self.outer_iters < 1:
            raise ConfigurationError("outer_iters must be >= 1")
        if self.lambda_i < 0 or self.lambda_k < 0:
            raise ConfigurationError("lambda_i and lambda_k must be non-negative")
        if self.stage2_iters is not None and self.stage2_iters < 0:
            raise ConfigurationError("stage2_iters must be >= 0")


@dataclass
class ReconResult:
    image: np.ndarray
    coils: np.ndarray
    kspace: np.ndarray
    psnr_trace: list = field(default_factory=list)
    stage1_image: np.ndarray | None = None


def _pattern(mask):
    pattern = getattr(mask, "pattern", mask)
    return np.asarray(pattern).astype(bool)


def dc_kspace(K: np.ndarray, f: np.ndarray, mask, lambda_k: float) -> np.ndarray:
    """Closed-form k-space consistency: sampled entries -> (f + lambda K) / (1 + lambda)."""
    if K.shape != f.shape:
        raise ValueError(f"estimate {K.shape} and measurements {f.shape} differ in shape")
    omega = _pattern(mask)
    if omega.shape != K.shape[-2:]:
        raise ValueError(f"mask {omega.shape} does not match k-space {K.shape}")
    omega = np.broadcast_to(omega, K.shape)
    if lambda_k == 0:
        fused = f
    else:
        fused = (f + lambda_k * K) / (1.0 + lambda_k)
    return np.where(omega, fused, K)


def dc_image(I: np.ndarray, f: np.ndarray, mask, lambda_i: float) -> np.ndarray:
    """Image-domain consistency: transform, replace sampled entries, transform back."""
    return ifft2c(dc_kspace(fft2c(I), f, mask, lambda_i))


# ---------------------------------------------------------------------------
# prior blocks
# ---------------------------------------------------------------------------

def _check_domain(model, domain):
    if model is None or getattr(model, "domain", None) != domain:
        got = getattr(model, "domain", None)
        raise ConfigurationError(f"expected a {domain!r} model, got {got!r}")


def _langevin_complex(model, z: np.ndarray, cfg: LangevinConfig, noise, rng) -> np.ndarray:
    """Run the prior on a stack of complex planes, each scaled to unit peak magnitude."""
    scale = np.max(np.abs(z), axis=(-2, -1), keepdims=True)
    scale = np.where(scale > 0, scale, 1.0)
    dtype = getattr(model, "dtype", np.float64)
    x = to_channels(z / scale, dtype=dtype)
    x = langevin_sample(model, x, cfg, rng, noise_scale=noise)
    return from_channels(x.astype(np.float64)) * scale


def _image_prior(model, coils, lv, noise, rng):
    return _langevin_complex(model, coils, lv, noise, rng)


def _kspace_prior(model, K, w, lv, noise, rng):
    return unapply_weight(_langevin_complex(model, apply_weight(K, w), lv, noise, rng), w)


class _Tracker:
    def __init__(self, truth):
        self.truth = truth
        self.trace = []

    def __call__(self, image):
        if self.truth is not None:
            self.trace.append(psnr(image, self.truth, data_range=float(self.truth.max())))


def _noise_at(cfg, it):
    return cfg.langevin.noise_scale * cfg.noise_decay ** it


def _langevin_at(cfg, it):
    """Sampler settings for outer iteration ``it``; ``anneal`` shrinks the step geometrically."""
    if cfg.langevin.anneal == 1.0:
        return cfg.langevin
    return replace(cfg.langevin, step=cfg.langevin.step * cfg.langevin.anneal ** it)


def _weight_for(cfg, shape):
    return weight_matrix(cfg.weight_r, cfg.weight_p, shape[-2], shape[-1], cfg.weight_floor)


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------

def _iebm_loop(coils, f, mask, model_i, cfg, rng, iters, track, maps=None):
    K = fft2c(coils)
    for it in range(iters):
        noise = _noise_at(cfg, it)
        if maps is None:
            coils = _image_prior(model_i, coils, _langevin_at(cfg, it), noise, rng)
        else:
            single = adjoint_sensitivities(coils, maps)
            single = _image_prior(model_i, single[None], _langevin_at(cfg, it), noise, rng)[0]
            coils = apply_sensitivities(single, maps)
        K = dc_kspace(fft2c(coils), f, mask, cfg.lambda_i)
        coils = ifft2c(K)
        track(sos_combine(coils))
    return coils, K


def _kebm_loop(K, f, mask, model_k, cfg, rng, iters, track):
    w = _weight_for(cfg, K.shape)
    for it in range(iters):
        K = _kspace_prior(model_k, K, w, _langevin_at(cfg, it), _noise_at(cfg, it), rng)
        K = dc_kspace(K, f, mask, cfg.lambda_k)
        track(sos_combine(ifft2c(K)))
    return K


def _result(K, coils, tracker, maps=None, stage1=None):
    if maps is not None:
        image = np.abs(adjoint_sensitivities(coils, maps))
    else:
        image = sos_combine(coils)
    return ReconResult(image=image, coils=coils, kspace=K, psnr_trace=tracker.trace, stage1_image=stage1)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def recon_iebm(f, mask, model_i, cfg: ReconConfig, rng=0, truth=None, maps=None) -> ReconResult:
    """Image-domain prior; ``maps`` given means sensitivity-known reconstruction."""
    _check_domain(model_i, "image")
    if cfg.calibration == "sensitivity-known" and maps is None:
        raise ConfigurationError("sensitivity-known calibration needs sensitivity maps")
    maps = maps if cfg.calibration == "sensitivity-known" else None
    tracker = _Tracker(truth)
    coils, K = _iebm_loop(ifft2c(f), f, mask, model_i, cfg, _rng(rng), cfg.outer_iters, tracker, maps)
    return _result(K, coils, tracker, maps)


def recon_kebm(f, mask, model_k, cfg: ReconConfig, rng=0, truth=None) -> ReconResult:
    _check_domain(model_k, "weighted-kspace")
    tracker = _Tracker(truth)
    K = _kebm_loop(np.array(f, dtype=complex), f, mask, model_k, cfg, _rng(rng), cfg.outer_iters, tracker)
    return _result(K, ifft2c(K), tracker)


def recon_pki(f, mask, model_k, model_i, cfg: ReconConfig, rng=0, truth=None) -> ReconResult:
    """Parallel fusion: both priors see the same post-DC iterate; k-space outputs are averaged."""
    _check_domain(model_k, "weighted-kspace")
    _check_domain(model_i, "image")
    rng = _rng(rng)
    tracker = _Tracker(truth)
    w = _weight_for(cfg, f.shape)
    K = np.array(f, dtype=complex)
    for it in range(cfg.outer_iters):
        noise = _noise_at(cfg, it)
        lv = _langevin_at(cfg, it)
        k_branch = _kspace_prior(model_k, K, w, lv, noise, rng)
        i_branch = fft2c(_image_prior(model_i, ifft2c(K), lv, noise, rng))
        K = dc_kspace(0.5 * (k_branch + i_branch), f, mask, cfg.lambda_k)
        tracker(sos_combine(ifft2c(K)))
    return _result(K, ifft2c(K), tracker)


def recon_ski(f, mask, model_k, model_i, cfg: ReconConfig, rng=0, truth=None) -> ReconResult:
    """Sequential fusion: k-space interpolation, then image-domain refinement."""
    _check_domain(model_k, "weighted-kspace")
    _check_domain(model_i, "image")
    rng = _rng(rng)
    tracker = _Tracker(truth)
    K = _kebm_loop(np.array(f, dtype=complex), f, mask, model_k, cfg, rng, cfg.outer_iters, tracker)
    coils = ifft2c(K)
    stage1 = sos_combine(coils)
    stage2 = cfg.outer_iters if cfg.stage2_iters is None else cfg.stage2_iters
    coils, K2 = _iebm_loop(coils, f, mask, model_i, cfg, rng, stage2, tracker)
    if stage2 == 0:
        return _result(K, coils, tracker, stage1=stage1)
    return _result(K2, coils, tracker, stage1=stage1)


def reconstruct(f, mask, cfg: ReconConfig, model_i=None, model_k=None, rng=0, truth=None, maps=None) -> ReconResult:
    """Dispatch on ``cfg.method``."""
    if cfg.method == "i-ebm":
        return recon_iebm(f, mask, model_i, cfg, rng, truth, maps)
    if cfg.method == "k-ebm":
        return recon_kebm(f, mask, model_k, cfg, rng, truth)
    if cfg.method == "pki-ebm":
        return recon_pki(f, mask, model_k, model_i, cfg, rng, truth)
    return recon_ski(f, mask, model_k, model_i, cfg, rng, truth)
