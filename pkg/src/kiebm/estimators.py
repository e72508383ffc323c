"""scikit-learn style wrappers around the energy priors and solvers."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, clone
from sklearn.utils.validation import check_is_fitted

from . import datasets
from .ebm import AdamState, EnergyModel, LangevinConfig, ReplayBuffer, TrainConfig, train
from .mri import weight_matrix
from .recon import ReconConfig, reconstruct

__all__ = ["check_complex_images", "check_kspace", "EnergyPrior", "KIEBMReconstructor"]


def check_complex_images(X, name="X") -> np.ndarray:
    """Validate a stack of complex images and return it as (N, H, W) complex128."""
    X = np.asarray(X)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise ValueError(f"{name} must have shape (n_samples, H, W), got {X.shape}")
    if X.shape[0] == 0:
        raise ValueError(f"{name} is empty")
    if not np.issubdtype(X.dtype, np.number):
        raise TypeError(f"{name} must be numeric, got {X.dtype}")
    X = X.astype(complex)
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or infinity")
    return X


def check_kspace(f, mask):
    f = check_complex_images(f, "kspace")
    pattern = np.asarray(getattr(mask, "pattern", mask))
    if pattern.shape != f.shape[-2:]:
        raise ValueError(f"mask shape {pattern.shape} does not match k-space {f.shape[-2:]}")
    if not np.all((pattern == 0) | (pattern == 1)):
        raise ValueError("mask entries must be 0 or 1")
    return f, pattern.astype(np.uint8)


class EnergyPrior(BaseEstimator):
    """Energy-based prior learned from complex single-coil images.

    ``fit`` converts the images to the estimator's domain (image, or
    weighted k-space using ``weight_r``/``weight_p``) and runs contrastive
    training with Langevin negatives and a replay buffer.
    """

    def __init__(self, domain="image", width=64, weight_r=0.1, weight_p=0.5, weight_floor=None,
                 langevin_step=20.0, langevin_steps=60, noise_scale=1e-3, grad_clip=0.01,
                 epochs=10, batch_size=16, learning_rate=None, reg=0.1,
                 noise_amps=(0.0, 1 / 256, 2 / 256, 4 / 256), buffer_capacity=10_000,
                 max_steps=None, crop=None, random_state=0):
        self.domain = domain
        self.width = width
        self.weight_r = weight_r
        self.weight_p = weight_p
        self.weight_floor = weight_floor
        self.langevin_step = langevin_step
        self.langevin_steps = langevin_steps
        self.noise_scale = noise_scale
        self.grad_clip = grad_clip
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.reg = reg
        self.noise_amps = noise_amps
        self.buffer_capacity = buffer_capacity
        self.max_steps = max_steps
        self.crop = crop
        self.random_state = random_state

    def _weight(self, shape):
        if self.domain != "weighted-kspace":
            return None
        return weight_matrix(self.weight_r, self.weight_p, shape[-2], shape[-1], self.weight_floor)

    def _domain_inputs(self, X):
        X = check_complex_images(X)
        return datasets.to_domain(X, self.domain, self._weight(X.shape))

    def fit(self, X, y=None):
        data = self._domain_inputs(X)
        rng = np.random.default_rng(self.random_state)
        if self.crop:
            data = datasets.random_crops(data, max(len(data), 8 * self.batch_size), self.crop, rng)
        lr = self.learning_rate
        if lr is None:
            lr = 3e-4 if self.domain == "image" else 5e-4
        self.model_ = EnergyModel.create(self.domain, self.width, seed=self.random_state)
        self.buffer_ = ReplayBuffer(self.buffer_capacity, seed=self.random_state)
        self.langevin_ = LangevinConfig(self.langevin_step, self.langevin_steps, self.noise_scale, self.grad_clip)
        self.optimizer_ = AdamState(lr=lr)
        config = TrainConfig(self.epochs, self.batch_size, lr, self.reg, tuple(self.noise_amps),
                             max_steps=self.max_steps)
        self.loss_trace_ = train(self.model_, data, self.buffer_, self.langevin_, self.optimizer_, config, rng)
        return self

    def energy(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.model_.energy(self._domain_inputs(X))

    def score_samples(self, X) -> np.ndarray:
        """Unnormalized log density, -E(x)."""
        return -self.energy(X)


class KIEBMReconstructor(BaseEstimator):
    """Undersampled multi-coil reconstruction with image and/or k-space energy priors.

    ``image_prior`` and ``kspace_prior`` may be unfitted :class:`EnergyPrior`
    templates (trained by ``fit``), fitted ones, or :class:`EnergyModel`
    instances (used as-is).
    """

    def __init__(self, method="pki-ebm", image_prior=None, kspace_prior=None, lambda_i=0.0, lambda_k=0.0,
                 outer_iters=200, stage2_iters=None, langevin_step=0.01, langevin_steps=5, noise_scale=1e-3,
                 grad_clip=0.01, noise_decay=0.97, weight_r=0.1, weight_p=0.5, weight_floor=None,
                 calibration="sos-calibration-free", random_state=0):
        self.method = method
        self.image_prior = image_prior
        self.kspace_prior = kspace_prior
        self.lambda_i = lambda_i
        self.lambda_k = lambda_k
        self.outer_iters = outer_iters
        self.stage2_iters = stage2_iters
        self.langevin_step = langevin_step
        self.langevin_steps = langevin_steps
        self.noise_scale = noise_scale
        self.grad_clip = grad_clip
        self.noise_decay = noise_decay
        self.weight_r = weight_r
        self.weight_p = weight_p
        self.weight_floor = weight_floor
        self.calibration = calibration
        self.random_state = random_state

    def _needs(self):
        return {
            "i-ebm": ("image",),
            "k-ebm": ("weighted-kspace",),
        }.get(self.method, ("image", "weighted-kspace"))

    @staticmethod
    def _as_model(prior):
        if isinstance(prior, EnergyModel):
            return prior
        return prior.model_

    def fit(self, X, y=None):
        """Train whichever priors the method needs on complex images ``X``."""
        X = check_complex_images(X)
        needs = self._needs()
        if "image" in needs:
            self.image_model_ = self._fit_prior(self.image_prior, "image", X)
        if "weighted-kspace" in needs:
            self.kspace_model_ = self._fit_prior(self.kspace_prior, "weighted-kspace", X)
        return self

    def _fit_prior(self, prior, domain, X):
        if isinstance(prior, EnergyModel):
            return prior
        if prior is None:
            prior = EnergyPrior(domain=domain)
        prior = clone(prior).set_params(domain=domain)
        if domain == "weighted-kspace":
            prior.set_params(weight_r=self.weight_r, weight_p=self.weight_p, weight_floor=self.weight_floor)
        return prior.fit(X).model_

    def config(self) -> ReconConfig:
        return ReconConfig(
            method=self.method, lambda_i=self.lambda_i, lambda_k=self.lambda_k, outer_iters=self.outer_iters,
            stage2_iters=self.stage2_iters,
            langevin=LangevinConfig(self.langevin_step, self.langevin_steps, self.noise_scale, self.grad_clip),
            noise_decay=self.noise_decay, weight_r=self.weight_r, weight_p=self.weight_p,
            weight_floor=self.weight_floor, calibration=self.calibration,
        )

    def _models(self):
        needs = self._needs()
        models = {}
        for domain, attr, given in (("image", "image_model_", self.image_prior),
                                    ("weighted-kspace", "kspace_model_", self.kspace_prior)):
            if domain not in needs:
                continue
            if hasattr(self, attr):
                models[domain] = getattr(self, attr)
            elif isinstance(given, EnergyModel) or hasattr(given, "model_"):
                models[domain] = self._as_model(given)
            else:
                check_is_fitted(self, attr)
        return models.get("image"), models.get("weighted-kspace")

    def reconstruct(self, kspace, mask, truth=None, maps=None):
        """Full :class:`ReconResult` for measured coil k-space (C, H, W)."""
        f, pattern = check_kspace(kspace, mask)
        model_i, model_k = self._models()
        return reconstruct(f * pattern, pattern, self.config(), model_i=model_i, model_k=model_k,
                           rng=np.random.default_rng(self.random_state), truth=truth, maps=maps)

    def predict(self, kspace, mask):
        """SOS magnitude image."""
        return self.reconstruct(kspace, mask).image
