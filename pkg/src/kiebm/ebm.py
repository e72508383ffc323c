"""Energy-based model: Langevin sampling, contrastive training, replay buffer, Adam."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import gradtensor as gt

__all__ = [
    "DOMAINS",
    "EnergyModel",
    "QuadraticEnergy",
    "LangevinConfig",
    "ReplayBuffer",
    "AdamState",
    "TrainConfig",
    "langevin_step",
    "langevin_sample",
    "ml_gradient",
    "adam_update",
    "train",
]

logger = logging.getLogger(__name__)

DOMAINS = ("image", "weighted-kspace")


class EnergyModel:
    """Residual energy network E_theta(x) for 2-channel (real, imag) inputs.

    The domain tag is fixed at creation; solvers refuse a model tagged for
    the other domain.
    """

    def __init__(self, params: dict, domain: str = "image", width: int = 64, dtype=np.float32):
        if domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")
        self.domain = domain
        self.width = int(width)
        self.dtype = np.dtype(dtype)
        self.plan = gt.architecture(self.width)
        self.params = {k: np.asarray(v, dtype=self.dtype) for k, v in params.items()}

    @classmethod
    def create(cls, domain="image", width=64, seed=0, dtype=np.float32):
        plan = gt.architecture(width)
        params = gt.init_params(plan, np.random.default_rng(seed), dtype=dtype)
        return cls(params, domain, width, dtype)

    @classmethod
    def zeros(cls, domain="image", width=64, dtype=np.float64):
        return cls(gt.zero_params(gt.architecture(width), dtype), domain, width, dtype)

    def copy(self):
        return EnergyModel({k: v.copy() for k, v in self.params.items()}, self.domain, self.width, self.dtype)

    def _cast(self, x):
        return np.asarray(x, dtype=self.dtype)

    def energy(self, x: np.ndarray) -> np.ndarray:
        return gt.energy(self.plan, self.params, self._cast(x))

    def grad_input(self, x: np.ndarray) -> np.ndarray:
        return gt.grad_input(self.plan, self.params, self._cast(x))

    def grad_params(self, x: np.ndarray, seed: np.ndarray | None = None) -> dict:
        return gt.grad_params(self.plan, self.params, self._cast(x), seed)

    def energy_and_param_grads(self, x, seed=None):
        e, _, gp = gt.energy_and_grads(self.plan, self.params, self._cast(x), seed, want_x=False)
        return e, gp


class QuadraticEnergy:
    """E(x) = |x|^2 / 2 per batch item; its Boltzmann density is N(0, I)."""

    domain = "image"

    def energy(self, x):
        return 0.5 * np.sum(np.reshape(x, (len(x), -1)) ** 2, axis=1)

    def grad_input(self, x):
        return np.array(x, copy=True)


@dataclass
class LangevinConfig:
    """x' = x - step/2 * clip(grad E) + N(0, noise_scale^2 * step)."""

    step: float = 20.0
    steps: int = 60
    noise_scale: float = 1e-3
    grad_clip: float = 0.01
    anneal: float = 1.0

    def __post_init__(self):
        if self.step < 0:
            raise ValueError("Langevin step must be non-negative")
        if self.steps < 1:
            raise ValueError("Langevin steps must be >= 1")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive")
        if not 0 < self.anneal <= 1:
            raise ValueError("anneal must lie in (0, 1]")


def langevin_step(model, x, step, noise_scale, grad_clip, rng: np.random.Generator):
    g = model.grad_input(x)
    if np.isfinite(grad_clip):
        g = np.clip(g, -grad_clip, grad_clip)
    out = x - 0.5 * step * g
    if noise_scale > 0 and step > 0:
        out = out + noise_scale * np.sqrt(step) * rng.standard_normal(x.shape)
    return out.astype(np.result_type(x), copy=False)


def langevin_sample(model, x0, config: LangevinConfig, rng, noise_scale=None):
    """Run ``config.steps`` Langevin steps from ``x0``; returns the last iterate."""
    noise = config.noise_scale if noise_scale is None else noise_scale
    x = np.array(x0, copy=True)
    for _ in range(config.steps):
        x = langevin_step(model, x, config.step, noise, config.grad_clip, rng)
    return x


class ReplayBuffer:
    """Fixed-capacity store of past negative samples, uniform eviction."""

    def __init__(self, capacity: int = 10_000, seed: int = 0, reuse: float = 0.95):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.reuse = reuse
        self.rng = np.random.default_rng(seed)
        self._items: list[np.ndarray] = []

    def __len__(self):
        return len(self._items)

    def push(self, samples: np.ndarray) -> None:
        for s in samples:
            if len(self._items) < self.capacity:
                self._items.append(np.array(s, copy=True))
            else:
                self._items[self.rng.integers(self.capacity)] = np.array(s, copy=True)

    def init_chains(self, n: int, shape: tuple, low=-1.0, high=1.0, dtype=np.float32):
        """Chain starts: from the buffer with probability ``reuse``, else uniform noise.

        Returns the batch and a boolean array flagging buffer-drawn entries.
        """
        x = self.rng.uniform(low, high, size=(n,) + tuple(shape)).astype(dtype)
        from_buffer = np.zeros(n, dtype=bool)
        if self._items:
            from_buffer = self.rng.random(n) < self.reuse
            idx = self.rng.integers(len(self._items), size=int(from_buffer.sum()))
            for slot, j in zip(np.flatnonzero(from_buffer), idx):
                x[slot] = self._items[j]
        return x, from_buffer


@dataclass
class AdamState:
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_update(state: AdamState, params: dict, grads: dict) -> dict:
    """One bias-corrected Adam step. Returns new parameter arrays; state is advanced."""
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    out = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k} has shape {g.shape}, parameter has {p.shape}")
        if k not in state.m:
            state.m[k] = np.zeros_like(p, dtype=np.float64)
            state.v[k] = np.zeros_like(p, dtype=np.float64)
        state.m[k] = state.beta1 * state.m[k] + (1 - state.beta1) * g
        state.v[k] = state.beta2 * state.v[k] + (1 - state.beta2) * g * g
        step = state.lr * (state.m[k] / bc1) / (np.sqrt(state.v[k] / bc2) + state.eps)
        out[k] = (p - step).astype(p.dtype)
    return out


def ml_gradient(model, positive, negative, reg: float = 0.0):
    """Contrastive gradient mean grad E(x+) - mean grad E(x-).

    With ``reg > 0`` the gradient of ``reg * (mean E(x+)^2 + mean E(x-)^2)``
    is added. Returns ``(grads, loss)`` where loss is the monitored
    contrastive value including the penalty.
    """
    positive = np.asarray(positive)
    negative = np.asarray(negative)
    if len(positive) == 0 or len(negative) == 0:
        raise ValueError("positive and negative batches must be non-empty")
    if positive.shape[1:] != negative.shape[1:]:
        raise ValueError(f"batch shapes differ: {positive.shape} vs {negative.shape}")
    n_pos, n_neg = len(positive), len(negative)
    x = np.concatenate([positive, negative])
    # two passes would double the tape; seed the backward with the loss weights instead
    e = model.energy(x)
    seed = np.concatenate([np.full(n_pos, 1.0 / n_pos), np.full(n_neg, -1.0 / n_neg)])
    if reg:
        seed = seed + 2.0 * reg * e / np.concatenate([np.full(n_pos, n_pos), np.full(n_neg, n_neg)])
    grads = model.grad_params(x, seed.astype(model.dtype if hasattr(model, "dtype") else e.dtype))
    e_pos, e_neg = e[:n_pos], e[n_pos:]
    loss = e_pos.mean() - e_neg.mean() + reg * (np.mean(e_pos ** 2) + np.mean(e_neg ** 2))
    return grads, float(loss)


@dataclass
class TrainConfig:
    epochs: int = 10
    batch: int = 16
    lr: float = 3e-4
    reg: float = 0.1
    noise_amps: tuple = (0.0, 1 / 256, 2 / 256, 4 / 256)
    init_range: tuple = (-1.0, 1.0)
    max_steps: int | None = None


def train(model: EnergyModel, dataset, buffer: ReplayBuffer, langevin: LangevinConfig, adam: AdamState,
          config: TrainConfig, rng: np.random.Generator):
    """Contrastive maximum-likelihood training with persistent Langevin chains.

    Each step draws a positive batch (data plus uniform noise of a randomly
    chosen amplitude), starts negative chains from the replay buffer or
    uniform noise, refines them with Langevin dynamics, stores them back and
    takes one Adam step. Returns the per-step loss trace; ``model`` is updated
    in place.
    """
    dataset = np.asarray(dataset, dtype=model.dtype)
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    n = len(dataset)
    lo, hi = config.init_range
    span = hi - lo
    trace = []
    steps_done = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch):
            if config.max_steps is not None and steps_done >= config.max_steps:
                return trace
            idx = order[start:start + config.batch]
            amp = config.noise_amps[rng.integers(len(config.noise_amps))] * span
            pos = dataset[idx] + rng.uniform(-amp, amp, size=dataset[idx].shape).astype(model.dtype)
            neg0, _ = buffer.init_chains(len(idx), dataset.shape[1:], lo, hi, model.dtype)
            neg = langevin_sample(model, neg0, langevin, rng)
            buffer.push(neg)
            grads, loss = ml_gradient(model, pos, neg, config.reg)
            model.params = adam_update(adam, model.params, grads)
            if not all(np.all(np.isfinite(v)) for v in model.params.values()):
                raise FloatingPointError("non-finite parameters after Adam step")
            trace.append(loss)
            steps_done += 1
        logger.debug("epoch %d loss %.4g", epoch, trace[-1] if trace else float("nan"))
    return trace
