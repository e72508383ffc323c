"""Small reverse-mode differentiation engine for the residual energy network.

Only the layers the energy network needs are provided: same-padded 2-D
convolution (3x3 and 1x1, stride 1 or 2), bias, Swish, residual add, global
sum pooling and a dense scalar head. Every op records itself on a
:class:`Tape`; :meth:`Tape.backward` walks the records in reverse.

Tensors are plain ``numpy`` arrays in NCHW layout wrapped by :class:`Var`.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ShapeError",
    "Var",
    "Tape",
    "conv2d",
    "add_bias",
    "swish",
    "add",
    "global_sum_pool",
    "dense",
    "resblock",
    "architecture",
    "init_params",
    "zero_params",
    "energy_forward",
    "energy",
    "grad_input",
    "grad_params",
    "energy_and_grads",
]


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible with an op."""


class Var:
    """A value recorded on a tape, with an accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value: np.ndarray, requires_grad: bool = True):
        self.value = value
        self.grad = None
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


@dataclass
class Tape:
    """Ordered record of primitive ops. Single use."""

    records: list = field(default_factory=list)
    consumed: bool = False

    def leaf(self, value: np.ndarray, requires_grad: bool = True) -> Var:
        return Var(np.asarray(value), requires_grad)

    def record(self, out: Var, backward: Callable[[np.ndarray], None]) -> Var:
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self.records.append((out, backward))
        return out

    def backward(self, out: Var, seed: np.ndarray | None = None) -> None:
        if self.consumed:
            raise RuntimeError("tape already consumed by a backward pass")
        self.consumed = True
        out.grad = np.ones_like(out.value) if seed is None else np.asarray(seed, dtype=out.value.dtype)
        for node, backward in reversed(self.records):
            if node.grad is not None:
                backward(node.grad)


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def _out_size(n: int, stride: int) -> int:
    return (n - 1) // stride + 1


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(n, c * kh * kw, ho * wo)


def conv2d(tape: Tape, x: Var, k: Var, stride: int = 1) -> Var:
    """Zero-padded 'same' cross-correlation; output spatial size ceil(in/stride)."""
    if stride not in (1, 2):
        raise ShapeError(f"stride must be 1 or 2, got {stride}")
    n, c, h, w = x.shape
    o, ci, kh, kw = k.shape
    if ci != c:
        raise ShapeError(f"kernel expects {ci} input channels, got {c}")
    if kh != kw or kh % 2 != 1:
        raise ShapeError(f"kernel must be square with odd size, got {kh}x{kw}")
    pad = kh // 2
    ho, wo = _out_size(h, stride), _out_size(w, stride)
    xp = np.pad(x.value, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.value
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    kmat = k.value.reshape(o, -1)
    y = np.matmul(kmat, cols).reshape(n, o, ho, wo)
    out = Var(y)

    def backward(g):
        gm = g.reshape(n, o, ho * wo)
        if k.requires_grad:
            gk = np.einsum("nop,nqp->oq", gm, cols, optimize=True)
            k._accumulate(gk.reshape(k.shape))
        if x.requires_grad:
            gcols = np.matmul(kmat.T, gm).reshape(n, c, kh, kw, ho, wo)
            gxp = np.zeros(xp.shape, dtype=xp.dtype)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            x._accumulate(gxp[:, :, pad:pad + h, pad:pad + w] if pad else gxp)

    return tape.record(out, backward)


def add_bias(tape: Tape, x: Var, b: Var) -> Var:
    if b.shape != (x.shape[1],):
        raise ShapeError(f"bias shape {b.shape} does not match {x.shape[1]} channels")
    out = Var(x.value + b.value[None, :, None, None])

    def backward(g):
        x._accumulate(g)
        b._accumulate(g.sum(axis=(0, 2, 3)))

    return tape.record(out, backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp overflow to inf still yields the correct limit 0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def swish(tape: Tape, x: Var) -> Var:
    s = _sigmoid(x.value)
    out = Var(x.value * s)

    def backward(g):
        x._accumulate(g * (s + x.value * s * (1.0 - s)))

    return tape.record(out, backward)


def add(tape: Tape, a: Var, b: Var) -> Var:
    if a.shape != b.shape:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    out = Var(a.value + b.value)

    def backward(g):
        a._accumulate(g)
        b._accumulate(g)

    return tape.record(out, backward)


def global_sum_pool(tape: Tape, x: Var) -> Var:
    out = Var(x.value.sum(axis=(2, 3), keepdims=True))
    spatial = x.shape[2:]

    def backward(g):
        x._accumulate(np.broadcast_to(g, g.shape[:2] + spatial))

    return tape.record(out, backward)


def dense(tape: Tape, x: Var, w: Var, b: Var) -> Var:
    """(N, C, 1, 1) pooled features -> (N,) scalars."""
    n, c = x.shape[:2]
    if w.shape != (c,):
        raise ShapeError(f"dense weight shape {w.shape} does not match {c} features")
    feats = x.value.reshape(n, c)
    out = Var(feats @ w.value + b.value[0])

    def backward(g):
        w._accumulate(feats.T @ g)
        b._accumulate(np.array([g.sum()], dtype=g.dtype))
        x._accumulate(np.outer(g, w.value).reshape(x.shape))

    return tape.record(out, backward)


# ---------------------------------------------------------------------------
# residual energy network
# ---------------------------------------------------------------------------

def resblock(tape: Tape, x: Var, p: dict, downsample: bool = False) -> Var:
    """Pre-activation residual block: x + conv(swish(conv(swish(x)))).

    With ``downsample`` the first conv has stride 2 and the shortcut is a
    1x1 stride-2 projection, so spatial dims halve and channels change.
    """
    stride = 2 if downsample else 1
    h = swish(tape, x)
    h = add_bias(tape, conv2d(tape, h, p["conv1.w"], stride), p["conv1.b"])
    h = swish(tape, h)
    h = add_bias(tape, conv2d(tape, h, p["conv2.w"]), p["conv2.b"])
    if downsample:
        shortcut = conv2d(tape, x, p["proj.w"], 2)
    else:
        shortcut = x
    if shortcut.shape != h.shape:
        raise ShapeError(f"shortcut {shortcut.shape} and residual path {h.shape} differ")
    return add(tape, shortcut, h)


def architecture(width: int = 64, in_channels: int = 2) -> list[dict]:
    """Layer plan: stem conv, then four blocks alternating plain/downsample."""
    w = width
    return [
        {"name": "stem", "kind": "conv", "in": in_channels, "out": w},
        {"name": "block1", "kind": "res", "in": w, "out": w, "down": False},
        {"name": "block2", "kind": "res", "in": w, "out": 2 * w, "down": True},
        {"name": "block3", "kind": "res", "in": 2 * w, "out": 2 * w, "down": False},
        {"name": "block4", "kind": "res", "in": 2 * w, "out": 4 * w, "down": True},
        {"name": "head", "kind": "dense", "in": 4 * w, "out": 1},
    ]


def n_downsamples(plan: list[dict]) -> int:
    return sum(1 for layer in plan if layer.get("down"))


def _param_shapes(plan: list[dict]) -> dict[str, tuple]:
    shapes = {}
    for layer in plan:
        name, ci, co = layer["name"], layer["in"], layer["out"]
        if layer["kind"] == "conv":
            shapes[f"{name}.w"] = (co, ci, 3, 3)
            shapes[f"{name}.b"] = (co,)
        elif layer["kind"] == "res":
            shapes[f"{name}.conv1.w"] = (co, ci, 3, 3)
            shapes[f"{name}.conv1.b"] = (co,)
            shapes[f"{name}.conv2.w"] = (co, co, 3, 3)
            shapes[f"{name}.conv2.b"] = (co,)
            if layer["down"]:
                shapes[f"{name}.proj.w"] = (co, ci, 1, 1)
        else:
            shapes[f"{name}.w"] = (ci,)
            shapes[f"{name}.b"] = (1,)
    return shapes


def zero_params(plan: list[dict], dtype=np.float64) -> dict[str, np.ndarray]:
    return {k: np.zeros(s, dtype=dtype) for k, s in _param_shapes(plan).items()}


def init_params(plan: list[dict], rng: np.random.Generator, dtype=np.float32) -> dict[str, np.ndarray]:
    """Kernels ~ N(0, 1/fan_in), biases zero."""
    params = {}
    for key, shape in _param_shapes(plan).items():
        if key.endswith(".b"):
            params[key] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if len(shape) > 1 else shape[0]
            params[key] = (rng.standard_normal(shape) / np.sqrt(fan_in)).astype(dtype)
    return params


def energy_forward(plan: list[dict], params: dict, x: Var, tape: Tape, leaves: dict | None = None) -> Var:
    """Energy per batch item for a 2-channel NCHW input already wrapped as a Var.

    ``leaves`` maps parameter names to their Vars on ``tape``; missing entries
    are created as constants.
    """
    if x.value.ndim != 4 or x.shape[1] != plan[0]["in"]:
        raise ShapeError(f"expected (N, {plan[0]['in']}, H, W) input, got {x.shape}")
    factor = 2 ** n_downsamples(plan)
    if x.shape[2] % factor or x.shape[3] % factor:
        raise ShapeError(f"spatial dims {x.shape[2:]} must be divisible by {factor}")
    leaves = {} if leaves is None else leaves

    def p(key):
        if key not in leaves:
            leaves[key] = Var(params[key], requires_grad=False)
        return leaves[key]

    h = x
    for layer in plan:
        name = layer["name"]
        if layer["kind"] == "conv":
            h = add_bias(tape, conv2d(tape, h, p(f"{name}.w")), p(f"{name}.b"))
        elif layer["kind"] == "res":
            keys = ["conv1.w", "conv1.b", "conv2.w", "conv2.b"] + (["proj.w"] if layer["down"] else [])
            h = resblock(tape, h, {k: p(f"{name}.{k}") for k in keys}, downsample=layer["down"])
        else:
            h = swish(tape, h)
            h = global_sum_pool(tape, h)
            h = dense(tape, h, p(f"{name}.w"), p(f"{name}.b"))
    return h


def _run(plan, params, x, want_x: bool, want_params: bool):
    tape = Tape()
    xv = Var(np.asarray(x), requires_grad=want_x)
    leaves = {k: Var(v, requires_grad=want_params) for k, v in params.items()}
    out = energy_forward(plan, params, xv, tape, leaves)
    return tape, xv, leaves, out


def energy(plan: list[dict], params: dict, x: np.ndarray) -> np.ndarray:
    _, _, _, out = _run(plan, params, x, False, False)
    return out.value


def grad_input(plan: list[dict], params: dict, x: np.ndarray) -> np.ndarray:
    """d E(x_n) / d x_n for every batch item n."""
    tape, xv, _, out = _run(plan, params, x, True, False)
    tape.backward(out)
    return xv.grad


def grad_params(plan: list[dict], params: dict, x: np.ndarray, seed: np.ndarray | None = None) -> dict:
    """Gradient of sum_n seed_n * E(x_n) with respect to every parameter."""
    tape, _, leaves, out = _run(plan, params, x, False, True)
    tape.backward(out, seed)
    return {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}


def energy_and_grads(plan, params, x, seed=None, want_x=True, want_params=True):
    tape, xv, leaves, out = _run(plan, params, x, want_x, want_params)
    tape.backward(out, seed)
    gx = xv.grad if want_x else None
    gp = None
    if want_params:
        gp = {k: (v.grad if v.grad is not None else np.zeros_like(v.value)) for k, v in leaves.items()}
    return out.value, gx, gp
