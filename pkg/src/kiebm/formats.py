"""Binary tensor files, model checkpoints and strict JSON run configs.

TensorFile layout (all little-endian)::

    b"KIEB" | version u16 | dtype u8 | ndim u8 | dims u32 * ndim | payload

dtype codes: 0 real32, 1 real64, 2 complex64, 3 complex128. Complex
payloads are interleaved (real, imag). Checkpoints reuse the header with
dtype code 255 and carry a JSON metadata block followed by named
TensorFile sections in sorted order.
"""
from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .ebm import EnergyModel, LangevinConfig, TrainConfig
from .recon import ReconConfig

__all__ = [
    "FormatError",
    "MAGIC",
    "VERSION",
    "encode_tensor",
    "decode_tensor",
    "write_tensor",
    "read_tensor",
    "encode_checkpoint",
    "decode_checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "RunConfig",
    "load_config",
    "atomic_write",
]

MAGIC = b"KIEB"
VERSION = 1
CONTAINER = 255

_DTYPES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<c8"),
    3: np.dtype("<c16"),
}
_CODES = {v.newbyteorder("="): k for k, v in _DTYPES.items()}


class FormatError(ValueError):
    """Malformed or unsupported file content."""


def atomic_write(path, data: bytes) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# tensors
# ---------------------------------------------------------------------------

def encode_tensor(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.bool_ or np.issubdtype(arr.dtype, np.integer):
        arr = arr.astype(np.float32)
    code = _CODES.get(arr.dtype.newbyteorder("="))
    if code is None:
        raise FormatError(f"unsupported dtype {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("too many dimensions")
    header = MAGIC + struct.pack("<HBB", VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def _decode_header(buf: bytes, offset: int = 0):
    if len(buf) - offset < 8:
        raise FormatError("truncated header")
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError("bad magic; not a KIEB file")
    version, code, ndim = struct.unpack_from("<HBB", buf, offset + 4)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return code, ndim, offset + 8


def decode_tensor(buf: bytes, offset: int = 0, exact: bool = True):
    """Parse a TensorFile. With ``exact`` the buffer must end at the payload."""
    code, ndim, pos = _decode_header(buf, offset)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    if len(buf) < pos + 4 * ndim:
        raise FormatError("truncated dims")
    dims = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    dtype = _DTYPES[code]
    nbytes = dtype.itemsize * int(np.prod(dims, dtype=np.int64))
    end = pos + nbytes
    if len(buf) < end or (exact and len(buf) != end):
        raise FormatError(f"payload length {len(buf) - pos} does not match dims {dims} of {dtype}")
    arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(dims)
    return arr.astype(dtype.newbyteorder("=")), end


def write_tensor(path, arr) -> None:
    atomic_write(path, encode_tensor(arr))


def read_tensor(path) -> np.ndarray:
    arr, _ = decode_tensor(Path(path).read_bytes())
    return arr


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def encode_checkpoint(sections: dict, meta: dict) -> bytes:
    out = [MAGIC, struct.pack("<HBB", VERSION, CONTAINER, 0)]
    blob = _canonical_json(meta)
    out.append(struct.pack("<I", len(blob)) + blob)
    out.append(struct.pack("<I", len(sections)))
    for name in sorted(sections):
        raw = name.encode()
        tensor = encode_tensor(sections[name])
        out.append(struct.pack("<H", len(raw)) + raw + struct.pack("<Q", len(tensor)) + tensor)
    return b"".join(out)


def decode_checkpoint(buf: bytes):
    code, ndim, pos = _decode_header(buf)
    if code != CONTAINER or ndim != 0:
        raise FormatError("not a checkpoint container")
    try:
        (n,) = struct.unpack_from("<I", buf, pos)
        meta = json.loads(buf[pos + 4:pos + 4 + n])
        pos += 4 + n
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        sections = {}
        for _ in range(count):
            (ln,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            (size,) = struct.unpack_from("<Q", buf, pos)
            pos += 8
            sections[name], _ = decode_tensor(buf[pos:pos + size])
            pos += size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"corrupt checkpoint: {exc}") from exc
    if pos != len(buf):
        raise FormatError("trailing bytes after checkpoint sections")
    return sections, meta


def save_checkpoint(path, model: EnergyModel, train_config: dict | None = None, seed: int = 0) -> None:
    meta = {
        "architecture": {"kind": "resnet-energy", "width": model.width, "in_channels": 2},
        "domain": model.domain,
        "dtype": model.dtype.name,
        "seed": int(seed),
        "train_config": train_config or {},
    }
    atomic_write(path, encode_checkpoint(model.params, meta))


def load_checkpoint(path):
    """Returns ``(model, meta)``."""
    sections, meta = decode_checkpoint(Path(path).read_bytes())
    try:
        arch = meta["architecture"]
        model = EnergyModel(sections, meta["domain"], arch["width"], np.dtype(meta["dtype"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint metadata: {exc}") from exc
    expected = set(EnergyModel.zeros(model.domain, model.width).params)
    if set(sections) != expected:
        raise FormatError("checkpoint sections do not match the architecture")
    for k, v in sections.items():
        if v.shape != EnergyModel.zeros(model.domain, model.width).params[k].shape:
            raise FormatError(f"section {k} has wrong shape {v.shape}")
    return model, meta


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------

def _strict(cls, data, where):
    if not isinstance(data, dict):
        raise FormatError(f"{where}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise FormatError(f"{where}: unknown key {unknown[0]!r}")
    return data


@dataclasses.dataclass
class WeightSection:
    r: float = 0.1
    p: float = 0.5
    floor: float | None = None


@dataclasses.dataclass
class TrainSection:
    epochs: int = 50
    batch: int = 16
    lr: float | None = None
    reg: float = 0.1
    noise_amps: list = dataclasses.field(default_factory=lambda: [0.0, 1 / 256, 2 / 256, 4 / 256])
    buffer_capacity: int = 10_000
    width: int = 64
    max_steps: int | None = None
    dtype: str = "float32"
    langevin: dict = dataclasses.field(default_factory=lambda: dataclasses.asdict(LangevinConfig()))


@dataclasses.dataclass
class PathsSection:
    truth: str | None = None
    maps: str | None = None


@dataclasses.dataclass
class RunConfig:
    """Strict JSON mirror of the solver, sampler, weighting and training settings.

    Learning-rate default (``train.lr = null``) resolves per domain:
    3e-4 for image models, 5e-4 for weighted-k-space models.
    """

    method: str = "pki-ebm"
    lambda_i: float = 0.0
    lambda_k: float = 0.0
    outer_iters: int = 200
    stage2_iters: int | None = None
    noise_decay: float = 0.97
    calibration: str = "sos-calibration-free"
    seed: int = 0
    langevin: dict = dataclasses.field(default_factory=lambda: dataclasses.asdict(ReconConfig().langevin))
    weight: WeightSection = dataclasses.field(default_factory=WeightSection)
    train: TrainSection = dataclasses.field(default_factory=TrainSection)
    paths: PathsSection = dataclasses.field(default_factory=PathsSection)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        _strict(cls, data, "config")
        data = dict(data)
        sub = {"weight": WeightSection, "train": TrainSection, "paths": PathsSection}
        for key, kind in sub.items():
            if key in data:
                data[key] = kind(**_strict(kind, data[key], key))
        if "langevin" in data:
            _strict(LangevinConfig, data["langevin"], "langevin")
            data["langevin"] = {**dataclasses.asdict(ReconConfig().langevin), **data["langevin"]}
        cfg = cls(**data)
        train_lv = _strict(LangevinConfig, cfg.train.langevin, "train.langevin")
        cfg.train.langevin = {**dataclasses.asdict(LangevinConfig()), **train_lv}
        cfg.recon_config()  # validates
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def langevin_config(self) -> LangevinConfig:
        return LangevinConfig(**self.langevin)

    def recon_config(self, method: str | None = None) -> ReconConfig:
        return ReconConfig(
            method=method or self.method,
            lambda_i=self.lambda_i,
            lambda_k=self.lambda_k,
            outer_iters=self.outer_iters,
            stage2_iters=self.stage2_iters,
            langevin=self.langevin_config(),
            noise_decay=self.noise_decay,
            weight_r=self.weight.r,
            weight_p=self.weight.p,
            weight_floor=self.weight.floor,
            calibration=self.calibration,
        )

    def train_config(self, domain: str) -> TrainConfig:
        t = self.train
        lr = t.lr if t.lr is not None else (3e-4 if domain == "image" else 5e-4)
        return TrainConfig(epochs=t.epochs, batch=t.batch, lr=lr, reg=t.reg,
                           noise_amps=tuple(t.noise_amps), max_steps=t.max_steps)

    def train_langevin(self) -> LangevinConfig:
        return LangevinConfig(**self.train.langevin)


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON: {exc}") from exc
    return RunConfig.from_dict(data)
