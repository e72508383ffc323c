"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 I/O or parse error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, datasets
from .ebm import AdamState, EnergyModel, ReplayBuffer, train
from .formats import (
    FormatError,
    RunConfig,
    atomic_write,
    load_checkpoint,
    load_config,
    read_tensor,
    save_checkpoint,
    write_tensor,
)
from .metrics import evaluate
from .mri import (
    SamplingMask,
    fft2c,
    generate_mask,
    shepp_logan,
    simulate_acquisition,
    synth_sensitivities,
    weight_matrix,
)
from .recon import METHODS, reconstruct

log = logging.getLogger("kiebm")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class NumericalError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"NaN or infinity detected in {what}")


def _write_json(path, obj):
    atomic_write(path, (json.dumps(obj, indent=2, sort_keys=True) + "\n").encode())


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_phantom(args):
    H, W = args.size
    out = Path(args.out)
    truth = shepp_logan(H, W)
    maps = synth_sensitivities(args.coils, H, W)
    full = SamplingMask(np.ones((H, W), dtype=np.uint8), "cartesian1d", 1, args.seed)
    kspace = simulate_acquisition(truth, maps, full, args.noise_sigma, args.seed)
    write_tensor(out / "truth.kieb", truth)
    write_tensor(out / "sens.kieb", maps)
    write_tensor(out / "kspace.kieb", kspace)
    meta = {"size": [H, W], "coils": args.coils, "seed": args.seed, "noise_sigma": args.noise_sigma,
            "files": ["truth.kieb", "sens.kieb", "kspace.kieb"]}
    if args.train_count:
        images = datasets.coil_images(args.train_count, H, W, seed=args.seed, coils=max(args.coils, 1))
        write_tensor(out / "train_images.kieb", images)
        meta["files"].append("train_images.kieb")
        meta["train_count"] = args.train_count
    _write_json(out / "meta.json", meta)


def cmd_mask_gen(args):
    H, W = args.size
    mask = generate_mask(args.kind, args.accel, H, W, args.seed, args.acs)
    write_tensor(args.out, mask.pattern.astype(np.float32))
    print(f"kind={mask.kind} accel={args.accel:g} seed={args.seed} sampled={int(mask.pattern.sum())} "
          f"density={mask.density:.6f} target={1.0 / args.accel:.6f}")


def cmd_weight_gen(args):
    H, W = args.size
    w = weight_matrix(args.r, args.p, H, W, args.floor)
    write_tensor(args.out, w.values)
    print(f"r={w.r:g} p={w.p:g} floor={w.floor:.6g} min={w.values.min():.6g} max={w.values.max():.6g}")


def _load_images(data):
    path = Path(data)
    # a directory contributes its train*.kieb stacks (as written by `phantom`), else every .kieb
    files = (sorted(path.glob("train*.kieb")) or sorted(path.glob("*.kieb"))) if path.is_dir() else [path]
    if not files:
        raise FormatError(f"no .kieb files in {data}")
    stacks = []
    for fp in files:
        arr = read_tensor(fp)
        arr = arr[None] if arr.ndim == 2 else arr
        if arr.ndim != 3:
            raise FormatError(f"{fp}: expected (N, H, W) images, got shape {arr.shape}")
        stacks.append(arr.astype(complex))
    shapes = {s.shape[1:] for s in stacks}
    if len(shapes) != 1:
        raise FormatError(f"training images have differing sizes {sorted(shapes)}")
    return np.concatenate(stacks)


def cmd_train(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    domain = "image" if args.domain == "image" else "weighted-kspace"
    images = _load_images(args.data)
    weight = None
    if domain == "weighted-kspace":
        weight = weight_matrix(cfg.weight.r, cfg.weight.p, *images.shape[1:], cfg.weight.floor)
    dtype = np.dtype(cfg.train.dtype)
    data = datasets.to_domain(images, domain, weight, dtype=dtype)
    seed = cfg.seed if args.seed is None else args.seed
    rng = np.random.default_rng(seed)
    model = EnergyModel.create(domain, cfg.train.width, seed=seed, dtype=dtype)
    tcfg = cfg.train_config(domain)
    trace = train(model, data, ReplayBuffer(cfg.train.buffer_capacity, seed=seed), cfg.train_langevin(),
                  AdamState(lr=tcfg.lr), tcfg, rng)
    for v in model.params.values():
        _check_finite(v, "trained parameters")
    snapshot = cfg.to_dict()["train"]
    snapshot["weight"] = cfg.to_dict()["weight"]
    save_checkpoint(args.out, model, snapshot, seed)
    if args.loss_csv:
        _write_trace(args.loss_csv, "step,loss", trace)
    print(f"domain={domain} steps={len(trace)} final_loss={trace[-1] if trace else float('nan'):.6g}")


def _write_trace(path, header, values):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header.split(","))
    for i, v in enumerate(values, 1):
        writer.writerow([i, repr(float(v))])
    atomic_write(path, buf.getvalue().encode())


def cmd_reconstruct(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    rcfg = cfg.recon_config(args.method)
    f = read_tensor(args.meas).astype(complex)
    if f.ndim == 2:
        f = f[None]
    pattern = read_tensor(args.mask)
    if pattern.shape != f.shape[-2:]:
        raise FormatError(f"mask shape {pattern.shape} does not match measurements {f.shape}")
    pattern = (pattern != 0).astype(np.uint8)
    f = f * pattern[None]
    models = {}
    for ck in args.ckpt or []:
        model, _ = load_checkpoint(ck)
        models[model.domain] = model
    truth_path = args.truth or cfg.paths.truth
    maps_path = args.maps or cfg.paths.maps
    truth = read_tensor(truth_path).astype(float) if truth_path else None
    maps = read_tensor(maps_path).astype(complex) if maps_path else None
    need = {"i-ebm": ["image"], "k-ebm": ["weighted-kspace"]}.get(rcfg.method, ["image", "weighted-kspace"])
    missing = [d for d in need if d not in models]
    if missing:
        raise UsageError(f"method {rcfg.method} needs checkpoint(s) for domain(s) {missing}")
    seed = cfg.seed if args.seed is None else args.seed
    result = reconstruct(f, pattern, rcfg, model_i=models.get("image"), model_k=models.get("weighted-kspace"),
                         rng=np.random.default_rng(seed), truth=truth, maps=maps)
    _check_finite(result.image, "reconstruction")
    out = Path(args.out)
    write_tensor(out / "recon.kieb", result.image)
    write_tensor(out / "coils.kieb", result.coils)
    write_tensor(out / "kspace.kieb", result.kspace)
    if result.psnr_trace:
        _write_trace(out / "psnr_trace.csv", "iteration,psnr_db", result.psnr_trace)
    msg = f"method={rcfg.method} iterations={rcfg.outer_iters}"
    if result.psnr_trace:
        msg += f" final_psnr_db={result.psnr_trace[-1]:.6f}"
    print(msg)


def cmd_eval(args):
    recon = read_tensor(args.recon)
    truth = read_tensor(args.truth)
    if np.iscomplexobj(recon):
        recon = np.abs(recon)
    if np.iscomplexobj(truth):
        truth = np.abs(truth)
    if recon.shape != truth.shape:
        raise FormatError(f"shape mismatch: {recon.shape} vs {truth.shape}")
    _check_finite(recon, "reconstruction")
    print(evaluate(recon, truth, args.data_range).as_record())


def cmd_version(args):
    print(f"kiebm {__version__}")


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kiebm", description="k-space / image-domain energy-based MRI reconstruction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("phantom", help="synthetic multi-coil Shepp-Logan acquisition")
    s.add_argument("--size", nargs=2, type=int, default=[64, 64], metavar=("H", "W"))
    s.add_argument("--coils", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noise-sigma", type=float, default=0.0)
    s.add_argument("--train-count", type=int, default=0, help="also emit N random training images")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("mask-gen", help="undersampling mask")
    s.add_argument("--kind", required=True, choices=["cartesian1d", "random2d", "poisson2d"])
    s.add_argument("--accel", type=float, required=True)
    s.add_argument("--size", nargs=2, type=int, default=[64, 64], metavar=("H", "W"))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--acs", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_mask_gen)

    s = sub.add_parser("weight-gen", help="k-space weight matrix")
    s.add_argument("--r", type=float, default=0.1)
    s.add_argument("--p", type=float, default=0.5)
    s.add_argument("--floor", type=float, default=None)
    s.add_argument("--size", nargs=2, type=int, default=[64, 64], metavar=("H", "W"))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_weight_gen)

    s = sub.add_parser("train", help="train an energy model")
    s.add_argument("--domain", required=True, choices=["image", "kspace"])
    s.add_argument("--data", required=True, help="directory of .kieb image stacks, or one file")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--loss-csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("reconstruct", help="reconstruct undersampled multi-coil k-space")
    s.add_argument("--method", required=True, choices=METHODS)
    s.add_argument("--meas", required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--ckpt", action="append", help="checkpoint file; repeat for both domains")
    s.add_argument("--config")
    s.add_argument("--truth")
    s.add_argument("--maps")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("eval", help="PSNR/SSIM of a reconstruction")
    s.add_argument("--recon", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--data-range", type=float)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("version")
    s.set_defaults(func=cmd_version)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"kiebm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, OSError) as exc:
        print(f"kiebm: error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NumericalError, FloatingPointError) as exc:
        print(f"kiebm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # bad parameter values (mask R, weight exponents, config values)
        print(f"kiebm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
