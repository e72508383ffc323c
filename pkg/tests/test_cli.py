import json
import subprocess
import sys

import numpy as np
import pytest

from kiebm.cli import main
from kiebm.formats import read_tensor, write_tensor


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


TINY = {"outer_iters": 3, "langevin": {"step": 0.05, "steps": 2, "grad_clip": 1e9},
        "train": {"width": 2, "batch": 4, "epochs": 1, "max_steps": 2, "langevin": {"steps": 2}}}


@pytest.fixture
def workdir(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    code, _, _ = run(capsys, "phantom", "--size", 16, 16, "--coils", 3, "--seed", 2, "--train-count", 6,
                     "--out", tmp_path / "ph")
    assert code == 0
    return tmp_path


def _pipeline(capsys, d, tag):
    out = d / tag
    cfg = d / "cfg.json"
    cmds = [
        ("phantom", "--size", 16, 16, "--coils", 3, "--seed", 4, "--noise-sigma", 0.01, "--train-count", 4,
         "--out", out / "ph"),
        ("mask-gen", "--kind", "poisson2d", "--accel", 3, "--size", 16, 16, "--seed", 7, "--out", out / "m.kieb"),
        ("weight-gen", "--size", 16, 16, "--out", out / "w.kieb"),
        ("train", "--domain", "image", "--data", out / "ph", "--config", cfg, "--seed", 1, "--out", out / "i.ckpt",
         "--loss-csv", out / "loss.csv"),
        ("train", "--domain", "kspace", "--data", out / "ph", "--config", cfg, "--seed", 1, "--out", out / "k.ckpt"),
        ("reconstruct", "--method", "ski-ebm", "--meas", out / "ph" / "kspace.kieb", "--mask", out / "m.kieb",
         "--ckpt", out / "i.ckpt", "--ckpt", out / "k.ckpt", "--config", cfg, "--truth", out / "ph" / "truth.kieb",
         "--seed", 3, "--out", out / "rec"),
    ]
    for c in cmds:
        code, _, err = run(capsys, *c)
        assert code == 0, (c, err)
    return {p.relative_to(out): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


def test_seeded_commands_are_byte_reproducible(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps(TINY))
    a = _pipeline(capsys, tmp_path, "a")
    b = _pipeline(capsys, tmp_path, "b")
    assert a.keys() == b.keys() and len(a) >= 12
    for k in a:
        assert a[k] == b[k], k


def test_mask_gen_reports_density(tmp_path, capsys):
    code, out, _ = run(capsys, "mask-gen", "--kind", "random2d", "--accel", 4, "--seed", 7, "--out", tmp_path / "m")
    assert code == 0
    assert "density=0.250000" in out
    assert read_tensor(tmp_path / "m").shape == (64, 64)


def test_eval_identical_files(workdir, capsys):
    t = workdir / "ph" / "truth.kieb"
    code, out, err = run(capsys, "eval", "--recon", t, "--truth", t)
    assert code == 0 and err == ""
    assert out.strip().splitlines() == [out.strip()]
    rec = dict(kv.split("=") for kv in out.split())
    assert float(rec["psnr_db"]) == 200.0 and float(rec["ssim"]) == 1.0


@pytest.mark.parametrize("method", ["i-ebm", "k-ebm", "pki-ebm", "ski-ebm"])
def test_full_sampling_reconstruct_then_eval(workdir, capsys, method):
    d = workdir
    assert run(capsys, "mask-gen", "--kind", "cartesian1d", "--accel", 1, "--size", 16, 16, "--out", d / "full")[0] == 0
    for dom in ("image", "kspace"):
        code, _, err = run(capsys, "train", "--domain", dom, "--data", d / "ph", "--config", d / "cfg.json",
                           "--out", d / f"{dom}.ckpt")
        assert code == 0, err
    code, out, err = run(capsys, "reconstruct", "--method", method, "--meas", d / "ph" / "kspace.kieb",
                         "--mask", d / "full", "--ckpt", d / "image.ckpt", "--ckpt", d / "kspace.ckpt",
                         "--config", d / "cfg.json", "--truth", d / "ph" / "truth.kieb", "--out", d / "rec")
    assert code == 0, err
    lines = (d / "rec" / "psnr_trace.csv").read_text().splitlines()
    # the sequential solver traces both of its stages
    assert lines[0] == "iteration,psnr_db" and len(lines) == 1 + (6 if method == "ski-ebm" else 3)
    assert read_tensor(d / "rec" / "coils.kieb").shape == (3, 16, 16)
    code, out, _ = run(capsys, "eval", "--recon", d / "rec" / "recon.kieb", "--truth", d / "ph" / "truth.kieb")
    assert code == 0
    assert float(dict(kv.split("=") for kv in out.split())["psnr_db"]) >= 100


def test_exit_codes(workdir, capsys):
    d = workdir
    code, out, err = run(capsys, "mask-gen", "--kind", "bogus", "--accel", 2, "--out", d / "m")
    assert code == 1 and out == "" and "invalid choice" in err
    assert run(capsys)[0] == 1
    assert run(capsys, "mask-gen", "--kind", "cartesian1d", "--accel", 99, "--size", 8, 8, "--out", d / "m")[0] == 1
    code, _, err = run(capsys, "eval", "--recon", d / "missing.kieb", "--truth", d / "ph" / "truth.kieb")
    assert code == 2 and "missing.kieb" in err
    (d / "junk.kieb").write_bytes(b"garbage")
    assert run(capsys, "eval", "--recon", d / "junk.kieb", "--truth", d / "ph" / "truth.kieb")[0] == 2
    (d / "bad.json").write_text('{"outer_iter": 3}')
    code, _, err = run(capsys, "train", "--domain", "image", "--data", d / "ph", "--config", d / "bad.json",
                       "--out", d / "x.ckpt")
    assert code == 2 and "outer_iter" in err
    nan = np.full((16, 16), np.nan, dtype=np.float32)
    write_tensor(d / "nan.kieb", nan)
    code, _, err = run(capsys, "eval", "--recon", d / "nan.kieb", "--truth", d / "ph" / "truth.kieb")
    assert code == 3 and "NaN" in err


def test_reconstruct_requires_matching_checkpoint(workdir, capsys):
    d = workdir
    run(capsys, "mask-gen", "--kind", "random2d", "--accel", 2, "--size", 16, 16, "--out", d / "m")
    run(capsys, "train", "--domain", "image", "--data", d / "ph", "--config", d / "cfg.json", "--out", d / "i.ckpt")
    code, _, err = run(capsys, "reconstruct", "--method", "k-ebm", "--meas", d / "ph" / "kspace.kieb", "--mask",
                       d / "m", "--ckpt", d / "i.ckpt", "--out", d / "r")
    assert code == 1 and "weighted-kspace" in err


def test_console_entry_point_version():
    res = subprocess.run([sys.executable, "-m", "kiebm.cli", "version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("kiebm ")
