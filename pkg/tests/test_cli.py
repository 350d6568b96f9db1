import json
import shutil

import numpy as np
import pytest

from thermoshape.cli import EXIT_DATA, EXIT_OK, EXIT_USAGE, main
from thermoshape.core import GrayImage, Rng, load_pgm, save_pgm
from thermoshape.dmd import load_basis


def run(*argv):
    return main([str(a) for a in argv])


def read_manifest(out_dir):
    with open(out_dir / "manifest.json") as f:
        return json.load(f)


def dir_bytes(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*"))
            if p.is_file()}


class TestBasisCommand:
    def test_builds_and_manifests(self, tmp_path):
        out = tmp_path / "b"
        assert run("basis", "--out", out, "--h", 16, "--w", 16, "--k", 12) == EXIT_OK
        basis = load_basis(out / "basis.dmdb")
        assert (basis.h, basis.w, basis.K) == (16, 16, 12)
        m = read_manifest(out)
        assert m["command"] == "basis"
        assert "basis.dmdb" in m["artifacts"]

    def test_repeat_run_byte_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        run("basis", "--out", a, "--h", 16, "--w", 16, "--k", 8)
        run("basis", "--out", b, "--h", 16, "--w", 16, "--k", 8)
        assert dir_bytes(a) == dir_bytes(b)

    def test_k_too_large_is_usage_error(self, tmp_path):
        assert run("basis", "--out", tmp_path / "x", "--h", 8, "--w", 8,
                   "--k", 65) == EXIT_USAGE

    def test_missing_out_is_usage_error(self):
        assert run("basis", "--h", 8, "--w", 8) == EXIT_USAGE


class TestConfigFile:
    def test_file_fills_defaults_flags_win(self, tmp_path):
        cfgfile = tmp_path / "c.cfg"
        cfgfile.write_text("h=16\nw=16\nk=20\n")
        out = tmp_path / "o"
        assert run("basis", "--out", out, "--config", cfgfile, "--k", 6) == EXIT_OK
        basis = load_basis(out / "basis.dmdb")
        assert (basis.h, basis.w, basis.K) == (16, 16, 6)

    def test_unknown_key_rejected(self, tmp_path):
        cfgfile = tmp_path / "c.cfg"
        cfgfile.write_text("h=16\nbogus=1\n")
        assert run("basis", "--out", tmp_path / "o",
                   "--config", cfgfile) == EXIT_USAGE

    def test_comments_and_blank_lines(self, tmp_path):
        cfgfile = tmp_path / "c.cfg"
        cfgfile.write_text("# comment\n\nh=16\nw=16\nk=4\n")
        assert run("basis", "--out", tmp_path / "o",
                   "--config", cfgfile) == EXIT_OK

    def test_malformed_line(self, tmp_path):
        cfgfile = tmp_path / "c.cfg"
        cfgfile.write_text("h 16\n")
        assert run("basis", "--out", tmp_path / "o",
                   "--config", cfgfile) == EXIT_USAGE


class TestSynthCommand:
    def test_seeded_runs_identical(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        args = ["synth", "--seed", 7, "--n-train", 4, "--n-val", 2]
        assert run(*args, "--out", a) == EXIT_OK
        assert run(*args, "--out", b) == EXIT_OK
        assert dir_bytes(a) == dir_bytes(b)

    def test_layout(self, tmp_path):
        out = tmp_path / "d"
        run("synth", "--out", out, "--n-train", 3, "--n-val", 2)
        assert len(list((out / "train").glob("*_thermo.pgm"))) == 3
        assert len(list((out / "val").glob("*_thermo.pgm"))) == 2
        assert len(list((out / "truth").glob("*.csv"))) == 5
        m = read_manifest(out)
        assert len(m["artifacts"]) == 15  # 2*(3+2) images + 5 truth files

    def test_k_active_exceeds_basis(self, tmp_path):
        assert run("synth", "--out", tmp_path / "x", "--k-active", 60,
                   "--basis-k", 50) == EXIT_USAGE


class TestPreprocessCommand:
    def test_preprocess_pgms(self, tmp_path):
        src = tmp_path / "raw"
        src.mkdir()
        rng = Rng(3)
        yy, xx = np.mgrid[0:40, 0:40].astype(np.float64)
        base = np.exp(-(((xx - 20) / 8.0) ** 2 + ((yy - 20) / 8.0) ** 2))
        for i in range(3):
            lv = np.clip(255 * (base + 0.01 * i), 0, 255).astype(np.uint8)
            save_pgm(GrayImage(40, 40, lv), src / f"f{i}.pgm")
        out = tmp_path / "prep"
        assert run("preprocess", "--in-dir", src, "--out", out,
                   "--crop-size", 30, "--target-size", 32) == EXIT_OK
        imgs = sorted(out.glob("*.pgm"))
        assert len(imgs) == 3
        img = load_pgm(imgs[0])
        assert (img.width, img.height) == (32, 32)

    def test_missing_dir_is_data_error(self, tmp_path):
        assert run("preprocess", "--in-dir", tmp_path / "nope",
                   "--out", tmp_path / "o") == EXIT_DATA

    def test_oversized_crop_is_usage_error(self, tmp_path):
        src = tmp_path / "raw"
        src.mkdir()
        save_pgm(GrayImage(20, 20, (np.arange(400) % 256).astype(np.uint8).reshape(20, 20)),
                 src / "a.pgm")
        assert run("preprocess", "--in-dir", src, "--out", tmp_path / "o",
                   "--crop-size", 71, "--no-stabilize") == EXIT_USAGE


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One shared basis + dataset + short training run for the heavy commands."""
    root = tmp_path_factory.mktemp("pipe")
    assert run("basis", "--out", root / "basis", "--h", 32, "--w", 32,
               "--k", 50) == EXIT_OK
    assert run("synth", "--out", root / "data", "--seed", 3,
               "--n-train", 4, "--n-val", 3) == EXIT_OK
    assert run("train", "--data-dir", root / "data" / "train",
               "--out", root / "run", "--epochs", 2, "--base-channels", 2,
               "--seed", 1) == EXIT_OK
    return root


class TestTrainInferEvaluate:
    def test_train_artifacts(self, pipeline):
        run_dir = pipeline / "run"
        assert (run_dir / "checkpoint.p2pw").exists()
        assert (run_dir / "loss_curves.csv").exists()
        assert (run_dir / "loss_curves.png").exists()
        lines = (run_dir / "loss_curves.csv").read_text().splitlines()
        assert lines[0] == "epoch,loss_d,loss_g_adv,loss_g_l1"
        assert len(lines) == 3

    def test_infer_writes_predictions(self, pipeline, tmp_path):
        out = tmp_path / "pred"
        assert run("infer", "--checkpoint", pipeline / "run" / "checkpoint.p2pw",
                   "--in-dir", pipeline / "data" / "val",
                   "--out", out) == EXIT_OK
        preds = sorted(out.glob("*_geom.pgm"))
        assert len(preds) == 3
        img = load_pgm(preds[0])
        assert (img.width, img.height) == (32, 32)

    def test_evaluate_self_comparison_perfect(self, pipeline, tmp_path):
        out = tmp_path / "eval"
        val = pipeline / "data" / "val"
        assert run("evaluate", "--real-dir", val, "--gen-dir", val,
                   "--basis", pipeline / "basis" / "basis.dmdb",
                   "--out", out) == EXIT_OK
        lines = (out / "images_similarity.csv").read_text().splitlines()
        assert lines[0] == "part_id,cosine,correlation,psnr_db,ssim"
        for line in lines[1:]:
            pid, cos, corr, psnr_db, ssim_v = line.split(",")
            if pid.startswith(("MEDIAN", "STD")):
                continue
            assert float(cos) == pytest.approx(1.0, abs=1e-12)
            assert float(ssim_v) == pytest.approx(1.0, abs=1e-12)
            assert psnr_db == "inf"
        spec_lines = (out / "spectrum_similarity.csv").read_text().splitlines()
        n = len(list(val.glob("*_geom.pgm")))
        assert f"MEDIAN {n} parts" in spec_lines[-2]
        assert f"STD {n} parts" in spec_lines[-1]
        for png in ("image_similarity.png", "spectrum_comparison.png",
                    "per_mode_error.png"):
            assert (out / png).exists()

    def test_evaluate_shuffled_baseline_rows(self, pipeline, tmp_path):
        out = tmp_path / "evalb"
        val = pipeline / "data" / "val"
        assert run("evaluate", "--real-dir", val, "--gen-dir", val,
                   "--basis", pipeline / "basis" / "basis.dmdb",
                   "--shuffled-baseline", "--out", out) == EXIT_OK
        text = (out / "spectrum_similarity.csv").read_text()
        assert "SHUFFLED MEDIAN" in text and "SHUFFLED STD" in text

    def test_evaluate_unmatched_files(self, pipeline, tmp_path):
        gen = tmp_path / "gen"
        gen.mkdir()
        val = pipeline / "data" / "val"
        names = sorted(val.glob("*_geom.pgm"))
        for p in names[:-1]:  # drop one file to break the pairing
            shutil.copy(p, gen / p.name)
        assert run("evaluate", "--real-dir", val, "--gen-dir", gen,
                   "--basis", pipeline / "basis" / "basis.dmdb",
                   "--out", tmp_path / "o") == EXIT_DATA

    def test_infer_missing_checkpoint(self, pipeline, tmp_path):
        assert run("infer", "--checkpoint", tmp_path / "nope.p2pw",
                   "--in-dir", pipeline / "data" / "val",
                   "--out", tmp_path / "o") == EXIT_DATA

    def test_train_size_mismatch(self, pipeline, tmp_path):
        assert run("train", "--data-dir", pipeline / "data" / "train",
                   "--image-size", 64, "--epochs", 1,
                   "--out", tmp_path / "o") == EXIT_DATA

    def test_manifest_hashes_match_artifacts(self, pipeline):
        import hashlib

        run_dir = pipeline / "run"
        m = read_manifest(run_dir)
        for rel, digest in m["artifacts"].items():
            actual = hashlib.sha256((run_dir / rel).read_bytes()).hexdigest()
            assert actual == digest

    def test_train_deterministic(self, pipeline, tmp_path):
        out = tmp_path / "run2"
        assert run("train", "--data-dir", pipeline / "data" / "train",
                   "--out", out, "--epochs", 2, "--base-channels", 2,
                   "--seed", 1) == EXIT_OK
        for name in ("checkpoint.p2pw", "loss_curves.csv", "loss_curves.png"):
            assert (out / name).read_bytes() == \
                (pipeline / "run" / name).read_bytes()
