"""Command-line pipeline: basis, preprocess, synth, train, infer, evaluate.

Every command accepts ``--config <file>`` (key=value lines; unknown keys
rejected; explicit flags win) and ``--seed``, and writes a manifest
recording its configuration and the SHA-256 of every artifact it emitted,
so any run can be reproduced and verified byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import dmd, metrics, report, synth
from .core import GrayImage, load_pgm, save_pgm
from .nnet.train import (
    TrainConfig,
    infer as net_infer,
    load_checkpoint,
    save_checkpoint,
    train as net_train,
)
from .preprocess import (
    FloatField,
    apply_shift,
    dataset_stats,
    lk_shift,
    load_field,
    quantize,
    resample_bicubic,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, config: dict,
                    artifacts) -> None:
    manifest = {
        "command": command,
        "config": {k: config[k] for k in sorted(config)},
        "artifacts": {
            str(p.relative_to(out_dir)): _sha256(p)
            for p in sorted(artifacts)
        },
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


def _load_config_file(path) -> dict:
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            values[key.strip()] = val.strip()
    return values


def _merge_config(args, parser_defaults: dict) -> dict:
    """File values fill in anything the command line left at its default;
    unknown file keys are a usage error."""
    cfg = {k: getattr(args, k) for k in parser_defaults}
    if args.config:
        file_vals = _load_config_file(args.config)
        unknown = set(file_vals) - set(parser_defaults)
        if unknown:
            raise UsageError(
                f"unknown config keys: {', '.join(sorted(unknown))}"
            )
        for key, raw in file_vals.items():
            if getattr(args, key) == parser_defaults[key]:
                default = parser_defaults[key]
                typ = type(default) if default is not None else str
                cfg[key] = typ(raw)
    return cfg


def _walk_files(out_dir: Path):
    return [p for p in out_dir.rglob("*")
            if p.is_file() and p.name != "manifest.json"]


def _add_common(p: _Parser) -> None:
    p.add_argument("--config", default=None, help="key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")


def cmd_basis(args) -> int:
    defaults = {"h": 64, "w": 64, "k": 50, "seed": 0}
    cfg = _merge_config(args, defaults)
    if cfg["k"] > cfg["h"] * cfg["w"] or cfg["k"] < 1:
        raise UsageError("k must be in [1, h*w]")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    basis = dmd.build_basis(cfg["h"], cfg["w"], cfg["k"])
    path = out / "basis.dmdb"
    dmd.save_basis(basis, path)
    _write_manifest(out, "basis", cfg, [path])
    return EXIT_OK


def cmd_preprocess(args) -> int:
    defaults = {
        "in_dir": None, "crop_x0": -1, "crop_y0": -1, "crop_size": 71,
        "target_size": 128, "levels": 3, "window": 8, "iters": 10,
        "stabilize": True, "seed": 0,
    }
    cfg = _merge_config(args, defaults)
    in_dir = Path(cfg["in_dir"])
    if not in_dir.is_dir():
        raise DataError(f"input directory not found: {in_dir}")
    paths = sorted(
        p for p in in_dir.iterdir() if p.suffix in (".pgm", ".csv")
    )
    if not paths:
        raise DataError(f"no .pgm or .csv inputs in {in_dir}")
    fields = [load_field(p) for p in paths]
    first = fields[0]
    for p, f in zip(paths, fields):
        if f.data.shape != first.data.shape:
            raise DataError(f"{p.name}: size differs from {paths[0].name}")

    if cfg["stabilize"]:
        aligned = [fields[0]]
        for f in fields[1:]:
            s = lk_shift(first, f, cfg["levels"], cfg["window"], cfg["iters"])
            aligned.append(apply_shift(f, s))
        fields = aligned
    stats = dataset_stats(fields)

    cs = cfg["crop_size"]
    h, w = first.data.shape
    if cs > min(h, w):
        raise UsageError(f"crop size {cs} exceeds image size {w}x{h}")
    x0 = (w - cs) // 2 if cfg["crop_x0"] < 0 else cfg["crop_x0"]
    y0 = (h - cs) // 2 if cfg["crop_y0"] < 0 else cfg["crop_y0"]
    if x0 + cs > w or y0 + cs > h:
        raise UsageError("crop rectangle outside image")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    ts = cfg["target_size"]
    for p, f in zip(paths, fields):
        sub = FloatField(cs, cs, f.data[y0 : y0 + cs, x0 : x0 + cs])
        up = resample_bicubic(sub, ts, ts)
        img = quantize(up, stats)
        dest = out / (p.stem + ".pgm")
        save_pgm(img, dest)
        artifacts.append(dest)
    _write_manifest(out, "preprocess", cfg, artifacts)
    return EXIT_OK


def cmd_synth(args) -> int:
    defaults = {
        "grid": 32, "k_active": 12, "coeff_lo": -25.0, "coeff_hi": 25.0,
        "blur_sigma": 1.0, "noise_std": 2.0, "n_train": 23, "n_val": 14,
        "basis_k": 50, "seed": 0,
    }
    cfg = _merge_config(args, defaults)
    scfg = synth.SynthConfig(
        grid=cfg["grid"], k_active=cfg["k_active"], coeff_lo=cfg["coeff_lo"],
        coeff_hi=cfg["coeff_hi"], thermal_blur_sigma=cfg["blur_sigma"],
        noise_std=cfg["noise_std"], seed=cfg["seed"],
    )
    if cfg["k_active"] > cfg["basis_k"]:
        raise UsageError("k_active cannot exceed basis_k")
    basis = dmd.build_basis(cfg["grid"], cfg["grid"], cfg["basis_k"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    synth.generate_dataset(scfg, basis, out, cfg["n_train"], cfg["n_val"])
    _write_manifest(out, "synth", cfg, _walk_files(out))
    return EXIT_OK


def _load_pairs(data_dir: Path):
    thermos = sorted(data_dir.glob("pair_*_thermo.pgm"))
    if not thermos:
        raise DataError(f"no pair_*_thermo.pgm files in {data_dir}")
    pairs = []
    for tp in thermos:
        gp = data_dir / tp.name.replace("_thermo", "_geom")
        if not gp.exists():
            raise DataError(f"missing geometry image for {tp.name}")
        pairs.append((load_pgm(tp), load_pgm(gp)))
    return pairs


def cmd_train(args) -> int:
    defaults = {
        "data_dir": None, "image_size": 32, "base_channels": 8,
        "num_down_layers": 3, "epochs": 200, "lr": 2e-4, "lambda_l1": 100.0,
        "jitter_scale": 1.125, "mirror_prob": 0.5, "seed": 0,
    }
    cfg = _merge_config(args, defaults)
    data_dir = Path(cfg["data_dir"])
    if not data_dir.is_dir():
        raise DataError(f"training directory not found: {data_dir}")
    pairs = _load_pairs(data_dir)
    tcfg = TrainConfig(
        image_size=cfg["image_size"], base_channels=cfg["base_channels"],
        num_down_layers=cfg["num_down_layers"], epochs=cfg["epochs"],
        lr=cfg["lr"], lambda_l1=cfg["lambda_l1"],
        jitter_scale=cfg["jitter_scale"], mirror_prob=cfg["mirror_prob"],
        seed=cfg["seed"],
    )
    for t, g in pairs:
        if t.width != tcfg.image_size or t.height != tcfg.image_size:
            raise DataError(
                f"pair images are {t.width}x{t.height}, expected "
                f"{tcfg.image_size}"
            )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt, curves = net_train(pairs, tcfg)
    ckpt_path = out / "checkpoint.p2pw"
    save_checkpoint(ckpt, ckpt_path)
    csv_path = out / "loss_curves.csv"
    report.write_loss_curve_csv(curves, csv_path)
    fig_path = out / "loss_curves.png"
    report.plot_loss_curves(curves, fig_path)
    _write_manifest(out, "train", cfg, [ckpt_path, csv_path, fig_path])
    return EXIT_OK


def cmd_infer(args) -> int:
    defaults = {"checkpoint": None, "in_dir": None, "seed": 0}
    cfg = _merge_config(args, defaults)
    ckpt = load_checkpoint(cfg["checkpoint"])
    in_dir = Path(cfg["in_dir"])
    thermos = sorted(in_dir.glob("*_thermo.pgm"))
    if not thermos:
        raise DataError(f"no *_thermo.pgm inputs in {in_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for tp in thermos:
        img = load_pgm(tp)
        pred = net_infer(ckpt, img)
        # carry the physical metadata of the paired real geometry if present
        real = in_dir / tp.name.replace("_thermo", "_geom")
        if real.exists():
            ref = load_pgm(real)
            pred = GrayImage(pred.width, pred.height, pred.data,
                             scale=ref.scale, offset=ref.offset)
        dest = out / tp.name.replace("_thermo", "_geom")
        save_pgm(pred, dest)
        artifacts.append(dest)
    _write_manifest(out, "infer", cfg, artifacts)
    return EXIT_OK


def _feature_pairs(real: GrayImage, gen: GrayImage):
    feats = []
    try:
        fr = metrics.stat_features(real)
        fg = metrics.stat_features(gen)
        for name in fr:
            feats.append((name, fr[name], fg[name]))
    except metrics.UndefinedMetricError:
        pass
    try:
        hr = metrics.haralick(metrics.glcm(real), partial=True)
        hg = metrics.haralick(metrics.glcm(gen), partial=True)
        for name in metrics.HARALICK_NAMES:
            feats.append((name, hr[name], hg[name]))
    except ValueError:
        pass
    return feats


def cmd_evaluate(args) -> int:
    defaults = {
        "real_dir": None, "gen_dir": None, "basis": None,
        "shuffled_baseline": False, "seed": 0,
    }
    cfg = _merge_config(args, defaults)
    real_dir = Path(cfg["real_dir"])
    gen_dir = Path(cfg["gen_dir"])
    real_files = {p.name: p for p in real_dir.glob("*_geom.pgm")}
    gen_files = {p.name: p for p in gen_dir.glob("*_geom.pgm")}
    if not real_files:
        raise DataError(f"no *_geom.pgm files in {real_dir}")
    unmatched = sorted(set(real_files) ^ set(gen_files))
    if unmatched:
        raise DataError("unmatched files: " + ", ".join(unmatched))
    basis = dmd.load_basis(cfg["basis"])

    image_rows = []
    spectrum_rows = []
    per_mode = {}
    features = {}
    gen_spectra = []
    real_spectra = []
    first_pair = None
    for name in sorted(real_files):
        pid = name[: -len("_geom.pgm")] if name.endswith("_geom.pgm") else name
        real = load_pgm(real_files[name])
        gen = load_pgm(gen_files[name])
        if real.data.shape != gen.data.shape:
            raise DataError(f"{name}: real and generated sizes differ")
        cos, corr = metrics.image_cosine_and_correlation(real, gen)
        image_rows.append(metrics.SimilarityRow(
            pid, cos, corr, metrics.psnr(real, gen), metrics.ssim(real, gen)
        ))
        sr = dmd.project(real, basis)
        sg = dmd.project(gen, basis)
        real_spectra.append(sr)
        gen_spectra.append(sg)
        sim = dmd.spectrum_similarity(sr, sg)
        spectrum_rows.append((pid, sim.cosine, sim.r_squared))
        per_mode[pid] = dmd.per_mode_error(sr, sg)
        features[pid] = _feature_pairs(real, gen)
        if first_pair is None:
            first_pair = (pid, sr, sg)

    baseline = None
    if cfg["shuffled_baseline"] and len(spectrum_rows) > 1:
        # rotate the generated spectra by one so every part is compared
        # against a mismatched partner
        baseline = []
        n = len(real_spectra)
        for i in range(n):
            sim = dmd.spectrum_similarity(real_spectra[i],
                                          gen_spectra[(i + 1) % n])
            baseline.append((spectrum_rows[i][0], sim.cosine, sim.r_squared))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    img_report = metrics.aggregate_report(image_rows)
    artifacts = []
    p = out / "images_similarity.csv"
    report.write_image_similarity_csv(img_report, p)
    artifacts.append(p)
    p = out / "spectrum_similarity.csv"
    report.write_spectrum_similarity_csv(spectrum_rows, p, baseline)
    artifacts.append(p)
    p = out / "per_mode_error.csv"
    report.write_per_mode_error_csv(per_mode, p)
    artifacts.append(p)
    p = out / "features.csv"
    report.write_feature_csv(features, p)
    artifacts.append(p)
    p = out / "image_similarity.png"
    report.plot_similarity_bars(img_report, p)
    artifacts.append(p)
    if first_pair is not None:
        pid, sr, sg = first_pair
        p = out / "spectrum_comparison.png"
        report.plot_spectrum_comparison(pid, sr.coeffs, sg.coeffs, p)
        artifacts.append(p)
    p = out / "per_mode_error.png"
    report.plot_per_mode_error(per_mode, p)
    artifacts.append(p)
    _write_manifest(out, "evaluate", cfg, artifacts)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="thermoshape",
                     description="Thermography-to-geometry prediction and "
                                 "modal-decomposition evaluation toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("basis", parents=[], help="build and cache a modal basis")
    _add_common(p)
    p.add_argument("--h", type=int, default=64)
    p.add_argument("--w", type=int, default=64)
    p.add_argument("--k", type=int, default=50)
    p.set_defaults(func=cmd_basis)

    p = sub.add_parser("preprocess", help="stabilize, normalize, crop, "
                                          "resample and quantize raw fields")
    _add_common(p)
    p.add_argument("--in-dir", dest="in_dir", required=True)
    p.add_argument("--crop-x0", dest="crop_x0", type=int, default=-1,
                   help="crop anchor (default: centered)")
    p.add_argument("--crop-y0", dest="crop_y0", type=int, default=-1)
    p.add_argument("--crop-size", dest="crop_size", type=int, default=71)
    p.add_argument("--target-size", dest="target_size", type=int, default=128)
    p.add_argument("--levels", type=int, default=3, help="pyramid levels")
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--no-stabilize", dest="stabilize", action="store_false")
    p.set_defaults(func=cmd_preprocess, stabilize=True)

    p = sub.add_parser("synth", help="generate a synthetic paired dataset")
    _add_common(p)
    p.add_argument("--grid", type=int, default=32)
    p.add_argument("--k-active", dest="k_active", type=int, default=12)
    p.add_argument("--coeff-lo", dest="coeff_lo", type=float, default=-25.0)
    p.add_argument("--coeff-hi", dest="coeff_hi", type=float, default=25.0)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float, default=1.0)
    p.add_argument("--noise-std", dest="noise_std", type=float, default=2.0)
    p.add_argument("--n-train", dest="n_train", type=int, default=23)
    p.add_argument("--n-val", dest="n_val", type=int, default=14)
    p.add_argument("--basis-k", dest="basis_k", type=int, default=50)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the translation network")
    _add_common(p)
    p.add_argument("--data-dir", dest="data_dir", required=True)
    p.add_argument("--image-size", dest="image_size", type=int, default=32)
    p.add_argument("--base-channels", dest="base_channels", type=int, default=8)
    p.add_argument("--num-down-layers", dest="num_down_layers", type=int,
                   default=3)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--lambda-l1", dest="lambda_l1", type=float, default=100.0)
    p.add_argument("--jitter-scale", dest="jitter_scale", type=float,
                   default=1.125)
    p.add_argument("--mirror-prob", dest="mirror_prob", type=float, default=0.5)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict geometry images from "
                                     "thermography images")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--in-dir", dest="in_dir", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="compare real and generated images")
    _add_common(p)
    p.add_argument("--real-dir", dest="real_dir", required=True)
    p.add_argument("--gen-dir", dest="gen_dir", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--shuffled-baseline", dest="shuffled_baseline",
                   action="store_true")
    p.set_defaults(func=cmd_evaluate, shuffled_baseline=False)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
