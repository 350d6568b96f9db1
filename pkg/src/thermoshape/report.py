"""Delimited report output and the figures rendered alongside it.

CSV is the machine-readable contract (full-precision values, aggregate
rows labeled ``MEDIAN <n> parts`` / ``STD <n> parts``); the PNG figures
are rendered from the same rows for quick visual inspection. Figures are
written without a software tag so repeated runs emit identical bytes.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .metrics import SimilarityReport

__all__ = [
    "format_value",
    "write_image_similarity_csv",
    "write_spectrum_similarity_csv",
    "write_per_mode_error_csv",
    "write_feature_csv",
    "write_loss_curve_csv",
    "plot_similarity_bars",
    "plot_spectrum_comparison",
    "plot_per_mode_error",
    "plot_loss_curves",
]

_SAVEFIG_KW = {"dpi": 110, "metadata": {"Software": None}}


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        return repr(v)
    return str(v)


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(format_value(v) for v in row) + "\n")


def write_image_similarity_csv(report: SimilarityReport, path) -> None:
    n = report.n_parts
    rows = [
        (r.part_id, r.cosine, r.correlation, r.psnr_db, r.ssim)
        for r in report.rows
    ]
    for label, agg in ((f"MEDIAN {n} parts", report.median),
                       (f"STD {n} parts", report.std)):
        rows.append((label, agg["cosine"], agg["correlation"],
                     agg["psnr_db"], agg["ssim"]))
    _write_rows(path, ("part_id", "cosine", "correlation", "psnr_db", "ssim"),
                rows)


def write_spectrum_similarity_csv(rows, path, baseline=None) -> None:
    """rows: list of (part_id, cosine, r_squared); optional shuffled-pairing
    baseline aggregates appended as extra labeled rows."""
    import numpy as np

    n = len(rows)
    out = list(rows)
    cos = np.array([r[1] for r in rows], dtype=float)
    r2 = np.array([r[2] for r in rows], dtype=float)
    out.append((f"MEDIAN {n} parts", float(np.median(cos)), float(np.median(r2))))
    out.append((f"STD {n} parts", float(np.std(cos)), float(np.std(r2))))
    if baseline is not None:
        bcos = np.array([r[1] for r in baseline], dtype=float)
        br2 = np.array([r[2] for r in baseline], dtype=float)
        out.append((f"SHUFFLED MEDIAN {len(baseline)} parts",
                    float(np.median(bcos)), float(np.median(br2))))
        out.append((f"SHUFFLED STD {len(baseline)} parts",
                    float(np.std(bcos)), float(np.std(br2))))
    _write_rows(path, ("part_id", "cosine", "r_squared"), out)


def write_per_mode_error_csv(per_part_errors: dict, path) -> None:
    """per_part_errors: part_id -> array of |a_k - b_k| per mode."""
    rows = []
    for pid in sorted(per_part_errors):
        for k, e in enumerate(per_part_errors[pid]):
            rows.append((pid, k, float(e)))
    _write_rows(path, ("part_id", "mode_index", "abs_error"), rows)


def write_feature_csv(per_part_features: dict, path) -> None:
    """per_part_features: part_id -> list of (name, real, generated)."""
    rows = []
    for pid in sorted(per_part_features):
        for name, real, gen in per_part_features[pid]:
            diff = None if real is None or gen is None else abs(real - gen)
            rows.append((pid, name, real, gen, diff))
    _write_rows(path, ("part_id", "feature_name", "real", "generated",
                       "abs_diff"), rows)


def write_loss_curve_csv(curves, path) -> None:
    _write_rows(path, ("epoch", "loss_d", "loss_g_adv", "loss_g_l1"), curves)


def plot_similarity_bars(report: SimilarityReport, path) -> None:
    ids = [r.part_id for r in report.rows]
    fig, axes = plt.subplots(2, 2, figsize=(11, 7), sharex=True)
    for ax, (name, vals) in zip(
        axes.ravel(),
        (
            ("histogram cosine", [r.cosine for r in report.rows]),
            ("histogram correlation", [r.correlation for r in report.rows]),
            ("PSNR [dB]", [r.psnr_db for r in report.rows]),
            ("SSIM", [r.ssim for r in report.rows]),
        ),
    ):
        finite = [v if math.isfinite(v) else 0.0 for v in vals]
        ax.bar(range(len(ids)), finite, color="#4878a8")
        ax.set_title(name)
        ax.set_xticks(range(len(ids)))
        ax.set_xticklabels(ids, rotation=90, fontsize=6)
    fig.suptitle("Real vs generated image similarity per part")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def plot_spectrum_comparison(part_id, real_coeffs, gen_coeffs, path) -> None:
    import numpy as np

    k = len(real_coeffs)
    idx = np.arange(k)
    fig, ax = plt.subplots(figsize=(10, 4))
    width = 0.4
    ax.bar(idx - width / 2, real_coeffs, width, label="real", color="#4878a8")
    ax.bar(idx + width / 2, gen_coeffs, width, label="generated",
           color="#d1615d")
    ax.set_xlabel("mode index")
    ax.set_ylabel("modal coefficient")
    ax.set_title(f"Modal spectrum comparison, part {part_id}")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def plot_per_mode_error(per_part_errors: dict, path) -> None:
    import numpy as np

    errs = np.array([per_part_errors[p] for p in sorted(per_part_errors)])
    med = np.median(errs, axis=0)
    fig, ax = plt.subplots(figsize=(10, 4))
    ax.bar(range(len(med)), med, color="#6a9f58")
    ax.set_xlabel("mode index")
    ax.set_ylabel("median |real - generated|")
    ax.set_title("Per-mode prediction error over all parts")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)


def plot_loss_curves(curves, path) -> None:
    epochs = [c[0] for c in curves]
    fig, ax = plt.subplots(figsize=(9, 5))
    ax.plot(epochs, [c[1] for c in curves], label="discriminator")
    ax.plot(epochs, [c[2] for c in curves], label="generator (adversarial)")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax2 = ax.twinx()
    ax2.plot(epochs, [c[3] for c in curves], label="generator L1",
             color="#d1615d")
    ax2.set_ylabel("L1 term")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="upper right")
    ax.set_title("Training loss over epochs")
    fig.tight_layout()
    fig.savefig(path, **_SAVEFIG_KW)
    plt.close(fig)
