"""Sweep reporting: the CSV of record, curve plots, and mask panels.

The CSV is the canonical artifact - fixed header, fixed row order, fixed
number formatting - so identical sweeps produce identical bytes.  Plots
are derived views of the same records.
"""

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .sweep import SweepResult

CSV_HEADER = "scene_id,snr_db,variant,seed,horizon,iou,frames,outage"


def write_csv(result: SweepResult, path) -> Path:
    """One row per record, in the result's canonical order."""
    path = Path(path)
    lines = [CSV_HEADER]
    for r in result.records:
        lines.append(
            f"{r.scene_id},{r.snr_db:g},{r.variant},{r.seed},{r.horizon},"
            f"{r.iou:.6f},{r.frames},{r.outage:.4f}")
    path.write_text("\n".join(lines) + "\n")
    return path


def _series(result, variant, horizon=0):
    """Mean and variance of IoU per SNR for one variant, across scenes/seeds."""
    snrs = result.metadata["axes"]["snr_db"]
    means, vars_ = [], []
    for snr in snrs:
        rows = [r.iou for r in result.select(variant=variant, snr_db=snr,
                                             horizon=horizon)]
        if not rows:
            return None
        means.append(float(np.mean(rows)))
        vars_.append(float(np.var(rows, ddof=1)) if len(rows) > 1 else 0.0)
    return np.asarray(snrs), np.asarray(means), np.asarray(vars_)


def plot_curves(result: SweepResult, path) -> Path:
    """IoU vs SNR: mean curves with variance bands, per-scene diffusion lines."""
    path = Path(path)
    variants = result.metadata["axes"]["variants"]
    scenes = result.metadata["axes"]["scenes"]
    fig, ax = plt.subplots(figsize=(7, 5))
    colors = {"lossless": "tab:green", "awgn": "tab:blue",
              "awgn+diffusion": "tab:orange", "digital": "tab:red"}
    for variant in variants:
        got = _series(result, variant)
        if got is None:
            continue
        snrs, mean, var = got
        c = colors.get(variant, "tab:gray")
        if variant in ("lossless", "awgn"):
            ax.plot(snrs, mean, marker="o", color=c, label=variant)
            ax.fill_between(snrs, mean - var, mean + var, color=c, alpha=0.2)
        elif variant == "awgn+diffusion":
            for scene in scenes:
                vals = [np.mean([r.iou for r in result.select(
                    variant=variant, snr_db=s, scene_id=scene, horizon=0)])
                    for s in snrs]
                ax.plot(snrs, vals, color=c, alpha=0.6, linewidth=1)
            ax.plot(snrs, mean, marker="s", color=c, label=variant)
        else:
            ax.plot(snrs, mean, marker="x", linestyle="--", color=c,
                    label=variant)
    ax.set_xlabel("SNR [dB]")
    ax.set_ylabel("IoU")
    ax.set_ylim(0.0, 1.05)
    ax.grid(alpha=0.3)
    ax.legend()
    ax.set_title("Occupancy IoU vs channel SNR")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_mask_panel(triplets, path, titles=("input", "refined", "truth")):
    """Rows of (condition, refined, ground-truth) masks as one image."""
    path = Path(path)
    n = len(triplets)
    if n == 0:
        raise ValueError("no mask triplets to draw")
    fig, axes = plt.subplots(n, 3, figsize=(6, 2 * n), squeeze=False)
    for i, triple in enumerate(triplets):
        for j, mask in enumerate(triple):
            ax = axes[i][j]
            ax.imshow(np.asarray(mask), cmap="gray", vmin=0, vmax=1,
                      origin="lower")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(titles[j], fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_horizon_strip(rows, path, row_labels=None):
    """Mask strips across horizons: rows of {h: mask} dictionaries."""
    path = Path(path)
    if not rows:
        raise ValueError("no strips to draw")
    horizons = sorted(rows[0])
    fig, axes = plt.subplots(len(rows), len(horizons),
                             figsize=(2 * len(horizons), 2 * len(rows)),
                             squeeze=False)
    for i, row in enumerate(rows):
        for j, h in enumerate(horizons):
            ax = axes[i][j]
            ax.imshow(np.asarray(row[h]), cmap="gray", vmin=0, vmax=1,
                      origin="lower")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(f"t + {h}", fontsize=9)
            if j == 0 and row_labels:
                ax.set_ylabel(row_labels[i], fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def emit_report(result: SweepResult, out_dir, panels=None, strips=None) -> dict:
    """Write CSV + curves (+ optional panels/strips); returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = {
        "csv": write_csv(result, out / "sweep.csv"),
        "curves": plot_curves(result, out / "curves.png"),
    }
    if panels:
        written["panels"] = save_mask_panel(panels, out / "panels.png")
    if strips:
        written["strips"] = save_horizon_strip(strips, out / "horizons.png")
    return written
