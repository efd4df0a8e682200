"""Report figures rendered from run artifacts.

Everything drawn here derives from the data (bin counts, slot fill,
coverage), never from wall-clock measurements, so figures are stable
across reruns of the same corpus and config.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
import pandas as pd

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .align import SLOT_MODALITIES, AlignmentPlan  # noqa: E402


def bin_count_histograms(per_bin_counts: dict[str, list[int]],
                         plan: AlignmentPlan, out_path: str | Path) -> Path:
    """Histogram of nonzero per-bin event counts per modality, cutoff marked."""
    active = [m for m in SLOT_MODALITIES
              if any(c > 0 for c in per_bin_counts.get(m, []))]
    n = max(1, len(active))
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0), squeeze=False)
    for ax, modality in zip(axes[0], active or ["(none)"]):
        counts = [c for c in per_bin_counts.get(modality, []) if c > 0]
        if counts:
            top = max(counts)
            ax.hist(counts, bins=range(1, top + 2), align="left",
                    color="#4878a8", edgecolor="white")
            cutoff = plan.cutoffs.get(modality)
            if cutoff:
                ax.axvline(cutoff + 0.5, color="#c44e52", linestyle="--",
                           label=f"cutoff {cutoff}")
                ax.legend(fontsize=7)
        ax.set_title(modality, fontsize=9)
        ax.set_xlabel("events per bin", fontsize=8)
        ax.set_ylabel("bins", fontsize=8)
        ax.tick_params(labelsize=7)
    fig.suptitle(
        f"Per-bin event counts ({plan.granularity} bins, k={plan.percentile_k:g})",
        fontsize=10)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def slot_fill_chart(frame: pd.DataFrame, plan: AlignmentPlan,
                    out_path: str | Path) -> Path:
    """Fill fraction per slot column; shows how sparse the right edge is."""
    slot_cols = [f"{m}_{j}" for m in SLOT_MODALITIES
                 for j in range(1, plan.widths.get(m, 0) + 1)]
    slot_cols = [c for c in slot_cols if c in frame.columns]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.45 * len(slot_cols) + 1.5), 3.2))
    if slot_cols and len(frame):
        fill = [float(frame[c].notna().mean()) for c in slot_cols]
        ax.bar(range(len(slot_cols)), fill, color="#4878a8")
        ax.set_xticks(range(len(slot_cols)))
        ax.set_xticklabels(slot_cols, rotation=60, ha="right", fontsize=7)
        ax.set_ylim(0, 1.0)
    ax.set_ylabel("fill fraction", fontsize=8)
    ax.set_title("Slot occupancy", fontsize=10)
    ax.tick_params(labelsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def coverage_chart(stats: dict, out_path: str | Path) -> Path:
    """Cohort coverage per modality from cohort_stats output."""
    per_modality = stats.get("modalities", stats)
    modalities = sorted(per_modality)
    coverage = [per_modality[m]["coverage"] for m in modalities]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(modalities) + 1.5), 3.2))
    ax.bar(range(len(modalities)), coverage, color="#55a868")
    ax.set_xticks(range(len(modalities)))
    ax.set_xticklabels(modalities, rotation=30, ha="right", fontsize=8)
    ax.set_ylim(0, 1.0)
    ax.set_ylabel("members with records", fontsize=8)
    ax.set_title("Cohort coverage by modality", fontsize=10)
    ax.tick_params(labelsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=110)
    plt.close(fig)
    return out_path


def render_all(per_bin_counts: dict[str, list[int]], plan: AlignmentPlan,
               frame: pd.DataFrame, stats: dict, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return [
        bin_count_histograms(per_bin_counts, plan, out_dir / "bin_counts.png"),
        slot_fill_chart(frame, plan, out_dir / "slot_fill.png"),
        coverage_chart(stats, out_dir / "coverage.png"),
    ]
