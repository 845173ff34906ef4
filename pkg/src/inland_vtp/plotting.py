"""Figures written next to the CSV outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps PNG bytes identical across reruns
_PNG_META = {"Software": None}


def plot_per_step(per_step_rows: list[dict], path, title: str = "Displacement error per prediction step") -> None:
    """Grouped boxplots from precomputed quartiles and whiskers (no fliers)."""
    models = list(dict.fromkeys(r["model"] for r in per_step_rows))
    steps = sorted({int(r["step"]) for r in per_step_rows})
    fig, ax = plt.subplots(figsize=(max(6.0, 1.2 * len(steps) * len(models) / 2), 4.0))
    width = 0.8 / max(len(models), 1)
    colors = plt.get_cmap("tab10")
    for i, m in enumerate(models):
        stats, pos = [], []
        for r in per_step_rows:
            if r["model"] != m:
                continue
            stats.append({"med": r["median"], "q1": r["q1"], "q3": r["q3"], "whislo": r["lo"],
                          "whishi": r["hi"], "fliers": []})
            pos.append(int(r["step"]) - 0.4 + width * (i + 0.5))
        art = ax.bxp(stats, positions=pos, widths=width * 0.9, showfliers=False, patch_artist=True)
        for b in art["boxes"]:
            b.set_facecolor(colors(i % 10))
        art["boxes"][0].set_label(m)
    ax.set_xticks(steps)
    ax.set_xlabel("prediction step (min)")
    ax.set_ylabel("displacement error (m)")
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_density(grid, values, path, xlabel: str, title: str = "", reference=None) -> None:
    """Sampled density curve, optionally overlaid with a reference curve on the same grid."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    ax.plot(grid, values, label="sampled field")
    if reference is not None:
        ax.plot(grid, reference, "--", label="mixture pdf")
        ax.legend(fontsize=8)
    ax.axvline(float(np.asarray(grid)[int(np.argmax(values))]), color="grey", lw=0.8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("density")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
