"""Static figure rendering for run reports.

Every figure is written with pinned dpi and a fixed PNG metadata block
so repeated runs produce byte-identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

_METADATA = {"Software": "regplay"}
_DPI = 120


def _save(fig, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, metadata=_METADATA)
    plt.close(fig)
    return path


def regularity_curve(values: Sequence[float], path: Path | str) -> Path:
    """Per-step regularity of one episode; index 0 is the initial state."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(len(values)), values, lw=1.5)
    ax.set_xlabel("step")
    ax.set_ylabel("regularity (negative entropy)")
    ax.set_title("regularity over the episode")
    ax.grid(True, alpha=0.3)
    return _save(fig, path)


def freeplay_curves(rows: Sequence[dict], path: Path | str) -> Path:
    """Four panels over free-play iterations: reward, spread, movement, loss."""
    its = [r["iteration"] for r in rows]
    fig, axes = plt.subplots(2, 2, figsize=(10, 7))
    ax = axes[0][0]
    ax.plot(its, [r["best_regularity"] for r in rows], label="best")
    ax.plot(its, [r["mean_regularity"] for r in rows], label="mean")
    ax.set_title("regularity reached per iteration")
    ax.legend()
    ax = axes[0][1]
    dis = [r["mean_disagreement"] for r in rows]
    if all(isinstance(d, float) and math.isnan(d) for d in dis):
        ax.text(0.5, 0.5, "no disagreement term", ha="center", va="center")
    else:
        ax.plot(its, dis)
    ax.set_title("ensemble disagreement")
    ax = axes[1][0]
    ax.plot(its, [r["moved_step_fraction"] for r in rows], label="moved")
    ax.plot(its, [r["adjacent_step_fraction"] for r in rows], label="adjacent pair")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title("step fractions")
    ax.legend()
    ax = axes[1][1]
    losses = [r["member_losses"] for r in rows]
    for m in range(len(losses[0])):
        ax.plot(its, [row[m] for row in losses], alpha=0.7, label=f"member {m}")
    ax.set_yscale("log")
    ax.set_title("training loss")
    ax.legend()
    for row_axes in axes:
        for a in row_axes:
            a.set_xlabel("iteration")
            a.grid(True, alpha=0.3)
    fig.tight_layout()
    return _save(fig, path)


def recreation_bars(report: dict, path: Path | str) -> Path:
    """Fractions of rollouts matching the template relation."""
    labels = ["start", "end", "ever"]
    values = [report["start_fraction"], report["recreated_fraction"], report["ever_fraction"]]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(labels, values, color=["#999999", "#2266aa", "#88aacc"])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("fraction of rollouts")
    ax.set_title("template relation matched by movable entities")
    for i, v in enumerate(values):
        ax.text(i, v + 0.02, f"{v:.2f}", ha="center")
    return _save(fig, path)


def conformance_matrix(report: dict, path: Path | str) -> Path:
    """Invariance and favoring verdicts as two aligned grids."""
    cells = report["cells"]
    ops = list(dict.fromkeys(c["operation"] for c in cells))
    variants = list(dict.fromkeys(c["variant"] for c in cells))
    by_key = {(c["operation"], c["variant"]): c for c in cells}
    fig, axes = plt.subplots(1, 2, figsize=(11, 5))
    for ax, field, title in (
        (axes[0], "invariant", "reward unchanged by the operation"),
        (axes[1], "favored", "pattern preferred over scrambled control"),
    ):
        grid = [[1.0 if by_key[(op, v)][field] else 0.0 for v in variants] for op in ops]
        ax.imshow(grid, cmap="RdYlGn", vmin=-0.2, vmax=1.2, aspect="auto")
        for i, op in enumerate(ops):
            for j, v in enumerate(variants):
                cell = by_key[(op, v)]
                mark = "yes" if cell[field] else "no"
                if field == "favored" and not cell[field] and cell.get("favored_after_double"):
                    mark = "2x"
                ax.text(j, i, mark, ha="center", va="center", fontsize=9)
        ax.set_xticks(range(len(variants)), variants, rotation=30, ha="right", fontsize=8)
        ax.set_yticks(range(len(ops)), ops, fontsize=8)
        ax.set_title(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)
