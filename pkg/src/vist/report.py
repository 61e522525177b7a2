"""Figures for run directories: loss curves, distance curves, token
information gain and masked-text previews. Written as PNG files next to
the CSV they are drawn from."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .eval import read_curves_csv  # noqa: E402

_META = {"Software": None}  # keep PNG bytes free of version strings


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return Path(path)


def read_metrics(path):
    with open(path, newline="") as f:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(f)]


def plot_losses(rows, path):
    fig, ax = plt.subplots(figsize=(6, 3.5))
    steps = [r["step"] for r in rows]
    ax.plot(steps, [r["lm_loss"] for r in rows], label="LM loss", lw=1)
    if any(r["pve_loss"] for r in rows):
        ax.plot(steps, [r["pve_loss"] for r in rows], label="PVE loss", lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend()
    return _save(fig, path)


def plot_distance_curves(curves_by_label: dict, path, stat: str = "sum", title=None):
    """``curves_by_label``: label -> {mode: [(ratio, sum, mean, n)]}."""
    col = 1 if stat == "sum" else 2
    fig, ax = plt.subplots(figsize=(5.5, 3.5))
    for label, curves in sorted(curves_by_label.items()):
        for mode, pts in sorted(curves.items()):
            pts = [p for p in pts if p[col] is not None]
            name = mode if len(curves_by_label) == 1 else f"{label} ({mode})"
            ax.plot([p[0] for p in pts], [p[col] for p in pts], marker="o", ms=3, label=name)
    ax.set_xlabel("mask ratio")
    ax.set_ylabel(f"cosine distance ({stat})")
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_info_gain(profile, texts, path):
    """Bar per token; bars of tokens flagged for masking are grey."""
    fig, ax = plt.subplots(figsize=(max(4, 0.35 * len(profile)), 3))
    colors = ["0.7" if f else "tab:red" for _, _, f in profile]
    ax.bar(range(len(profile)), [s for _, s, _ in profile], color=colors)
    ax.set_xticks(range(len(profile)))
    ax.set_xticklabels([t.replace(" ", "␣") for t in texts], rotation=90, fontsize=7)
    ax.set_ylabel("importance score")
    return _save(fig, path)


def plot_mask_preview(texts, flags, path, width=80):
    """Text with masked tokens struck out in grey, wrapped at ``width`` chars."""
    lines, cur, n = [[]], 0, 0
    for t, f in zip(texts, flags):
        if cur + len(t) > width and lines[-1]:
            lines.append([])
            cur = 0
        lines[-1].append((t, f))
        cur += len(t)
        n += 1
    fig, ax = plt.subplots(figsize=(8, 0.3 * len(lines) + 0.4))
    ax.axis("off")
    ax.set_xlim(0, width)
    ax.set_ylim(len(lines), 0)
    for y, line in enumerate(lines):
        x = 0
        for t, f in line:
            ax.text(x, y + 0.7, t, family="monospace", fontsize=8, color="0.75" if f else "black")
            x += len(t)
    return _save(fig, path)


def build_report(run_dir, out_dir) -> list[Path]:
    """Render figures for whatever a run directory holds."""
    run, out = Path(run_dir), Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    made = []
    if (run / "metrics.csv").exists():
        made.append(plot_losses(read_metrics(run / "metrics.csv"), out / "losses.png"))
    curves = {p.stem[: -len("_curves")]: read_curves_csv(p) for p in sorted(run.glob("*_curves.csv"))}
    for name, c in curves.items():
        made.append(plot_distance_curves({name: c}, out / f"{name}.png", title=name))
    return made
