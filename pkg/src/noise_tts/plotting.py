"""Figure helpers. Everything renders straight to image files (Agg backend)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 110


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_mels(panels: dict[str, np.ndarray], path, title: str | None = None,
              vmin: float | None = None, vmax: float | None = None) -> Path:
    """Stack of log-mel heatmaps sharing one color scale; each panel is (frames, mels)."""
    panels = {k: np.asarray(v) for k, v in panels.items() if v is not None}
    if vmin is None:
        vmin = min(float(v.min()) for v in panels.values())
    if vmax is None:
        vmax = max(float(v.max()) for v in panels.values())
    fig, axes = plt.subplots(len(panels), 1, figsize=(7, 1.9 * len(panels)), squeeze=False,
                             sharex=True)
    for ax, (name, mel) in zip(axes[:, 0], panels.items()):
        im = ax.imshow(mel.T, origin="lower", aspect="auto", interpolation="nearest",
                       vmin=vmin, vmax=vmax, cmap="magma")
        ax.set_ylabel("mel bin")
        ax.set_title(name, fontsize=9, loc="left")
    axes[-1, 0].set_xlabel("frame")
    fig.colorbar(im, ax=axes[:, 0].tolist(), shrink=0.8, label="log amplitude")
    if title:
        fig.suptitle(title, fontsize=10)
    return _save(fig, path)


def plot_loss_curves(rows: list[dict], path, split: str = "train",
                     terms: list[str] | None = None) -> Path:
    """One line per loss term against step, log-scaled y axis."""
    series: dict[tuple[str, str], list[tuple[int, float]]] = {}
    for r in rows:
        if r["split"] != split or (terms and r["term"] not in terms):
            continue
        series.setdefault((r["stage"], r["term"]), []).append((r["step"], r["value"]))
    fig, ax = plt.subplots(figsize=(7, 4))
    for (stage, term), pts in sorted(series.items()):
        steps, values = zip(*pts)
        values = np.maximum(np.asarray(values, dtype=float), 1e-6)
        ax.plot(steps, values, label=f"{stage}:{term}", lw=1)
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel(f"{split} loss")
    if series:
        ax.legend(fontsize=7, ncol=2)
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_metric_bars(labels: list[str], values: dict[str, list[float]], path,
                     title: str | None = None) -> Path:
    """Grouped bars, one group per metric, one bar per label (e.g. ablation setting)."""
    metrics = list(values)
    x = np.arange(len(metrics))
    width = 0.8 / max(len(labels), 1)
    fig, ax = plt.subplots(figsize=(1.6 * len(metrics) + 2, 3.5))
    for i, label in enumerate(labels):
        ax.bar(x + i * width, [values[m][i] for m in metrics], width, label=label)
    ax.set_xticks(x + width * (len(labels) - 1) / 2, metrics, rotation=20, fontsize=8)
    ax.legend(fontsize=7)
    if title:
        ax.set_title(title, fontsize=10)
    return _save(fig, path)
