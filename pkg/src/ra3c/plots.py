"""Static SVG figures: training curves and per-segment crash heatmaps."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.collections import LineCollection  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import SEGMENT_M, SegmentHistogram, rolling  # noqa: E402
from .sim.track import Track  # noqa: E402


def training_curves(episodes: Sequence[dict], out: str | Path, window: int = 100) -> Path:
    """Rolling mean ± deviation of episode distance, speed and hits/km against cumulative steps."""
    if not episodes:
        raise ValueError("no episodes to plot")
    steps = np.cumsum([e["steps"] for e in episodes])
    dist = np.array([e["distance_m"] for e in episodes])
    speed = np.array([e["mean_speed_kmh"] for e in episodes])
    hits = np.array([e["hits"] for e in episodes], dtype=float)
    hpk = np.where(dist > 1.0, 1000.0 * hits / np.maximum(dist, 1.0), np.nan)
    hpk = np.nan_to_num(hpk, nan=0.0)
    fig, axes = plt.subplots(3, 1, figsize=(7, 8), sharex=True)
    for ax, series, label in zip(axes, (dist, speed, hpk),
                                 ("episode distance (m)", "mean speed (km/h)", "hits per km")):
        mean, dev = rolling(series, window)
        ax.plot(steps, mean, lw=1.2)
        ax.fill_between(steps, mean - dev, mean + dev, alpha=0.25)
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("environment steps")
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def crash_heatmap(track: Track, hist: SegmentHistogram, out: str | Path) -> Path:
    """Track layout coloured black→yellow by crash count per 5 m segment."""
    fig, ax = plt.subplots(figsize=(7, 7))
    seg = np.minimum((track.s // SEGMENT_M).astype(int), hist.size - 1)
    counts = hist.crashes[seg].astype(float)
    top = max(counts.max(), 1.0)
    pts = np.stack([track.x, track.y], axis=1)
    lines = LineCollection(np.stack([pts[:-1], pts[1:]], axis=1), cmap="inferno", linewidths=3)
    lines.set_array(counts[:-1])
    lines.set_clim(0, top)
    ax.set_facecolor("#dddddd")
    ax.add_collection(lines)
    ax.autoscale()
    ax.set_aspect("equal")
    fig.colorbar(lines, ax=ax, label="crashes per 5 m segment")
    ax.set_title(f"{int(hist.crashes.sum())} crashes over {track.length:.0f} m")
    out = Path(out)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def speed_cap_chart(rows: Sequence[dict], out: str | Path) -> Path:
    """Crashes/km and hits/km per speed cap."""
    labels = [str(r["cap"]) for r in rows]
    x = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(x - 0.2, [r["crashes_per_km"] for r in rows], 0.4, label="crashes/km")
    ax.bar(x + 0.2, [r["hits_per_km"] for r in rows], 0.4, label="hits/km")
    ax.set_xticks(x, labels)
    ax.set_xlabel("speed cap (km/h)")
    ax.legend()
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out, format="svg")
    plt.close(fig)
    return out


def save_saliency(frame_u8: np.ndarray, saliency: np.ndarray, out: str | Path) -> Path:
    """Frame and its saliency map side by side."""
    fig, axes = plt.subplots(1, 2, figsize=(6, 3))
    axes[0].imshow(frame_u8)
    axes[1].imshow(saliency, cmap="gray")
    for ax in axes:
        ax.axis("off")
    fig.tight_layout()
    out = Path(out)
    fig.savefig(out)
    plt.close(fig)
    return out
