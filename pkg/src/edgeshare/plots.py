"""Figure rendering for the CLI report paths.

Figures are derived from the same rows that go into the CSV outputs and are
written next to them as PNG files.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .harness import MetricRow, SeriesRow

_AXIS_LABEL = {"q": "storage capacity Q (bytes)", "m": "edge servers M", "k": "users K"}


def _base_value(rows, axis: str):
    # The non-swept coordinates sit at the experiment's base point, which
    # is the most common value of that column across the grid.
    return Counter(getattr(r, axis) for r in rows).most_common(1)[0][0]


def render_sweep_figures(rows: list[MetricRow], out_dir: Path, stem: str) -> list[Path]:
    """One hit-ratio-vs-axis figure per swept axis; returns written paths."""
    written = []
    for axis in ("q", "m", "k"):
        others = [a for a in ("q", "m", "k") if a != axis]
        base = {a: _base_value(rows, a) for a in others}
        axis_rows = [r for r in rows if all(getattr(r, a) == base[a] for a in others)]
        values = sorted({getattr(r, axis) for r in axis_rows})
        if len(values) < 2:
            continue
        fig, ax = plt.subplots(figsize=(5, 3.4))
        for alg in sorted({r.algorithm for r in axis_rows}):
            means = []
            for v in values:
                pts = [r.hit_ratio_expected for r in axis_rows
                       if r.algorithm == alg and getattr(r, axis) == v]
                means.append(sum(pts) / len(pts))
            ax.plot(values, means, marker="o", label=alg)
        ax.set_xlabel(_AXIS_LABEL[axis])
        ax.set_ylabel("cache hit ratio")
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"{stem}_{axis}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)
    return written


def render_series_figure(rows: list[SeriesRow], path: Path, xlabel: str = "time (s)") -> Path:
    """Hit-ratio time series, one line per algorithm."""
    by_alg: dict[str, list[SeriesRow]] = defaultdict(list)
    for r in rows:
        by_alg[r.algorithm].append(r)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for alg in sorted(by_alg):
        pts = sorted(by_alg[alg], key=lambda r: r.slot)
        ax.plot([r.time_s for r in pts], [r.hit_ratio for r in pts], label=alg)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("cache hit ratio")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
