"""Risk and bias plots from long-format sweep rows (matplotlib, Agg)."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .estimators import SYMBOLS, EstimatorId  # noqa: E402

_LABELS = {
    "mse": "MSE",
    "bias": "Bias",
}


def render_figures(rows, out_dir) -> list[Path]:
    """One PNG per (design, metric); returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    groups = defaultdict(lambda: defaultdict(list))
    for r in rows:
        groups[(r.n1, r.n2, r.metric)][r.estimator].append((r.theta, r.value))
    paths = []
    for (n1, n2, metric), series in sorted(groups.items()):
        fig, ax = plt.subplots(figsize=(6, 4))
        for tag, pts in series.items():
            pts.sort()
            ax.plot([p[0] for p in pts], [p[1] for p in pts],
                    label=SYMBOLS[EstimatorId(tag)], linewidth=1.4)
        ax.set_xlabel("theta")
        ax.set_ylabel(_LABELS[metric])
        ax.set_title(f"{_LABELS[metric]}, n1={n1}, n2={n2}")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        path = out_dir / f"{metric}_n1_{n1}_n2_{n2}.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        paths.append(path)
    return paths
