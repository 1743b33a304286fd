from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import SweepResult  # noqa: E402


def plot_sweep(result: SweepResult, path, db: bool = True, title: str | None = None) -> None:
    """NMESE against rate, one line per (K, policy), saved as SVG."""
    series = defaultdict(list)
    for r in result.rows:
        series[(r.K, r.policy, r.trunc)].append(r)
    truncs = {key[2] for key in series}
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for (K, policy, trunc), rows in sorted(series.items()):
        rows.sort(key=lambda r: r.rate)
        x = [r.rate for r in rows]
        y = [r.nmese_db if db else r.nmese for r in rows]
        label = f"K={K} {policy}" + (f" trunc={trunc:g}" if len(truncs) > 1 else "")
        ax.plot(x, y, marker="o", ms=3, lw=1.2, label=label)
    ax.set_xlabel("rate per slot (nats)")
    ax.set_ylabel("NMESE (dB)" if db else "NMESE")
    if title:
        ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8, frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
