"""Figure rendering for the CLI report path; PNGs land next to the CSVs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_METHOD_COLORS = {"rule": "#1f77b4", "agent": "#2ca02c", "prompt": "#d62728"}


def save_utilization_figure(rows: Sequence[dict], path: str | Path) -> None:
    """Grouped bars of mean utilization (overall, eMBB, URLLC) per method."""
    methods = []
    for row in rows:
        if row["method"] not in methods:
            methods.append(row["method"])
    keys = ("utilization_overall", "utilization_embb", "utilization_urllc")
    labels = ("overall", "eMBB", "URLLC")
    means = {
        m: [
            _mean([r[k] for r in rows if r["method"] == m])
            for k in keys
        ]
        for m in methods
    }
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    width = 0.8 / max(len(methods), 1)
    for i, method in enumerate(methods):
        offsets = [j + i * width for j in range(len(keys))]
        ax.bar(
            offsets,
            means[method],
            width=width,
            label=method,
            color=_METHOD_COLORS.get(method),
        )
    ax.set_xticks([j + width * (len(methods) - 1) / 2 for j in range(len(keys))])
    ax.set_xticklabels(labels)
    ax.set_ylabel("mean bandwidth utilization")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_comparison_figure(table: Sequence[dict], path: str | Path) -> None:
    """Throughput and idle rate versus number of processed users, per method."""
    methods = [m for m in ("rule", "agent", "prompt") if f"throughput_{m}" in table[0]]
    users = [row["users"] for row in table]
    fig, (ax_thr, ax_idle) = plt.subplots(1, 2, figsize=(10.0, 4.0))
    for method in methods:
        color = _METHOD_COLORS.get(method)
        ax_thr.plot(users, [r[f"throughput_{method}"] for r in table], label=method, color=color)
        ax_idle.plot(users, [r[f"idle_{method}"] for r in table], label=method, color=color)
    ax_thr.set_xlabel("users processed")
    ax_thr.set_ylabel("total throughput (Mbps)")
    ax_idle.set_xlabel("users processed")
    ax_idle.set_ylabel("bandwidth idle rate")
    ax_idle.set_ylim(-0.02, 1.02)
    ax_thr.legend()
    ax_idle.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0
