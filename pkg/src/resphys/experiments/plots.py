"""Static figures from the metric CSVs (needs the ``plots`` extra)."""

from __future__ import annotations

import logging
from pathlib import Path

import pandas as pd

logger = logging.getLogger(__name__)


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ImportError("plotting needs matplotlib; install the 'plots' extra (resphys[plots])") from exc
    return plt


def render_error_curves(curves: pd.DataFrame, path: str | Path, metric: str = "E_q") -> Path:
    """Per-step mean +- std error of every method, in millimeters."""
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for method, group in curves[curves["metric"] == metric].groupby("method"):
        group = group.sort_values("step")
        mean, std = group["mean"] * 1e3, group["std"] * 1e3
        ax.plot(group["step"], mean, label=method)
        ax.fill_between(group["step"], mean - std, mean + std, alpha=0.2)
    ax.set_xlabel("time step")
    ax.set_ylabel(f"{metric} [mm]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info("wrote %s", path)
    return Path(path)


def render_ablation(table: pd.DataFrame, path: str | Path) -> Path:
    """Box plot of E_q per marker count."""
    plt = _pyplot()
    counts = sorted(table["count"].unique())
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.boxplot([table.loc[table["count"] == c, "E_q"] * 1e3 for c in counts], tick_labels=[str(c) for c in counts])
    ax.set_xlabel("markers")
    ax.set_ylabel("E_q [mm]")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    logger.info("wrote %s", path)
    return Path(path)
