"""Figure rendering for simulation runs (report path of the CLI)."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .models import logistic

__all__ = ["render_report"]


def _read_csv(path: Path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _col(header, data, name):
    return data[:, header.index(name)]


def render_report(csv_path, meta_path, out_dir=None) -> list:
    """Render figures for a trajectory CSV + metadata JSON; returns paths."""
    csv_path = Path(csv_path)
    meta = json.loads(Path(meta_path).read_text())
    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    header, data = _read_csv(csv_path)
    model = meta.get("model", "unknown")
    k = _col(header, data, "k")
    written = []

    fig, ax = plt.subplots(figsize=(7, 4))
    if model == "blockmodel":
        ax.plot(k, _col(header, data, "y_1"), lw=0.6, alpha=0.5, label="measured density")
        ax.plot(k, logistic(_col(header, data, "x_1")), lw=1.6, label="true probability")
        ax.plot(k, logistic(_col(header, data, "z_1")), lw=1.2, label="observer estimate")
        if "zhat_1" in header:
            ax.plot(k, logistic(_col(header, data, "zhat_1")), lw=0.8, alpha=0.8,
                    label="private estimate")
        ax.set_ylabel("edge formation probability")
    elif model == "sir":
        ax.plot(k, _col(header, data, "y_1"), lw=0.6, alpha=0.5, label="syndromic signal")
        ax.plot(k, _col(header, data, "x_2"), lw=1.6, label="true infectious fraction")
        ax.plot(k, _col(header, data, "z_2"), lw=1.2, label="observer estimate")
        if "zhat_2" in header:
            ax.plot(k, _col(header, data, "zhat_2"), lw=0.8, alpha=0.8, label="private estimate")
        ax.set_ylabel("infectious fraction")
    else:
        for name in header[1:]:
            ax.plot(k, _col(header, data, name), lw=0.9, label=name)
    ax.set_xlabel("step k")
    ax.legend(loc="best", fontsize=8)
    ax.grid(alpha=0.25)
    fig.tight_layout()
    out = out_dir / (csv_path.stem + "_estimate.png")
    fig.savefig(out, dpi=130)
    plt.close(fig)
    written.append(out)

    if "gap" in header and "bound" in header:
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.semilogy(k, np.maximum(_col(header, data, "gap"), 1e-300), lw=1.2,
                    label="adjacent-pair gap")
        ax.semilogy(k, np.maximum(_col(header, data, "bound"), 1e-300), lw=1.2,
                    ls="--", label="contraction bound")
        ax.set_xlabel("step k")
        ax.set_ylabel("estimate deviation")
        ax.legend(loc="best", fontsize=8)
        ax.grid(alpha=0.25)
        fig.tight_layout()
        out = out_dir / (csv_path.stem + "_gap.png")
        fig.savefig(out, dpi=130)
        plt.close(fig)
        written.append(out)
    return written
