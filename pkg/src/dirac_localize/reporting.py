"""Deterministic report writers: JSON, CSV, gnuplot data files, figures.

Reports are byte-identical across runs for identical configs and seeds; the
only run-dependent field is ``generated_at``, which comparisons must drop.
Figures are rendered with the Agg backend next to the delimited output.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

FIG_DPI = 150


def _jsonable(obj):
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj)!r}")


def write_report(out_dir: Path, payload: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = dict(payload)
    payload["generated_at"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    path = out_dir / "report.json"
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=_jsonable)
        fh.write("\n")
    return path


def write_config_echo(out_dir: Path, config: dict) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "config_echo.json"
    with open(path, "w") as fh:
        json.dump(config, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def write_csv(out_dir: Path, name: str, header: list[str], rows) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def write_gnuplot(out_dir: Path, name: str, columns: dict[str, np.ndarray],
                  comment: str = "") -> Path:
    """Two-or-more column x y data with '#' header comments."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    keys = list(columns)
    data = np.column_stack([np.asarray(columns[k], dtype=float) for k in keys])
    with open(path, "w") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        fh.write("# " + " ".join(keys) + "\n")
        for row in data:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")
    return path


def figure_spectrum(out_dir: Path, name: str, series: dict[str, np.ndarray],
                    title: str, ylabel: str = "eigenvalue") -> Path:
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    for label, vals in series.items():
        vals = np.asarray(vals, dtype=float)
        ax.plot(np.arange(len(vals)), vals, "o-", ms=4, label=label)
    ax.set_xlabel("index")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if len(series) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(out_dir) / name
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path


def figure_loglog(out_dir: Path, name: str, x, series: dict[str, np.ndarray],
                  title: str, xlabel: str, ylabel: str,
                  fit_slope: float | None = None) -> Path:
    fig, ax = plt.subplots(figsize=(5.4, 3.6))
    x = np.asarray(x, dtype=float)
    for label, vals in series.items():
        ax.loglog(x, np.asarray(vals, dtype=float), "o-", ms=4, label=label)
    if fit_slope is not None and len(series):
        first = np.asarray(next(iter(series.values())), dtype=float)
        guide = first[0] * (x / x[0]) ** fit_slope
        ax.loglog(x, guide, "k--", lw=1, label=f"slope {fit_slope:.2f}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(out_dir) / name
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path


def figure_field(out_dir: Path, name: str, density: np.ndarray, title: str) -> Path:
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(density.T, origin="lower", cmap="viridis",
                   extent=(0, 2 * np.pi, 0, 2 * np.pi))
    fig.colorbar(im, ax=ax, shrink=0.85)
    ax.set_title(title)
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    fig.tight_layout()
    path = Path(out_dir) / name
    fig.savefig(path, dpi=FIG_DPI)
    plt.close(fig)
    return path
