"""Figure rendering for run outputs.

Reads the delimited trace/aggregate files written by the harness and
renders matplotlib figures next to them.  This is the only module that
imports matplotlib; the simulation path stays plot-free so traces remain
consumable by any external tool.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class ReportError(ValueError):
    """Raised when an input file is missing or malformed."""


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.exists():
        raise ReportError(f"no such file: {path}")
    with path.open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    if len(rows) < 2:
        raise ReportError(f"{path}: no data rows")
    return rows[0], rows[1:]


def render_trace_figure(trace_csv, out_png=None) -> Path:
    """Semilog decay plot of disagreement, |optimality gap| and membership residual."""
    trace_csv = Path(trace_csv)
    header, rows = _read_csv(trace_csv)
    expected = ["t", "disagreement", "optimality_gap", "membership_residual"]
    if header != expected:
        raise ReportError(f"{trace_csv}: unexpected columns {header}, expected {expected}")
    data = np.array([[float(v) for v in row] for row in rows])
    t = data[:, 0]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    floor = 1e-18
    ax.semilogy(t, np.maximum(data[:, 1], floor), label="disagreement", lw=1.4)
    ax.semilogy(t, np.maximum(np.abs(data[:, 2]), floor), label="|optimality gap|", lw=1.2)
    ax.semilogy(t, np.maximum(data[:, 3], floor), label="membership residual", lw=1.0, ls="--")
    ax.set_xlabel("iteration")
    ax.set_ylabel("residual")
    ax.set_title(trace_csv.parent.name or trace_csv.stem)
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()

    out = Path(out_png) if out_png else trace_csv.with_suffix(".png")
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_sweep_figure(aggregate_csv, out_png=None) -> Path:
    """Box plot of estimation error against the swept parameter."""
    aggregate_csv = Path(aggregate_csv)
    header, rows = _read_csv(aggregate_csv)
    if len(header) < 3 or header[0] != "trial" or header[2] != "error":
        raise ReportError(f"{aggregate_csv}: unexpected columns {header}")
    parameter = header[1]
    values = sorted({int(r[1]) for r in rows})
    groups = [[float(r[2]) for r in rows if int(r[1]) == v] for v in values]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.boxplot(groups, tick_labels=[str(v) for v in values])
    ax.plot(range(1, len(values) + 1), [float(np.median(g)) for g in groups],
            "o-", color="tab:red", ms=4, lw=1, label="median")
    ax.set_xlabel(parameter.replace("_", " "))
    ax.set_ylabel("error vs ground truth (Frobenius)")
    ax.set_title(aggregate_csv.parent.name or aggregate_csv.stem)
    ax.grid(True, axis="y", alpha=0.3)
    ax.legend()
    fig.tight_layout()

    out = Path(out_png) if out_png else aggregate_csv.with_suffix(".png")
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return out


def render_report(target, out_dir=None) -> list[Path]:
    """Render every figure supported by the files under ``target``.

    ``target`` may be a run directory or a single CSV file.  Figures land
    next to their source unless ``out_dir`` is given.
    """
    target = Path(target)
    outputs: list[Path] = []

    def _dest(src: Path) -> Path | None:
        if out_dir is None:
            return None
        return Path(out_dir) / src.with_suffix(".png").name

    if target.is_file():
        if target.name.startswith("aggregate"):
            outputs.append(render_sweep_figure(target, _dest(target)))
        else:
            outputs.append(render_trace_figure(target, _dest(target)))
        return outputs

    if not target.is_dir():
        raise ReportError(f"no such file or directory: {target}")
    trace = target / "trace.csv"
    aggregate = target / "aggregate.csv"
    if trace.exists():
        outputs.append(render_trace_figure(trace, _dest(trace)))
    if aggregate.exists():
        outputs.append(render_sweep_figure(aggregate, _dest(aggregate)))
    if not outputs:
        raise ReportError(f"{target}: found neither trace.csv nor aggregate.csv")
    return outputs
