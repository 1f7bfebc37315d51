#!/usr/bin/env python3
"""Figure rendering for oamp-lab experiment logs.

Reads the harness CSV schema (trial,iteration,algorithm,metric,value) and
emits deterministic figure files:

  iterations_box   per-iteration box plots by algorithm
                   ({25,50,75}-percentile boxes, 1.5 x IQR whiskers)
  theta_sweep      final-iteration error curves across a sweep directory
  marginal_overlay iterate histogram overlaid with the Gaussian-mixture
                   density implied by the exported state-evolution CSVs

Usage: plot.py --spec spec.json
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from percentiles import percentile

FIGURE_KINDS = ("iterations_box", "theta_sweep", "marginal_overlay")
CSV_HEADER = ["trial", "iteration", "algorithm", "metric", "value"]

ALGORITHM_COLORS = {
    "bayes_oamp": "#1f77b4",
    "single_iterate": "#ff7f0e",
    "gaussian_bayes_amp": "#2ca02c",
}

SAVEFIG = dict(dpi=120, metadata={"Software": "oamp-lab plots"})


class SchemaError(ValueError):
    pass


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise SchemaError(
                f"{path}: expected columns {CSV_HEADER}, found {reader.fieldnames}"
            )
        rows = [
            {
                "trial": int(r["trial"]),
                "iteration": int(r["iteration"]),
                "algorithm": r["algorithm"],
                "metric": r["metric"],
                "value": float(r["value"]),
            }
            for r in reader
        ]
    if not rows:
        raise SchemaError(f"{path}: no records")
    return rows


def box_stats(values):
    """{25,50,75} percentiles with 1.5 x IQR whiskers clamped to the data."""
    q1 = percentile(values, 25.0)
    q2 = percentile(values, 50.0)
    q3 = percentile(values, 75.0)
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = [v for v in values if lo_fence <= v <= hi_fence]
    lo = min(inside) if inside else q1
    hi = max(inside) if inside else q3
    return q1, q2, q3, lo, hi


def render_iterations_box(spec: dict) -> None:
    rows = read_metrics(spec["input_csv"])
    metric = spec.get("metric", "subspace_distance")
    rows = [r for r in rows if r["metric"] == metric]
    if not rows:
        raise SchemaError(f"no records for metric {metric!r}")
    algorithms = sorted({r["algorithm"] for r in rows})
    iterations = sorted({r["iteration"] for r in rows})
    grouped = defaultdict(list)
    for r in rows:
        grouped[(r["algorithm"], r["iteration"])].append(r["value"])

    fig, ax = plt.subplots(figsize=(7, 4.5))
    width = 0.8 / max(1, len(algorithms))
    for idx, algo in enumerate(algorithms):
        color = ALGORITHM_COLORS.get(algo, "#555555")
        xs, meds = [], []
        for it in iterations:
            values = grouped.get((algo, it))
            if not values:
                continue
            q1, q2, q3, lo, hi = box_stats(values)
            x = it + (idx - (len(algorithms) - 1) / 2) * width
            ax.add_patch(
                plt.Rectangle(
                    (x - width * 0.4, q1),
                    width * 0.8,
                    max(q3 - q1, 1e-12),
                    fill=False,
                    edgecolor=color,
                    linewidth=1.2,
                )
            )
            ax.plot([x - width * 0.4, x + width * 0.4], [q2, q2], color=color, linewidth=1.6)
            ax.plot([x, x], [hi, q3], color=color, linewidth=1.0)
            ax.plot([x, x], [lo, q1], color=color, linewidth=1.0)
            xs.append(x)
            meds.append(q2)
        ax.plot(xs, meds, color=color, linewidth=0.8, alpha=0.6, label=algo)
    ax.set_xlabel(spec.get("xlabel", "iteration"))
    ax.set_ylabel(spec.get("ylabel", metric))
    ax.set_title(spec.get("title", ""))
    ax.set_xticks(iterations)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(spec["output"], **SAVEFIG)
    plt.close(fig)


def render_theta_sweep(spec: dict) -> None:
    sweep_dir = Path(spec["input_csv"])
    if not sweep_dir.is_dir():
        raise SchemaError(f"{sweep_dir}: theta_sweep expects a directory of theta_*.csv logs")
    metric = spec.get("metric", "subspace_distance")
    files = sorted(sweep_dir.glob("theta_*.csv"))
    if not files:
        raise SchemaError(f"{sweep_dir}: no theta_*.csv files")
    curves = defaultdict(list)
    thetas = []
    for path in files:
        theta = float(path.stem.split("_", 1)[1])
        thetas.append(theta)
        rows = [r for r in read_metrics(path) if r["metric"] == metric]
        last_iter = defaultdict(dict)
        for r in rows:
            last_iter[(r["algorithm"], r["trial"])][r["iteration"]] = r["value"]
        per_algo = defaultdict(list)
        for (algo, _trial), by_iter in last_iter.items():
            per_algo[algo].append(by_iter[max(by_iter)])
        for algo, vals in per_algo.items():
            curves[algo].append((theta, percentile(vals, 50.0)))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for algo in sorted(curves):
        pts = sorted(curves[algo])
        ax.plot(
            [p[0] for p in pts],
            [p[1] for p in pts],
            marker="o",
            markersize=3,
            label=algo,
            color=ALGORITHM_COLORS.get(algo, "#555555"),
        )
    ax.set_xlabel(spec.get("xlabel", "signal strength"))
    ax.set_ylabel(spec.get("ylabel", f"median final {metric}"))
    ax.set_title(spec.get("title", ""))
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(spec["output"], **SAVEFIG)
    plt.close(fig)


def _load_se_matrix(path, iteration: int) -> np.ndarray:
    entries = {}
    max_row = max_col = 0
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["iter", "row_block", "col_block", "i", "j", "value"]
        if reader.fieldnames != expected:
            raise SchemaError(f"{path}: expected columns {expected}, found {reader.fieldnames}")
        for r in reader:
            if int(r["iter"]) != iteration:
                continue
            row = entries.setdefault((int(r["row_block"]), int(r["i"])), {})
            row[(int(r["col_block"]), int(r["j"]))] = float(r["value"])
    if not entries:
        raise SchemaError(f"{path}: no rows for iteration {iteration}")
    row_keys = sorted(entries)
    col_keys = sorted({k for row in entries.values() for k in row})
    out = np.zeros((len(row_keys), len(col_keys)))
    for ri, rk in enumerate(row_keys):
        for ci, ck in enumerate(col_keys):
            out[ri, ci] = entries[rk].get(ck, 0.0)
    return out


def render_marginal_overlay(spec: dict) -> None:
    iteration = int(spec.get("iteration", 0))
    column = int(spec.get("column", 0))
    values = []
    with open(spec["input_csv"], newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["iteration", "column", "value"]
        if reader.fieldnames != expected:
            raise SchemaError(
                f"{spec['input_csv']}: expected columns {expected}, found {reader.fieldnames}"
            )
        for r in reader:
            if int(r["iteration"]) == iteration and int(r["column"]) == column:
                values.append(float(r["value"]))
    if not values:
        raise SchemaError(f"no iterate samples for iteration {iteration}, column {column}")

    # density comes from the exported SE state, never re-derived
    sigma = _load_se_matrix(spec["sigma_csv"], iteration)
    mu = _load_se_matrix(spec["mu_csv"], iteration)
    with open(spec["prior_json"]) as fh:
        prior = json.load(fh)
    atoms = np.asarray(prior["atoms"], dtype=float)
    weights = np.asarray(prior["weights"], dtype=float)
    coord = column  # coordinate within the stacked iterate blocks
    offset = iteration * atoms.shape[1] + coord
    var = sigma[offset, offset]
    means = mu[offset] @ atoms.T

    lo = min(values) - 0.5
    hi = max(values) + 0.5
    grid = np.linspace(lo, hi, 400)
    dens = np.zeros_like(grid)
    for w, m in zip(weights, means):
        dens += w * np.exp(-0.5 * (grid - m) ** 2 / var) / math.sqrt(2 * math.pi * var)

    fig, ax = plt.subplots(figsize=(5.5, 4))
    ax.hist(values, bins=60, density=True, color="#bbccee", edgecolor="none")
    ax.plot(grid, dens, color="#cc3311", linewidth=1.5, label="state-evolution density")
    ax.set_title(spec.get("title", f"iteration {iteration}, column {column + 1}"))
    ax.set_xlabel(spec.get("xlabel", "iterate value"))
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(spec["output"], **SAVEFIG)
    plt.close(fig)


RENDERERS = {
    "iterations_box": render_iterations_box,
    "theta_sweep": render_theta_sweep,
    "marginal_overlay": render_marginal_overlay,
}


def render(spec: dict) -> None:
    kind = spec.get("figure")
    if kind not in RENDERERS:
        raise SchemaError(f"figure must be one of {FIGURE_KINDS}, got {kind!r}")
    if "input_csv" not in spec or "output" not in spec:
        raise SchemaError("spec needs input_csv and output")
    RENDERERS[kind](spec)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--spec", required=True, help="JSON plot specification")
    args = parser.parse_args(argv)
    with open(args.spec) as fh:
        spec = json.load(fh)
    try:
        render(spec)
    except (SchemaError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
