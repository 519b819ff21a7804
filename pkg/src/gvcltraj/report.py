"""Text tables, CSV export and figures for metric reports."""

from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from .metrics import HIGHER_IS_BETTER, METRIC_NAMES


def _fmt(x: float) -> str:
    return f"{x:.3f}"


def rows_from_reports(reports: list[dict]) -> list[dict]:
    """Flatten reports into per-seed rows followed by one aggregate row per experiment."""
    seed_rows, agg_rows = [], []
    for rep in reports:
        cfg = rep["config"]
        key = {"variant": cfg["variant"], "epsilon": cfg["epsilon"], "fraction": cfg["fraction"]}
        for r in rep["per_seed"]:
            seed_rows.append(dict(key, seed=str(r["seed"]), **r["metrics"]))
        agg_rows.append(dict(key, seed="mean", **rep["mean"], _std=rep["std"]))
    return seed_rows + agg_rows


def best_marks(agg_rows: list[dict]) -> dict[tuple[int, str], bool]:
    """(row index, metric) -> True where the aggregate is the best within its (epsilon, fraction) group."""
    marks = {}
    groups: dict[tuple, list[int]] = {}
    for i, r in enumerate(agg_rows):
        groups.setdefault((r["epsilon"], r["fraction"]), []).append(i)
    for idx in groups.values():
        if len(idx) < 2:
            continue
        for m in METRIC_NAMES:
            vals = np.array([agg_rows[i][m] for i in idx])
            best = vals.max() if HIGHER_IS_BETTER.get(m, False) else vals.min()
            for i, v in zip(idx, vals):
                marks[(i, m)] = bool(v == best)
    return marks


def text_table(reports: list[dict]) -> str:
    """Aligned table: per-seed rows, then mean +- std rows with the best value starred."""
    rows = rows_from_reports(reports)
    agg = [r for r in rows if r["seed"] == "mean"]
    marks = best_marks(agg)
    head = ["variant", "eps", "frac", "seed", *METRIC_NAMES]
    body = []
    a = 0
    for r in rows:
        cells = [r["variant"], f"{r['epsilon']:g}", f"{r['fraction']:g}", r["seed"]]
        for m in METRIC_NAMES:
            if r["seed"] == "mean":
                c = f"{_fmt(r[m])}+-{_fmt(r['_std'][m])}"
                if marks.get((a, m)):
                    c += "*"
            else:
                c = _fmt(r[m])
            cells.append(c)
        if r["seed"] == "mean":
            a += 1
        body.append(cells)
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    line = lambda cells: "  ".join(str(c).rjust(w) for c, w in zip(cells, widths))
    out = [line(head), "  ".join("-" * w for w in widths)]
    out += [line(c) for c in body]
    return "\n".join(out) + "\n"


def to_csv(reports: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["variant", "epsilon", "fraction", "seed", *METRIC_NAMES, "nll_clamped"])
    for rep in reports:
        cfg = rep["config"]
        for r in rep["per_seed"]:
            w.writerow([cfg["variant"], cfg["epsilon"], cfg["fraction"], r["seed"],
                        *[repr(float(r["metrics"][m])) for m in METRIC_NAMES], r.get("nll_clamped", 0)])
    return buf.getvalue()


def render_figures(reports: list[dict], out_dir) -> list[Path]:
    """Bar chart per headline metric (mean with std error bars) and ADE_k curves."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    labels = [f"{r['config']['variant']}\neps={r['config']['epsilon']:g} f={r['config']['fraction']:g}"
              for r in reports]
    paths = []

    fig, axes = plt.subplots(1, 4, figsize=(4 * 4, 3.6))
    for ax, m in zip(axes, ("NLL", "ADE_1", "HitRate_5_2", "DAC")):
        mean = [r["mean"][m] for r in reports]
        std = [r["std"][m] for r in reports]
        ax.bar(range(len(reports)), mean, yerr=std, capsize=3, color="0.6", edgecolor="k")
        ax.set_xticks(range(len(reports)), labels, rotation=60, fontsize=7)
        ax.set_title(m)
    fig.tight_layout()
    p = out_dir / "metrics.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)

    fig, ax = plt.subplots(figsize=(5, 3.6))
    ks = [1, 5, 10, 15]
    for r, lab in zip(reports, labels):
        ax.errorbar(ks, [r["mean"][f"ADE_{k}"] for k in ks], yerr=[r["std"][f"ADE_{k}"] for k in ks],
                    marker="o", capsize=2, label=lab.replace("\n", " "))
    ax.set_xlabel("k")
    ax.set_ylabel("ADE_k [m]")
    ax.legend(fontsize=6)
    fig.tight_layout()
    p = out_dir / "ade_k.png"
    fig.savefig(p, dpi=120)
    plt.close(fig)
    paths.append(p)
    return paths
