"""Render convergence/decay figures from the solver CSVs.

A FigureSpec names the input CSV(s), maps columns to curves, fixes the axis
scales and rate-triangle annotations, and selects the rows used for the
printed least-squares slopes.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class FigureError(Exception):
    pass


@dataclass
class Curve:
    x: str                 # column name for the abscissa
    y: str                 # column name for the ordinate
    label: str = ""
    style: str = "-o"
    csv: str = None        # optional per-curve CSV (defaults to spec.csv)


@dataclass
class FigureSpec:
    csv: str
    curves: list
    output: str
    xscale: str = "log"
    yscale: str = "log"
    xlabel: str = "degrees of freedom"
    title: str = ""
    triangles: list = field(default_factory=list)   # slopes to annotate
    fit_tail: int = None    # rows (from the end) used for slope fits


def read_csv(path):
    path = Path(path)
    if not path.exists():
        raise FigureError(f"missing CSV file: {path}")
    with open(path) as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if len(rows) < 2:
        raise FigureError(f"CSV has no data rows: {path}")
    header = [h.strip() for h in rows[0]]
    data = np.array([[float(v) for v in row] for row in rows[1:]])
    return {name: data[:, j] for j, name in enumerate(header)}


def least_squares_slope(x, y):
    """Slope of log(y) against log(x) (log-log convergence rate)."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def two_point_slope(x, y):
    """Independent check: the log-ratio over the last two rows."""
    return float(np.log(y[-1] / y[-2]) / np.log(x[-1] / x[-2]))


def render(spec: FigureSpec) -> dict:
    """Write the figure and return {curve label: fitted slope}."""
    tables = {}

    def table(name):
        key = name or spec.csv
        if key not in tables:
            tables[key] = read_csv(key)
        return tables[key]

    # validate all columns before any drawing
    for curve in spec.curves:
        cols = table(curve.csv)
        for name in (curve.x, curve.y):
            if name not in cols:
                raise FigureError(
                    f"column {name!r} not present in "
                    f"{curve.csv or spec.csv} (has {sorted(cols)})")

    fig, ax = plt.subplots(figsize=(7.0, 5.0))
    ax.set_xscale(spec.xscale)
    ax.set_yscale(spec.yscale)
    slopes = {}
    for curve in spec.curves:
        cols = table(curve.csv)
        x, y = cols[curve.x], cols[curve.y]
        label = curve.label or curve.y
        ax.plot(x, y, curve.style, label=label, markersize=4, linewidth=1.1)
        if spec.xscale == "log" and spec.yscale == "log":
            sel = slice(-spec.fit_tail, None) if spec.fit_tail else slice(None)
            xs, ys = x[sel], y[sel]
            if len(xs) >= 2 and np.all(ys > 0):
                slopes[label] = least_squares_slope(xs, ys)
                print(f"slope {label}: {slopes[label]:+.6f}")
    for slope in spec.triangles:
        _draw_triangle(ax, slope)
    ax.grid(True, which="major", alpha=0.4)
    ax.set_xlabel(spec.xlabel)
    if spec.title:
        ax.set_title(spec.title)
    ax.legend(fontsize=8, loc="best")
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return slopes


def _draw_triangle(ax, slope):
    """Rate triangle with horizontal run one decade wide, anchored in the
    lower-right region of the current data window."""
    x0, x1 = ax.get_xlim()
    y0, y1 = ax.get_ylim()
    xa = 10 ** (np.log10(x0) + 0.55 * (np.log10(x1) - np.log10(x0)))
    xb = 10 ** (np.log10(xa) + 1.0)
    ya = 10 ** (np.log10(y0) + (0.30 + 0.25 * abs(slope))
                * (np.log10(y1) - np.log10(y0)))
    yb = ya * (xb / xa) ** (-abs(slope))
    ax.plot([xa, xb, xb, xa], [ya, ya, yb, ya], "k-", linewidth=0.9)
    ax.annotate("1", xy=(np.sqrt(xa * xb), ya), textcoords="offset points",
                xytext=(0, 3), ha="center", fontsize=8)
    ax.annotate(f"{abs(slope):g}", xy=(xb, np.sqrt(ya * yb)),
                textcoords="offset points", xytext=(4, 0), fontsize=8)
