"""CSV -> figure rendering with recomputed scaling fits.

The fit definition (degree-1 np.polyfit on transformed axes) matches the
one the simulator uses for its JSON summaries, and the CSVs store floats
via repr, so a recomputed slope agrees with the summary to the last bit;
``render`` can cross-check that against a summary JSON and refuses to
draw a fit line that disagrees.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

KINDS = ("loglog_fit", "semilog_fit", "density", "cf_decay")

# default columns per kind, so common artifacts render without a full spec
_DEFAULT_COLUMNS = {
    "cf_decay": ("N", "sup_cf_error"),
    "density": ("bin_left", "density"),
}


class PlotDataError(ValueError):
    """The CSV (or summary JSON) cannot back the requested plot."""


@dataclass
class PlotSpec:
    csv_path: str
    kind: str
    out_path: str
    x: Optional[str] = None
    y: Optional[str] = None
    xlabel: Optional[str] = None
    ylabel: Optional[str] = None
    title: Optional[str] = None
    # optional cross-check: summary JSON holding the simulator's own fit;
    # fit_key is "/"-separated (e.g. "fit" or "fits/0.2")
    fit_json: Optional[str] = None
    fit_key: str = "fit"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PlotDataError(
                f"unknown plot kind {self.kind!r} (one of {', '.join(KINDS)})"
            )
        if self.kind == "density":
            self.x = self.x or "bin_left"
            self.y = self.y or "density"
        elif self.kind == "cf_decay":
            self.x = self.x or "N"
            self.y = self.y or "sup_cf_error"
        elif self.x is None or self.y is None:
            raise PlotDataError(f"kind {self.kind!r} needs x and y column names")

    @classmethod
    def from_file(cls, path) -> "PlotSpec":
        with open(path) as fh:
            raw = json.load(fh)
        known = {
            "csv_path", "kind", "out_path", "x", "y",
            "xlabel", "ylabel", "title", "fit_json", "fit_key",
        }
        bad = set(raw) - known
        if bad:
            raise PlotDataError(f"unknown spec keys: {sorted(bad)}")
        return cls(**raw)


def read_columns(path, names: List[str]) -> List[np.ndarray]:
    """Columns from a headered CSV, with errors naming the row/column."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PlotDataError(f"{path}: empty CSV (no header row)")
        for n in names:
            if n not in reader.fieldnames:
                raise PlotDataError(
                    f"{path}: missing column {n!r} "
                    f"(has {', '.join(reader.fieldnames)})"
                )
        cols = {n: [] for n in names}
        n_rows = 0
        for i, row in enumerate(reader, start=2):  # header is line 1
            n_rows += 1
            for n in names:
                try:
                    cols[n].append(float(row[n]))
                except (TypeError, ValueError):
                    raise PlotDataError(
                        f"{path}: row {i}, column {n!r}: "
                        f"not a number ({row[n]!r})"
                    ) from None
    if n_rows == 0:
        raise PlotDataError(f"{path}: empty CSV (header but no data rows)")
    return [np.array(cols[n]) for n in names]


def recompute_fit(xs, ys, transform: str) -> Tuple[float, float, float]:
    """(slope, intercept, r_squared), same definition as the simulator."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if transform == "loglog":
        tx, ty = np.log(xs), np.log(ys)
    elif transform == "semilogy":
        tx, ty = xs, np.log(ys)
    elif transform == "linear":
        tx, ty = xs, ys
    else:
        raise ValueError(f"unknown transform {transform!r}")
    slope, intercept = np.polyfit(tx, ty, 1)
    resid = ty - (slope * tx + intercept)
    sstot = float(((ty - ty.mean()) ** 2).sum())
    r2 = 1.0 - float((resid ** 2).sum()) / sstot if sstot > 0 else 1.0
    return float(slope), float(intercept), r2


def _json_fit_slope(spec: PlotSpec) -> Optional[float]:
    if spec.fit_json is None:
        return None
    with open(spec.fit_json) as fh:
        node = json.load(fh)
    for part in spec.fit_key.split("/"):
        if not isinstance(node, dict) or part not in node:
            raise PlotDataError(
                f"{spec.fit_json}: no fit under key {spec.fit_key!r}"
            )
        node = node[part]
    if node is None:
        raise PlotDataError(f"{spec.fit_json}: fit {spec.fit_key!r} is null")
    return float(node["slope"])


def _fit_plot(spec: PlotSpec, transform: str) -> dict:
    x, y = read_columns(spec.csv_path, [spec.x, spec.y])
    keep = (y > 0) & ((x > 0) if transform == "loglog" else True)
    if keep.sum() < 2:
        raise PlotDataError(
            f"{spec.csv_path}: fewer than 2 rows with positive "
            f"{spec.y!r}; nothing to fit"
        )
    xf, yf = x[keep], y[keep]
    slope, intercept, r2 = recompute_fit(xf, yf, transform)
    ref = _json_fit_slope(spec)
    if ref is not None and not math.isclose(
        slope, ref, rel_tol=0.0, abs_tol=1e-9
    ):
        raise PlotDataError(
            f"recomputed slope {slope!r} disagrees with summary "
            f"{spec.fit_json}:{spec.fit_key} = {ref!r} (|diff| > 1e-9)"
        )
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.plot(xf, yf, "o", ms=4, label="data")
    grid = np.linspace(xf.min(), xf.max(), 200)
    if transform == "loglog":
        grid = np.geomspace(xf.min(), xf.max(), 200)
        line = np.exp(intercept) * grid ** slope
        ax.set_xscale("log")
        ax.set_yscale("log")
    else:
        line = np.exp(intercept + slope * grid)
        ax.set_yscale("log")
    ax.plot(grid, line, "-", lw=1,
            label=f"slope {slope:.4f}, $r^2$ {r2:.4f}")
    if (~keep).any():
        ax.set_title(spec.title or f"{(~keep).sum()} nonpositive rows omitted",
                     fontsize=9)
    _finish(fig, ax, spec)
    return {"slope": slope, "intercept": intercept, "r_squared": r2,
            "rows_fitted": int(keep.sum())}


def _density_plot(spec: PlotSpec) -> dict:
    left, right, dens = read_columns(
        spec.csv_path, ["bin_left", "bin_right", "density"]
    )
    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    ax.bar(left, dens, width=right - left, align="edge",
           edgecolor="none", color="#4878cf")
    ax.set_ylim(bottom=0.0)
    _finish(fig, ax, spec, default_ylabel="invariant density")
    return {"slope": None, "bins": len(dens)}


def _finish(fig, ax, spec: PlotSpec, default_ylabel: Optional[str] = None):
    ax.set_xlabel(spec.xlabel or spec.x)
    ax.set_ylabel(spec.ylabel or default_ylabel or spec.y)
    if spec.title:
        ax.set_title(spec.title, fontsize=9)
    if ax.get_legend_handles_labels()[0]:
        ax.legend(fontsize=8)
    fig.tight_layout()
    out = Path(spec.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out)
    plt.close(fig)


def render(spec: PlotSpec) -> dict:
    """Draw the figure and return the recomputed fit (if any).

    Raises PlotDataError (no image is written) on empty or malformed
    CSVs, missing columns, or a slope that disagrees with the summary
    JSON beyond 1e-9.
    """
    if spec.kind in ("loglog_fit", "cf_decay"):
        return _fit_plot(spec, "loglog")
    if spec.kind == "semilog_fit":
        return _fit_plot(spec, "semilogy")
    return _density_plot(spec)
