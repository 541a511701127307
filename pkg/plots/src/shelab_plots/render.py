"""Read the laboratory's CSV tables by column name and render one image.

Every job is (kind, input files, optional JSON report, output path). The
reader validates the header against the columns the kind needs before
touching any value, so a truncated table fails fast with the offending
column named. Rendering never writes anywhere except the output path and
uses a pinned style with no clock or environment input, so identical
inputs give identical image bytes.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.figure import Figure

__all__ = [
    "PlotError",
    "MissingColumnError",
    "PlotJob",
    "REQUIRED_COLUMNS",
    "load_table",
    "report_caption",
    "render",
]


class PlotError(Exception):
    """Any failure of a plot job: unreadable input, bad schema, bad values."""


class MissingColumnError(PlotError):
    """The input table lacks a column the plot kind needs."""


# columns each kind reads; extra columns are allowed and ignored
REQUIRED_COLUMNS = {
    "curve": ("epsilon", "D_yy", "D_zz"),
    "decay": ("alpha", "t", "l2", "anisotropy"),
    "convergence": ("alpha", "t", "distance", "stderr"),
    "heatmap": ("t", "y", "z", "epsilon", "F", "J_y", "J_z"),
}

# pinned style so reruns are pixel-stable
_STYLE = {
    "figure.dpi": 110,
    "savefig.dpi": 110,
    "font.size": 9.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "legend.fontsize": 8.0,
}


@dataclass(frozen=True)
class PlotJob:
    """One rendering request; `sources` overlay when the kind supports it."""

    kind: str
    sources: tuple
    out: Path
    report: Path | None = None


def load_table(path, kind: str) -> dict:
    """Read a CSV into {column: float array}, validating the kind's schema.

    Raises:
        MissingColumnError: a needed column is absent (named in the message).
        PlotError: unreadable file, empty table or non-numeric cells.
    """
    path = Path(path)
    if not path.is_file():
        raise PlotError(f"input file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames
        if not header:
            raise PlotError(f"no header row in {path}")
        for column in REQUIRED_COLUMNS[kind]:
            if column not in header:
                raise MissingColumnError(
                    f"missing column '{column}' in {path} ('{kind}' needs "
                    f"{', '.join(REQUIRED_COLUMNS[kind])})")
        rows = list(reader)
    if not rows:
        raise PlotError(f"no data rows in {path}")

    table = {}
    for column in header:
        try:
            table[column] = np.array([float(row[column]) for row in rows])
        except (TypeError, ValueError) as exc:
            raise PlotError(
                f"non-numeric value in column '{column}' of {path}: {exc}"
            ) from exc
    return table


def _load_report(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise PlotError(f"unreadable report {path}: {exc}") from exc


def report_caption(report: dict) -> str:
    """One footer line of run metadata: command, seed, version, physics."""
    bits = []
    for key in ("command", "seed", "version"):
        if key in report:
            bits.append(f"{key} {report[key]}")
    physics = report.get("config", {}).get("physics", {})
    for key in ("magnetic_field", "alphas", "eps", "kernel"):
        if key in physics:
            value = physics[key]
            if isinstance(value, list):
                value = ", ".join(f"{v:g}" for v in value)
            bits.append(f"{key} = {value}")
    return " | ".join(bits)


def _source_label(path: Path, report: dict | None) -> str:
    """Label a tensor table by its field value when the report knows it."""
    if report:
        for entry in report.get("tables", []):
            if entry.get("csv") == path.name and "magnetic_field" in entry:
                return f"B = {entry['magnetic_field']:g}"
    return path.stem


def _first_cell(table: dict) -> np.ndarray:
    """Mask selecting the first transverse cell of a tensor table."""
    mask = np.ones(table["epsilon"].size, dtype=bool)
    for column in ("xi_y", "xi_z"):
        if column in table:
            mask &= table[column] == table[column][mask.argmax()]
    return mask


def _draw_curve(fig: Figure, job: PlotJob, tables: list, report: dict | None):
    ax = fig.subplots()
    for path, table in tables:
        label = _source_label(path, report)
        keep = _first_cell(table)
        ax.plot(table["epsilon"][keep], table["D_yy"][keep],
                label=f"D_yy ({label})")
        ax.plot(table["epsilon"][keep], table["D_zz"][keep], "--",
                label=f"D_zz ({label})")
    ax.set_xlabel("epsilon")
    ax.set_ylabel("D_yy, D_zz")
    ax.set_title("diffusivity over energy shells")
    ax.legend()


def _draw_decay(fig: Figure, job: PlotJob, tables: list, report: dict | None):
    ax_a, ax_l = fig.subplots(1, 2)
    for _, table in tables:
        for alpha in np.unique(table["alpha"])[::-1]:
            keep = table["alpha"] == alpha
            t = table["t"][keep]
            ax_a.semilogy(t, table["anisotropy"][keep],
                          label=f"alpha = {alpha:g}")
            ax_l.plot(t, table["l2"][keep], label=f"alpha = {alpha:g}")
    ax_a.set_xlabel("t")
    ax_a.set_ylabel("anisotropy")
    ax_a.set_title("angular relaxation")
    ax_a.legend()
    ax_l.set_xlabel("t")
    ax_l.set_ylabel("l2")
    ax_l.set_title("weighted norm decay")


def _draw_convergence(fig: Figure, job: PlotJob, tables: list,
                      report: dict | None):
    ax = fig.subplots()
    for _, table in tables:
        t_last = np.max(table["t"])
        keep = table["t"] == t_last
        alpha = table["alpha"][keep]
        order = np.argsort(alpha)
        alpha = alpha[order]
        dist = table["distance"][keep][order]
        err = table["stderr"][keep][order]
        ax.errorbar(alpha, dist, yerr=err, fmt="o-", capsize=3,
                    label=f"t = {t_last:g}")
        if dist[-1] > 0.0:
            guide = dist[-1] * alpha / alpha[-1]
            ax.plot(alpha, guide, ":", color="gray", label="slope 1 guide")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("alpha")
    ax.set_ylabel("distance")
    title = "distance to the limit model"
    if report and "verdict" in report:
        title += f" (verdict: {report['verdict']})"
    ax.set_title(title)
    ax.legend()


def _pivot(table: dict, value: np.ndarray, keep: np.ndarray):
    y = np.unique(table["y"][keep])
    eps = np.unique(table["epsilon"][keep])
    grid = np.full((y.size, eps.size), np.nan)
    iy = np.searchsorted(y, table["y"][keep])
    ie = np.searchsorted(eps, table["epsilon"][keep])
    grid[iy, ie] = value[keep]
    return y, eps, grid


def _draw_heatmap(fig: Figure, job: PlotJob, tables: list, report: dict | None):
    _, table = tables[0]
    keep = (table["t"] == np.max(table["t"])) \
        & (table["z"] == np.min(table["z"]))
    panels = (("F", table["F"]),
              ("|J| from J_y, J_z", np.hypot(table["J_y"], table["J_z"])))
    axes = fig.subplots(1, 2)
    for ax, (name, values) in zip(axes, panels):
        y, eps, grid = _pivot(table, values, keep)
        image = ax.imshow(grid, origin="lower", aspect="auto",
                          extent=(eps[0], eps[-1], y[0], y[-1]))
        fig.colorbar(image, ax=ax, shrink=0.85)
        ax.set_xlabel("epsilon")
        ax.set_ylabel("y")
        ax.set_title(name)
    fig.suptitle(f"snapshot at t = {np.max(table['t']):g}")


_DRAWERS = {
    "curve": (_draw_curve, (7.0, 4.5)),
    "decay": (_draw_decay, (9.0, 4.0)),
    "convergence": (_draw_convergence, (6.0, 4.5)),
    "heatmap": (_draw_heatmap, (9.0, 4.0)),
}


def render(job: PlotJob) -> Path:
    """Run one job: load, draw, save. Returns the written path.

    Raises:
        PlotError: unknown kind, schema violations or unreadable inputs.
    """
    if job.kind not in _DRAWERS:
        raise PlotError(
            f"unknown plot kind '{job.kind}' (have {', '.join(sorted(_DRAWERS))})")
    if not job.sources:
        raise PlotError("no input file given")

    tables = [(Path(src), load_table(src, job.kind)) for src in job.sources]
    report = _load_report(job.report) if job.report else None

    draw, size = _DRAWERS[job.kind]
    with matplotlib.rc_context(_STYLE):
        fig = Figure(figsize=size)
        draw(fig, job, tables, report)
        if report:
            fig.text(0.005, 0.005, report_caption(report), fontsize=7.0,
                     color="0.35")
        fig.tight_layout(rect=(0.0, 0.02, 1.0, 1.0))
        out = Path(job.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(out, metadata={"Software": None})
    return out
