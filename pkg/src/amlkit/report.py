"""Delimited report writing plus figure rendering.

Every CSV written here gets a PNG chart rendered next to it (same
basename) so a bench or sweep run leaves both the data and a picture.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Optional, Sequence

__all__ = ["write_csv", "render_png", "write_report"]


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _numeric(value) -> Optional[float]:
    try:
        return float(value)
    except (TypeError, ValueError):
        return None


def render_png(csv_path, x_col: str, y_cols: Sequence[str], title: str,
               png_path=None, logx: bool = False, logy: bool = False,
               group_col: Optional[str] = None) -> Path:
    """Line chart of y_cols against x_col from a CSV file, one line per
    y column (and per group when group_col is set). Returns the PNG path."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    csv_path = Path(csv_path)
    png_path = Path(png_path) if png_path else csv_path.with_suffix(".png")
    with csv_path.open() as fh:
        records = list(csv.DictReader(fh))

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    groups = sorted({r[group_col] for r in records}) if group_col else [None]
    for group in groups:
        subset = [r for r in records if group is None or r[group_col] == group]
        for y_col in y_cols:
            pts = [
                (xv, yv)
                for r in subset
                if (xv := _numeric(r.get(x_col))) is not None
                and (yv := _numeric(r.get(y_col))) is not None
            ]
            if not pts:
                continue
            pts.sort()
            label = y_col if group is None else f"{group}:{y_col}"
            ax.plot([p[0] for p in pts], [p[1] for p in pts], marker="o", label=label)
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(x_col)
    ax.set_title(title)
    if ax.has_data():
        ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100)
    plt.close(fig)
    return png_path


def write_report(path, header: Sequence[str], rows: Sequence[Sequence],
                 x_col: str, y_cols: Sequence[str], title: str,
                 logx: bool = False, logy: bool = False,
                 group_col: Optional[str] = None) -> tuple:
    """Write the CSV then render its chart alongside. Returns both paths."""
    csv_path = write_csv(path, header, rows)
    png_path = render_png(csv_path, x_col, y_cols, title,
                          logx=logx, logy=logy, group_col=group_col)
    return csv_path, png_path
