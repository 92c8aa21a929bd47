"""Minimal deterministic SVG line charts.

Charts are drawn from the CSV files the commands write, never from in-memory
results, so a plot always matches its data file.  Coordinates are printed
with fixed precision, which keeps the markup byte-stable.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

__all__ = ["Series", "line_chart", "svg_from_csv"]

WIDTH = 640
HEIGHT = 400
MARGIN = (60, 20, 40, 50)  # left, right, top, bottom
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#7f7f7f")


class Series:
    """One polyline; NaN values break the line."""

    def __init__(self, label: str, x: Sequence[float], y: Sequence[float], dashed: bool = False):
        if len(x) != len(y):
            raise ValueError("x and y must have the same length")
        self.label = label
        self.x = [float(v) for v in x]
        self.y = [float(v) for v in y]
        self.dashed = dashed


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = math.ceil(lo / step - 1e-9) * step
    out = []
    v = start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def _fmt_tick(v: float) -> str:
    return f"{v:.4g}" if v != 0 else "0"


def line_chart(
    series: Sequence[Series],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
) -> str:
    """Render ``series`` on shared axes and return the SVG document."""
    pts = [(x, y) for s in series for x, y in zip(s.x, s.y) if math.isfinite(x) and math.isfinite(y)]
    if not pts:
        raise ValueError("nothing to plot")
    xlo, xhi = min(p[0] for p in pts), max(p[0] for p in pts)
    ylo, yhi = min(p[1] for p in pts), max(p[1] for p in pts)
    if xhi == xlo:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    if yhi == ylo:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    pad = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - pad, yhi + pad

    left, right, top, bottom = MARGIN
    pw, ph = WIDTH - left - right, HEIGHT - top - bottom

    def sx(x: float) -> float:
        return left + (x - xlo) / (xhi - xlo) * pw

    def sy(y: float) -> float:
        return top + (yhi - y) / (yhi - ylo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
    ]
    for t in _ticks(xlo, xhi):
        x = sx(t)
        out.append(f'<line x1="{x:.2f}" y1="{top + ph}" x2="{x:.2f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{x:.2f}" y="{top + ph + 16}" text-anchor="middle">{_fmt_tick(t)}</text>')
    for t in _ticks(ylo, yhi):
        y = sy(t)
        out.append(f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="#444"/>')
        out.append(f'<text x="{left - 6}" y="{y + 4:.2f}" text-anchor="end">{_fmt_tick(t)}</text>')
    if ylo < 0 < yhi:
        y0 = sy(0.0)
        out.append(
            f'<line x1="{left}" y1="{y0:.2f}" x2="{left + pw}" y2="{y0:.2f}" stroke="#bbb" stroke-width="0.5"/>'
        )

    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        dash = ' stroke-dasharray="5,4"' if s.dashed else ""
        run: list[str] = []
        runs = []
        for x, y in zip(s.x, s.y):
            if math.isfinite(x) and math.isfinite(y):
                run.append(f"{sx(x):.2f},{sy(y):.2f}")
            elif run:
                runs.append(run)
                run = []
        if run:
            runs.append(run)
        for r in runs:
            out.append(
                f'<polyline fill="none" stroke="{color}" stroke-width="1.5"{dash} points="{" ".join(r)}"/>'
            )
        ly = top + 14 + 14 * k
        out.append(
            f'<line x1="{left + 10}" y1="{ly - 4}" x2="{left + 30}" y2="{ly - 4}" stroke="{color}" '
            f'stroke-width="1.5"{dash}/>'
        )
        out.append(f'<text x="{left + 35}" y="{ly}">{escape(s.label)}</text>')

    if title:
        out.append(f'<text x="{WIDTH / 2:.1f}" y="{top - 12}" text-anchor="middle" font-size="13">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{left + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(
            f'<text x="14" y="{top + ph / 2:.1f}" text-anchor="middle" '
            f'transform="rotate(-90 14 {top + ph / 2:.1f})">{escape(ylabel)}</text>'
        )
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _num(v: str) -> float:
    return float(v) if v != "" else math.nan


def _grouped(rows: list[dict[str, str]], key: str) -> dict[str, list[dict[str, str]]]:
    groups: dict[str, list[dict[str, str]]] = defaultdict(list)
    for r in rows:
        groups[r[key]].append(r)
    return groups


def svg_from_csv(path: str | Path, title: str | None = None) -> str:
    """Chart any CSV written by the command-line tool, chosen by its header.

    Recognised files: Qini curves (``share,value,baseline``), Monte Carlo
    statistics (``learner,...,mean,sd``), noise profiles
    (``learner,bucket,...,noise_mean``) and bucket reports.
    """
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    title = path.stem if title is None else title

    if cols[:3] == ["share", "value", "baseline"]:
        x = [_num(r["share"]) for r in rows]
        return line_chart(
            [
                Series("Qini curve", x, [_num(r["value"]) for r in rows]),
                Series("random targeting", x, [_num(r["baseline"]) for r in rows], dashed=True),
            ],
            title, "share treated", "cumulative effect",
        )
    if "learner" in cols and "sd" in cols:
        feat = [c for c in cols if c.startswith("f")][0]
        series = []
        for name, g in _grouped(rows, "learner").items():
            series.append(Series(f"{name} sd", [_num(r[feat]) for r in g], [_num(r["sd"]) for r in g]))
        for name, g in _grouped(rows, "learner").items():
            series.append(
                Series(f"{name} mean", [_num(r[feat]) for r in g], [_num(r["mean"]) for r in g], dashed=True)
            )
        return line_chart(series, title, feat, "prediction across replications")
    if "learner" in cols and "noise_mean" in cols:
        series = [
            Series(name, [_num(r["bucket"]) for r in g], [_num(r["noise_mean"]) for r in g])
            for name, g in _grouped(rows, "learner").items()
        ]
        return line_chart(series, title, "prediction bucket", "mean mu(1 - mu)")
    if "bucket" in cols and "ate_hat" in cols:
        b = [_num(r["bucket"]) for r in rows]
        series = [Series("ate_hat", b, [_num(r["ate_hat"]) for r in rows])]
        if any(r["noise_hat"] for r in rows):
            series.append(Series("noise_hat", b, [_num(r["noise_hat"]) for r in rows]))
        series += [
            Series("pred_mean", b, [_num(r["pred_mean"]) for r in rows]),
            Series("pred_q05", b, [_num(r["pred_q05"]) for r in rows], dashed=True),
            Series("pred_q95", b, [_num(r["pred_q95"]) for r in rows], dashed=True),
        ]
        return line_chart(series, title, "bucket", "value")
    raise ValueError(f"{path}: unrecognised CSV layout {cols}")
