"""Deterministic SVG figures, no plotting library.

Fixed canvas, fixed palette, formatted floats: the same inputs always emit
byte-identical SVG, so figures can be golden-tested and diffed.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

from .metrics import PRCurve

WIDTH = 640
HEIGHT = 480
MARGIN_LEFT = 60
MARGIN_RIGHT = 20
MARGIN_TOP = 20
MARGIN_BOTTOM = 50

PALETTE = ("#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b")


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _plot_xy(x_frac: float, y_frac: float) -> tuple[float, float]:
    x = MARGIN_LEFT + x_frac * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    y = HEIGHT - MARGIN_BOTTOM - y_frac * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    return x, y


def _axes(x_label: str, y_label: str, x_ticks: Sequence[tuple[float, str]],
          y_ticks: Sequence[tuple[float, str]]) -> list[str]:
    x0, y0 = _plot_xy(0.0, 0.0)
    x1, y1 = _plot_xy(1.0, 1.0)
    parts = [
        f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x1:.1f}" y2="{y0:.1f}" stroke="black"/>',
        f'<line x1="{x0:.1f}" y1="{y0:.1f}" x2="{x0:.1f}" y2="{y1:.1f}" stroke="black"/>',
    ]
    for frac, text in x_ticks:
        x, _ = _plot_xy(frac, 0.0)
        parts.append(f'<line x1="{x:.1f}" y1="{y0:.1f}" x2="{x:.1f}" y2="{y0 + 5:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{x:.1f}" y="{y0 + 18:.1f}" font-size="11" text-anchor="middle">{text}</text>'
        )
    for frac, text in y_ticks:
        _, y = _plot_xy(0.0, frac)
        parts.append(f'<line x1="{x0 - 5:.1f}" y1="{y:.1f}" x2="{x0:.1f}" y2="{y:.1f}" stroke="black"/>')
        parts.append(
            f'<text x="{x0 - 8:.1f}" y="{y + 4:.1f}" font-size="11" text-anchor="end">{text}</text>'
        )
    parts.append(
        f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 12:.1f}" font-size="13" '
        f'text-anchor="middle">{x_label}</text>'
    )
    parts.append(
        f'<text x="16" y="{(y0 + y1) / 2:.1f}" font-size="13" text-anchor="middle" '
        f'transform="rotate(-90 16 {(y0 + y1) / 2:.1f})">{y_label}</text>'
    )
    return parts


def _legend(entries: Sequence[tuple[str, str]]) -> list[str]:
    parts = []
    x = MARGIN_LEFT + 12
    y = MARGIN_TOP + 8
    for i, (label, color) in enumerate(entries):
        yy = y + i * 18
        parts.append(
            f'<line x1="{x}" y1="{yy}" x2="{x + 24}" y2="{yy}" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(f'<text x="{x + 30}" y="{yy + 4}" font-size="12">{_escape(label)}</text>')
    return parts


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _document(body: list[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
    )
    return head + "\n".join(body) + "\n</svg>\n"


UNIT_TICKS = tuple((v / 10.0, _fmt(v / 10.0)) for v in range(0, 11, 2))


def render_pr_svg(curves: Sequence[tuple[str, PRCurve, float]]) -> str:
    """Precision-recall figure: one polyline per (label, curve, auc) entry,
    AUC annotated in the legend."""
    body = _axes("recall", "precision", UNIT_TICKS, UNIT_TICKS)
    legend = []
    for i, (label, curve, auc) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        coords = []
        for p in curve.points:
            if math.isinf(p.threshold):
                continue
            x, y = _plot_xy(p.recall, p.precision)
            coords.append(f"{x:.1f},{y:.1f}")
        body.append(
            f'<polyline points="{" ".join(coords)}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        legend.append((f"{label} (AUC={auc:.3f})", color))
    body.extend(_legend(legend))
    return _document(body)


def render_latency_auc_svg(points: Sequence[tuple[str, float, float]]) -> str:
    """Latency-vs-quality scatter: one dot per (label, latency_ms, pr_auc)."""
    if not points:
        raise ValueError("no points to plot")
    max_latency = max(p[1] for p in points)
    scale = max(max_latency, 1e-9)
    x_ticks = tuple((v / 5.0, _fmt(scale * v / 5.0)) for v in range(0, 6))
    body = _axes("latency (ms)", "PR AUC", x_ticks, UNIT_TICKS)
    legend = []
    for i, (label, latency_ms, auc) in enumerate(points):
        color = PALETTE[i % len(PALETTE)]
        x, y = _plot_xy(latency_ms / scale, auc)
        body.append(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="5" fill="{color}"/>')
        legend.append((f"{label} ({latency_ms:.0f}ms, AUC={auc:.3f})", color))
    body.extend(_legend(legend))
    return _document(body)


def write_svg(svg: str, path: str | Path) -> None:
    Path(path).write_text(svg, encoding="utf-8")
