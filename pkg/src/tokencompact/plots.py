"""Static SVG line charts for the per-layer density profile."""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from pathlib import Path
from xml.sax.saxutils import escape

from .errors import ConfigError, DataError

SVG_NS = "http://www.w3.org/2000/svg"
WIDTH, HEIGHT, PAD = 480, 300, 48

SERIES = {
    "tokens.svg": ("tokens", "visual tokens per layer"),
    "stable_rank.svg": ("stable_rank", "stable rank per layer"),
    "coding_rate.svg": ("coding_rate", "coding rate per layer"),
}


def line_chart(xs, ys, title: str, y_label: str) -> str:
    pts = [(x, y) for x, y in zip(xs, ys) if y is not None]
    if not pts:
        pts = [(0, 0.0)]
    x_lo, x_hi = min(p[0] for p in pts), max(p[0] for p in pts)
    y_lo, y_hi = min(p[1] for p in pts), max(p[1] for p in pts)
    x_span = (x_hi - x_lo) or 1
    if y_hi == y_lo:
        y_lo, y_hi = y_lo - 1, y_hi + 1
    y_span = y_hi - y_lo

    def sx(x):
        return PAD + (x - x_lo) / x_span * (WIDTH - 2 * PAD)

    def sy(y):
        return HEIGHT - PAD - (y - y_lo) / y_span * (HEIGHT - 2 * PAD)

    points = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
    return (
        f'<svg xmlns="{SVG_NS}" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n'
        f'  <title>{escape(title)}</title>\n'
        f'  <rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n'
        f'  <line x1="{PAD}" y1="{HEIGHT - PAD}" x2="{WIDTH - PAD}" y2="{HEIGHT - PAD}" stroke="black"/>\n'
        f'  <line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{HEIGHT - PAD}" stroke="black"/>\n'
        f'  <text x="{WIDTH / 2}" y="{PAD / 2}" text-anchor="middle" font-size="14">{escape(title)}</text>\n'
        f'  <text x="{WIDTH / 2}" y="{HEIGHT - 12}" text-anchor="middle" font-size="12">layer</text>\n'
        f'  <text x="12" y="{HEIGHT / 2}" font-size="12" transform="rotate(-90 12 {HEIGHT / 2})"'
        f' text-anchor="middle">{escape(y_label)}</text>\n'
        f'  <text x="{PAD - 4}" y="{sy(y_hi):.2f}" text-anchor="end" font-size="10">{y_hi:.4g}</text>\n'
        f'  <text x="{PAD - 4}" y="{sy(y_lo):.2f}" text-anchor="end" font-size="10">{y_lo:.4g}</text>\n'
        f'  <polyline fill="none" stroke="steelblue" stroke-width="2" points="{points}"/>\n'
        "</svg>\n"
    )


def render_plots(report: dict) -> dict:
    profile = report.get("density_profile")
    if not profile:
        raise ConfigError("report has no density profile")
    layers = [row["layer"] for row in profile]
    out = {}
    for name, (key, title) in SERIES.items():
        ys = [row[key] for row in profile]
        out[name] = line_chart(layers, ys, title, key.replace("_", " "))
    return out


def emit_plots(report, out_dir) -> list:
    """Write the three charts for a report dict or a report.json path."""
    from .pipeline import write_files_atomically

    if not isinstance(report, dict):
        try:
            report = json.loads(Path(report).read_text())
        except json.JSONDecodeError as exc:
            raise DataError(f"report is not valid JSON: {exc}") from None
    return write_files_atomically(Path(out_dir), render_plots(report))


def validate_svg(text: str, expected_polylines: int = 1) -> list:
    """Minimal well-formedness check; returns the polyline point lists."""
    root = ET.fromstring(text)
    if root.tag != f"{{{SVG_NS}}}svg":
        raise DataError(f"root element is {root.tag!r}, expected svg")
    lines = root.findall(f"{{{SVG_NS}}}polyline")
    if len(lines) != expected_polylines:
        raise DataError(f"expected {expected_polylines} polyline(s), found {len(lines)}")
    parsed = []
    for line in lines:
        pts = [tuple(float(v) for v in p.split(",")) for p in line.get("points", "").split()]
        if not pts:
            raise DataError("empty polyline")
        parsed.append(pts)
    return parsed
