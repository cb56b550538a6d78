"""SVG plots and text tables rendered from an analysis report.

Plain-text SVG, no plotting dependencies: scatter charts with fitted lines
for the depth/environment analyses, per-participant calibration lines, the
stability panels, and the log-ratio comparison, plus the regression tables
as fixed-width text.
"""

from __future__ import annotations

import math
import os
from html import escape

__all__ = ["render_analysis", "format_chain_table"]

ENV_COLORS = {"Real": "#1f6fb4", "AR": "#e07b28", "VR": "#3d9948"}
PALETTE = [
    "#1f6fb4",
    "#e07b28",
    "#3d9948",
    "#c23b3b",
    "#8565b8",
    "#8a5a44",
    "#d66fb0",
    "#6f6f6f",
    "#b0a031",
    "#3aa8b8",
    "#5d78e0",
    "#a0522d",
    "#2f4f4f",
]

_W, _H = 640, 440
_MARGIN = dict(left=70, right=150, top=40, bottom=55)


def _nice_ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    span = hi - lo
    raw = span / max(1, n)
    mag = 10 ** math.floor(math.log10(raw))
    for mult in (1, 2, 5, 10):
        step = mult * mag
        if span / step <= n + 1:
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12:
        ticks.append(round(t, 10))
        t += step
    return ticks


class _Svg:
    def __init__(self, width: int = _W, height: int = _H):
        self.width = width
        self.height = height
        self.parts: list[str] = []

    def add(self, fragment: str):
        self.parts.append(fragment)

    def text(self, x, y, s, size=12, anchor="start", color="#222", rotate=None):
        transform = f' transform="rotate(-90 {x:.1f} {y:.1f})"' if rotate else ""
        self.add(
            f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" text-anchor="{anchor}"'
            f' fill="{color}" font-family="sans-serif"{transform}>{escape(str(s))}</text>'
        )

    def line(self, x1, y1, x2, y2, color="#999", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(
            f'<line x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}"'
            f' stroke="{color}" stroke-width="{width}"{d}/>'
        )

    def circle(self, x, y, r, color, opacity=0.75):
        self.add(f'<circle cx="{x:.1f}" cy="{y:.1f}" r="{r}" fill="{color}" fill-opacity="{opacity}"/>')

    def to_string(self) -> str:
        body = "\n".join(self.parts)
        return (
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}"'
            f' viewBox="0 0 {self.width} {self.height}">\n'
            f'<rect width="{self.width}" height="{self.height}" fill="white"/>\n'
            f"{body}\n</svg>\n"
        )


def _scatter(
    series: dict[str, list[tuple[float, float]]],
    lines: dict[str, list[tuple[float, float]]],
    title: str,
    x_label: str,
    y_label: str,
    colors: dict[str, str] | None = None,
) -> str:
    svg = _Svg()
    m = _MARGIN
    plot_w = svg.width - m["left"] - m["right"]
    plot_h = svg.height - m["top"] - m["bottom"]
    xs = [p[0] for pts in series.values() for p in pts] + [p[0] for pts in lines.values() for p in pts]
    ys = [p[1] for pts in series.values() for p in pts] + [p[1] for pts in lines.values() for p in pts]
    if not xs:
        xs, ys = [0.0, 1.0], [0.0, 1.0]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_pad = 0.06 * (x_hi - x_lo or 1.0)
    y_pad = 0.08 * (y_hi - y_lo or 1.0)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def sx(x):
        return m["left"] + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return m["top"] + plot_h - (y - y_lo) / (y_hi - y_lo) * plot_h

    svg.text(svg.width / 2, 22, title, size=14, anchor="middle")
    svg.line(m["left"], m["top"] + plot_h, m["left"] + plot_w, m["top"] + plot_h, "#333")
    svg.line(m["left"], m["top"], m["left"], m["top"] + plot_h, "#333")
    for t in _nice_ticks(x_lo, x_hi):
        svg.line(sx(t), m["top"] + plot_h, sx(t), m["top"] + plot_h + 5, "#333")
        svg.text(sx(t), m["top"] + plot_h + 18, f"{t:g}", size=10, anchor="middle")
    for t in _nice_ticks(y_lo, y_hi):
        svg.line(m["left"] - 5, sy(t), m["left"], sy(t), "#333")
        svg.text(m["left"] - 8, sy(t) + 3, f"{t:g}", size=10, anchor="end")
    svg.text(m["left"] + plot_w / 2, svg.height - 14, x_label, size=12, anchor="middle")
    svg.text(18, m["top"] + plot_h / 2, y_label, size=12, anchor="middle", rotate=True)

    palette = dict(colors or {})
    for i, name in enumerate(sorted(set(series) | set(lines))):
        palette.setdefault(name, ENV_COLORS.get(name, PALETTE[i % len(PALETTE)]))
    for name in sorted(lines):
        pts = sorted(lines[name])
        for (x0, y0), (x1, y1) in zip(pts, pts[1:]):
            svg.line(sx(x0), sy(y0), sx(x1), sy(y1), palette[name], 1.6)
    for name in sorted(series):
        for x, y in series[name]:
            svg.circle(sx(x), sy(y), 3.0, palette[name])
    legend_y = m["top"] + 8
    for name in sorted(set(series) | set(lines)):
        svg.circle(m["left"] + plot_w + 16, legend_y - 3, 4, palette[name], opacity=1.0)
        svg.text(m["left"] + plot_w + 26, legend_y, name, size=11)
        legend_y += 16
    return svg.to_string()


def format_chain_table(section: dict, heading: str) -> str:
    lines = [heading, "-" * len(heading)]
    lines.append(f"{'model':<5} {'formula':<58} {'R2':>8} {'Res.Df':>7} {'Df':>5} {'F':>7} {'p':>8}")
    for row in section.get("rows", []):
        r2 = f"{100.0 * row['r_squared']:.2f}%"
        df = "" if row.get("delta_df") is None else str(row["delta_df"])
        f_val = "" if row.get("f") is None else f"{row['f']:.1f}"
        p = row.get("p_label") or ""
        lines.append(
            f"{row['model']:<5} {row['formula']:<58} {r2:>8} {row['res_df']:>7} {df:>5} {f_val:>7} {p:>8}"
        )
    attribution = section.get("attribution") or {}
    if attribution:
        shares = "; ".join(f"{k} = {v:.1f}%" for k, v in attribution.items())
        lines.append(f"R2 explained by: {shares}")
    lines.append("")
    return "\n".join(lines)


def _line_points(intercept: float, slope: float, x_lo: float, x_hi: float) -> list[tuple[float, float]]:
    return [(x_lo, intercept + slope * x_lo), (x_hi, intercept + slope * x_hi)]


def _depth_env_svg(analysis: dict, normalized: bool) -> str | None:
    cells = analysis.get("data", {}).get("condition_means")
    key = "normalized" if normalized else "depth_environment"
    section = analysis.get(key)
    if not cells or not section:
        return None
    value_key = "normalized_gva_deg" if normalized else "gva_deg"
    series: dict[str, list[tuple[float, float]]] = {}
    for c in cells:
        if c.get(value_key) is None:
            continue
        series.setdefault(c["environment"], []).append((c["end_depth_d"], c[value_key]))
    xs = [x for pts in series.values() for (x, _) in pts]
    lines: dict[str, list[tuple[float, float]]] = {}
    coefs = section.get("fitted_coefficients", {})
    if coefs and xs:
        base = coefs.get("intercept", 0.0)
        slope = coefs.get("end_depth_d", 0.0)
        offsets = analysis.get("environment_offsets", {}).get("offsets_deg", {}) if normalized else {}
        for env in series:
            shift = offsets.get(env, 0.0) if normalized else 0.0
            lines[env] = _line_points(base + shift, slope, min(xs), max(xs))
    label = "normalized vergence angle (deg)" if normalized else "vergence angle (deg)"
    title = "Vergence angle vs end depth" + (" (normalized)" if normalized else "")
    return _scatter(series, lines, title, "end depth (diopters)", label)


def _participants_svg(analysis: dict) -> str | None:
    cells = analysis.get("data", {}).get("condition_means")
    models = analysis.get("participant_models")
    if not cells or not models:
        return None
    series: dict[str, list[tuple[float, float]]] = {}
    for c in cells:
        series.setdefault(c["participant_id"], []).append((c["end_depth_d"], c["gva_deg"]))
    xs = [x for pts in series.values() for (x, _) in pts]
    lines = {
        pid: _line_points(m["intercept_deg"], m["slope_deg_per_diopter"], min(xs), max(xs))
        for pid, m in models.items()
        if pid in series
    }
    return _scatter(
        series, lines, "Per-participant calibration lines", "end depth (diopters)", "vergence angle (deg)"
    )


def _stability_svg(analysis: dict) -> str | None:
    cells = analysis.get("data", {}).get("stability_means")
    if not cells:
        return None
    series: dict[str, list[tuple[float, float]]] = {}
    for c in cells:
        if c.get("normalized_gva_deg") is None:
            continue
        name = f"{c['environment']} @ {c['end_depth_m']:g}m"
        series.setdefault(name, []).append((c["switch_depth_d"], c["normalized_gva_deg"]))
    colors = {}
    for name in series:
        env = name.split(" @ ")[0]
        colors[name] = ENV_COLORS.get(env, "#555")
    return _scatter(
        series,
        {},
        "Vergence stability: normalized angle vs switching depth",
        "focal switching depth (diopters)",
        "normalized vergence angle (deg)",
        colors=colors,
    )


def _veridicality_svg(analysis: dict) -> str | None:
    section = analysis.get("veridicality")
    if not section or not section.get("table"):
        return None
    series: dict[str, list[tuple[float, float]]] = {}
    for row in section["table"]:
        name = f"{row['environment']} / {row['measure']}"
        series.setdefault(name, []).append((1.0 / row["end_depth_m"], row["log_ratio"]))
    lines = {"veridical": [(0.2, 0.0), (4.2, 0.0)]}
    return _scatter(
        series,
        lines,
        "Log ratio (XR / reference) by measure",
        "end depth (diopters)",
        "log ratio",
        colors={"veridical": "#888"},
    )


def render_analysis(analysis: dict, outdir: str) -> list[str]:
    """Write every available plot and the regression tables; returns the paths."""
    os.makedirs(outdir, exist_ok=True)
    written: list[str] = []

    def emit(name: str, content: str | None):
        if content is None:
            return
        path = os.path.join(outdir, name)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(content)
        written.append(path)

    emit("depth_environment.svg", _depth_env_svg(analysis, normalized=False))
    emit("depth_environment_normalized.svg", _depth_env_svg(analysis, normalized=True))
    emit("participants.svg", _participants_svg(analysis))
    emit("stability.svg", _stability_svg(analysis))
    emit("veridicality.svg", _veridicality_svg(analysis))

    chunks = []
    headings = [
        ("depth_environment", "Vergence angle ~ end depth x environment"),
        ("normalized", "Normalized vergence angle ~ end depth x environment"),
        ("stability", "Stability: normalized angle ~ switching depth x end depth x environment"),
        ("stability_raw", "Stability on raw vergence angle"),
        ("veridicality", "Log ratio ~ end depth x environment x measure"),
    ]
    for key, heading in headings:
        if key in analysis:
            chunks.append(format_chain_table(analysis[key], heading))
    verid = analysis.get("veridicality") or {}
    if verid.get("correlations"):
        chunks.append("Correlation of subjective depth (D) with normalized vergence angle")
        for env, c in sorted(verid["correlations"].items()):
            chunks.append(f"  {env:<6} r = {c['r']:.3f}   r^2 = {c['r_squared_percent']:.1f}%   n = {c['n']}")
        chunks.append("")
    if verid.get("ratio_factors"):
        chunks.append("Mean ratio factors e^(mean log ratio)")
        for measure, envs in sorted(verid["ratio_factors"].items()):
            for env, v in sorted(envs.items()):
                chunks.append(f"  {measure:<11} {env:<6} {v:.4f}")
        chunks.append("")
    emit("tables.txt", "\n".join(chunks) if chunks else None)
    return written
