"""Deterministic SVG line plots of CSV artifacts (fixed 800x500 canvas, no metadata)."""

import csv
import math

from .errors import SchemaMismatch

WIDTH, HEIGHT = 800, 500
MARGIN = {"left": 80, "right": 30, "top": 40, "bottom": 60}
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")

KINDS = {
    "lambda_vs_r": ("r", "lambda", "r", "lambda(y, r)"),
    "envelope_vs_t": ("t", None, "t", "u"),
    "front_position": ("t", "position", "t", "front position"),
}


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return rows


def _num(x):
    return f"{x:.6g}"


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (step * m) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    out = []
    k = 0
    while start + k * step <= hi + 1e-12 * abs(step):
        out.append(start + k * step)
        k += 1
    return out


def render_svg(series, xlabel, ylabel, title="", hlines=()):
    """series: list of (label, xs, ys). hlines: list of (label, y)."""
    xs = [x for _, sx, _ in series for x in sx]
    ys = [y for _, _, sy in series for y in sy] + [y for _, y in hlines]
    xs = [x for x in xs if math.isfinite(x)]
    ys = [y for y in ys if math.isfinite(y)]
    if not xs or not ys:
        raise SchemaMismatch("nothing to plot")
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def X(x):
        return MARGIN["left"] + (x - x0) / (x1 - x0) * pw

    def Y(y):
        return MARGIN["top"] + (y1 - y) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
           'fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{_num(X(t))}" y1="{MARGIN["top"] + ph}" x2="{_num(X(t))}" '
                   f'y2="{MARGIN["top"] + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{_num(X(t))}" y="{MARGIN["top"] + ph + 20}" font-size="12" '
                   f'text-anchor="middle">{_num(t)}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{MARGIN["left"] - 5}" y1="{_num(Y(t))}" x2="{MARGIN["left"]}" '
                   f'y2="{_num(Y(t))}" stroke="black"/>')
        out.append(f'<text x="{MARGIN["left"] - 8}" y="{_num(Y(t) + 4)}" font-size="12" '
                   f'text-anchor="end">{_num(t)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2}" y="{HEIGHT - 15}" font-size="14" '
               f'text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="18" y="{MARGIN["top"] + ph / 2}" font-size="14" text-anchor="middle" '
               f'transform="rotate(-90 18 {MARGIN["top"] + ph / 2})">{ylabel}</text>')
    if title:
        out.append(f'<text x="{WIDTH / 2}" y="24" font-size="15" text-anchor="middle">{title}</text>')
    for label, y in hlines:
        out.append(f'<line x1="{MARGIN["left"]}" y1="{_num(Y(y))}" x2="{MARGIN["left"] + pw}" '
                   f'y2="{_num(Y(y))}" stroke="gray" stroke-dasharray="6,4"/>')
        out.append(f'<text x="{MARGIN["left"] + pw - 4}" y="{_num(Y(y) - 5)}" font-size="12" '
                   f'text-anchor="end" fill="gray">{label}</text>')
    for i, (label, sx, sy) in enumerate(series):
        pts = " ".join(f"{_num(X(a))},{_num(Y(b))}" for a, b in zip(sx, sy)
                       if math.isfinite(a) and math.isfinite(b))
        color = COLORS[i % len(COLORS)]
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{MARGIN["left"] + 10}" y="{MARGIN["top"] + 18 + 16 * i}" '
                   f'font-size="12" fill="{color}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot(csv_path, kind, out_path, asymptote=None, title=""):
    """Render a CSV artifact of the given kind to an SVG file."""
    if kind not in KINDS:
        raise SchemaMismatch(f"unknown plot kind {kind!r}")
    rows = read_csv(csv_path)
    if not rows:
        raise SchemaMismatch(f"{csv_path} has no rows")
    xcol, ycol, xlabel, ylabel = KINDS[kind]
    cols = set(rows[0])
    hlines = []
    if kind == "envelope_vs_t":
        ycols = [c for c in ("sup", "envelope", "window_sup", "window_min") if c in cols]
        if xcol not in cols or not ycols:
            raise SchemaMismatch("envelope_vs_t needs columns t and sup or envelope")
        series = [(c, [float(r[xcol]) for r in rows], [float(r[c]) for r in rows]) for c in ycols]
    else:
        if xcol not in cols or ycol not in cols:
            raise SchemaMismatch(f"{kind} needs columns {xcol} and {ycol}")
        if kind == "lambda_vs_r" and "center_x" in cols:
            groups = {}
            for r in rows:
                key = (r["center_x"], r.get("center_y", ""))
                groups.setdefault(key, []).append(r)
            series = []
            for key in groups:
                g = groups[key]
                label = "y = (" + ", ".join(k for k in key if k != "") + ")"
                series.append((label, [float(r[xcol]) for r in g], [float(r[ycol]) for r in g]))
        else:
            series = [(ycol, [float(r[xcol]) for r in rows], [float(r[ycol]) for r in rows])]
        if kind == "lambda_vs_r" and asymptote is not None and math.isfinite(asymptote):
            hlines.append((f"lambda_B estimate {asymptote:.6g}", asymptote))
    svg = render_svg(series, xlabel, ylabel, title, hlines)
    with open(out_path, "w") as fh:
        fh.write(svg)
    return out_path
