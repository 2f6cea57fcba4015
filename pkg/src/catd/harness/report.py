"""Deterministic report emission: metrics.json, metrics.csv, SVG plots.

The SVG writer is self-contained (inline styling, no external assets)
and formats every coordinate with a fixed precision, so identical
results produce byte-identical files.
"""

from __future__ import annotations

import json
from pathlib import Path

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
WIDTH, HEIGHT = 640, 420
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 40, 50


def _fmt(v) -> str:
    return format(float(v), ".6g")


def _provenance_comment(provenance: dict | None) -> str:
    if not provenance:
        return ""
    text = json.dumps(provenance, sort_keys=True).replace("--", "- -")
    return f"<!-- provenance: {text} -->\n"


def _axis(lo: float, hi: float) -> tuple[float, float]:
    if hi <= lo:
        hi = lo + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str, provenance=None):
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8"?>\n',
            _provenance_comment(provenance),
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">\n',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>\n',
            f'<text x="{WIDTH // 2}" y="24" text-anchor="middle" '
            f'font-family="sans-serif" font-size="15">{title}</text>\n',
            f'<text x="{WIDTH // 2}" y="{HEIGHT - 10}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12">{xlabel}</text>\n',
            f'<text x="16" y="{HEIGHT // 2}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="12" '
            f'transform="rotate(-90 16 {HEIGHT // 2})">{ylabel}</text>\n',
        ]
        self.x0, self.x1 = MARGIN_L, WIDTH - MARGIN_R
        self.y0, self.y1 = HEIGHT - MARGIN_B, MARGIN_T

    def set_limits(self, xlo, xhi, ylo, yhi):
        self.xlo, self.xhi = _axis(xlo, xhi)
        self.ylo, self.yhi = _axis(ylo, yhi)

    def px(self, x):
        return self.x0 + (x - self.xlo) / (self.xhi - self.xlo) * (self.x1 - self.x0)

    def py(self, y):
        return self.y0 + (y - self.ylo) / (self.yhi - self.ylo) * (self.y1 - self.y0)

    def axes(self, n_ticks: int = 5):
        p = self.parts
        p.append(
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x1}" y2="{self.y0}" '
            'stroke="black" stroke-width="1"/>\n'
        )
        p.append(
            f'<line x1="{self.x0}" y1="{self.y0}" x2="{self.x0}" y2="{self.y1}" '
            'stroke="black" stroke-width="1"/>\n'
        )
        for i in range(n_ticks + 1):
            fx = self.xlo + (self.xhi - self.xlo) * i / n_ticks
            px = _fmt(self.px(fx))
            p.append(
                f'<line x1="{px}" y1="{self.y0}" x2="{px}" y2="{self.y0 + 4}" '
                'stroke="black" stroke-width="1"/>\n'
                f'<text x="{px}" y="{self.y0 + 18}" text-anchor="middle" '
                f'font-family="sans-serif" font-size="10">{_fmt(fx)}</text>\n'
            )
            fy = self.ylo + (self.yhi - self.ylo) * i / n_ticks
            py = _fmt(self.py(fy))
            p.append(
                f'<line x1="{self.x0 - 4}" y1="{py}" x2="{self.x0}" y2="{py}" '
                'stroke="black" stroke-width="1"/>\n'
                f'<text x="{self.x0 - 8}" y="{py}" text-anchor="end" '
                f'dominant-baseline="middle" font-family="sans-serif" '
                f'font-size="10">{_fmt(fy)}</text>\n'
            )

    def polyline(self, xs, ys, color, width=1.5, dash=None):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys))
        dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(
            f'<polyline points="{pts}" fill="none" stroke="{color}" '
            f'stroke-width="{width}"{dash_attr}/>\n'
        )

    def points(self, xs, ys, color, radius=3.0):
        for x, y in zip(xs, ys):
            self.parts.append(
                f'<circle cx="{_fmt(self.px(x))}" cy="{_fmt(self.py(y))}" '
                f'r="{radius}" fill="{color}"/>\n'
            )

    def rect(self, x, y, w, h, color):
        self.parts.append(
            f'<rect x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(w)}" '
            f'height="{_fmt(h)}" fill="{color}"/>\n'
        )

    def legend(self, entries):
        for i, (label, color) in enumerate(entries):
            y = MARGIN_T + 14 * i
            self.parts.append(
                f'<rect x="{self.x1 - 130}" y="{y}" width="10" height="10" '
                f'fill="{color}"/>\n'
                f'<text x="{self.x1 - 115}" y="{y + 9}" '
                f'font-family="sans-serif" font-size="10">{label}</text>\n'
            )

    def write(self, path: Path):
        self.parts.append("</svg>\n")
        Path(path).write_text("".join(self.parts))


def svg_line_plot(path, series, title, xlabel, ylabel, provenance=None):
    """series: list of (label, xs, ys) tuples."""
    canvas = _Canvas(title, xlabel, ylabel, provenance)
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    canvas.set_limits(min(all_x), max(all_x), min(all_y), max(all_y))
    canvas.axes()
    legend = []
    for i, (label, xs, ys) in enumerate(series):
        color = PALETTE[i % len(PALETTE)]
        canvas.polyline(xs, ys, color)
        legend.append((label, color))
    canvas.legend(legend)
    canvas.write(path)


def svg_bar_chart(path, group_labels, series, title, ylabel, provenance=None):
    """Grouped bars. series: list of (label, values) with one value per group."""
    canvas = _Canvas(title, "", ylabel, provenance)
    all_v = [v for _, values in series for v in values]
    canvas.set_limits(0, len(group_labels), min(0.0, min(all_v)), max(all_v))
    canvas.axes(n_ticks=4)
    n_series = len(series)
    slot = (canvas.x1 - canvas.x0) / len(group_labels)
    bar_w = slot * 0.8 / n_series
    legend = []
    for si, (label, values) in enumerate(series):
        color = PALETTE[si % len(PALETTE)]
        legend.append((label, color))
        for gi, v in enumerate(values):
            x = canvas.x0 + gi * slot + slot * 0.1 + si * bar_w
            y_top = canvas.py(max(v, 0.0))
            h = abs(canvas.py(v) - canvas.py(0.0))
            canvas.rect(x, y_top, bar_w, h, color)
    for gi, label in enumerate(group_labels):
        cx = canvas.x0 + (gi + 0.5) * slot
        canvas.parts.append(
            f'<text x="{_fmt(cx)}" y="{canvas.y0 + 32}" text-anchor="middle" '
            f'font-family="sans-serif" font-size="11">{label}</text>\n'
        )
    canvas.legend(legend)
    canvas.write(path)


def svg_points_and_curves(path, points, curves, title, xlabel, ylabel, provenance=None):
    """Scatter (label, xs, ys) over line curves [(label, xs, ys), ...]."""
    canvas = _Canvas(title, xlabel, ylabel, provenance)
    all_x = list(points[1]) + [x for _, xs, _ in curves for x in xs]
    all_y = list(points[2]) + [y for _, _, ys in curves for y in ys]
    canvas.set_limits(min(all_x), max(all_x), min(all_y), max(all_y))
    canvas.axes()
    legend = []
    for i, (label, xs, ys) in enumerate(curves):
        color = PALETTE[(i + 1) % len(PALETTE)]
        canvas.polyline(xs, ys, color, dash="4,3" if i > 0 else None)
        legend.append((label, color))
    canvas.points(points[1], points[2], PALETTE[0])
    legend.insert(0, (points[0], PALETTE[0]))
    canvas.legend(legend)
    canvas.write(path)


def emit_report(results: dict, path) -> list[Path]:
    """Write metrics.json, metrics.csv and plots/*.svg for a results dict.

    Recognized keys: rows (list of flat dicts), loss_curves
    (label -> list of losses), band_rows (list of flat dicts), and
    superres_overlay (list of per-cell dicts with lowres/highres/truth
    series). Empty results still produce the JSON/CSV pair.
    """
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    provenance = results.get("provenance", {})
    rows = results.get("rows", [])
    band_rows = results.get("band_rows", [])
    loss_curves = results.get("loss_curves", {})
    overlay = results.get("superres_overlay", [])
    written = []

    doc = {
        "provenance": provenance,
        "rows": rows,
        "band_rows": band_rows,
        "loss_curves": loss_curves,
    }
    json_path = path / "metrics.json"
    json_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    written.append(json_path)

    csv_lines = [f"# provenance: {json.dumps(provenance, sort_keys=True)}"]
    all_rows = rows + band_rows
    if all_rows:
        cols = sorted({k for row in all_rows for k in row})
        csv_lines.append(",".join(cols))
        for row in all_rows:
            csv_lines.append(
                ",".join(
                    "" if row.get(c) is None else str(row.get(c)) for c in cols
                )
            )
    csv_path = path / "metrics.csv"
    csv_path.write_text("\n".join(csv_lines) + "\n")
    written.append(csv_path)

    plots = path / "plots"
    if loss_curves:
        plots.mkdir(exist_ok=True)
        series = [
            (label, list(range(len(vals))), vals)
            for label, vals in sorted(loss_curves.items())
            if len(vals) > 0
        ]
        if series:
            p = plots / "losses.svg"
            svg_line_plot(p, series, "Training loss", "step", "loss", provenance)
            written.append(p)
    if band_rows:
        plots.mkdir(exist_ok=True)
        groups = [row["band"] for row in band_rows]
        metric_keys = [k for k in ("acc", "cosine_similarity", "ccc") if k in band_rows[0]]
        series = [(k, [float(row[k]) for row in band_rows]) for k in metric_keys]
        p = plots / "band_metrics.svg"
        svg_bar_chart(p, groups, series, "Per-band conditioning metrics", "score", provenance)
        written.append(p)
    for i, cell in enumerate(overlay):
        plots.mkdir(exist_ok=True)
        p = plots / f"superres_cell{i}.svg"
        curves = [("high-res generated", cell["highres_t"], cell["highres_y"])]
        if "truth_y" in cell:
            curves.append(("hidden fine truth", cell["truth_t"], cell["truth_y"]))
        svg_points_and_curves(
            p,
            ("low-res observed", cell["lowres_t"], cell["lowres_y"]),
            curves,
            f"Temporal super-resolution, cell {cell.get('label', i)}",
            "time (s)",
            "BOLD (normalized)",
            provenance,
        )
        written.append(p)
    return written
