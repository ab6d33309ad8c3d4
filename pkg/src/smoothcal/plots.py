"""Static SVG line charts for sweep aggregates: one file per metric and
split, log-scaled x axis, one mean line per (kernel, model) series with a
+/- one standard deviation band. No plotting dependency; the output is plain
SVG assembled as text."""

from __future__ import annotations

import numpy as np

from .errors import InputError
from .sweep import AGG_METRICS, AggRow

WIDTH, HEIGHT = 720, 480
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 160, 40, 50

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#e377c2")


def _collect_series(aggs: list[AggRow], metric: str, split: str, x_from):
    series: dict[str, tuple[list, list, list]] = {}
    for a in aggs:
        if a.split != split or a.means.get(metric) is None:
            continue
        x = x_from(a)
        if x is None:
            continue
        key = f"{a.kernel}/{a.model}" if a.model != "constant" else "constant"
        xs, means, stds = series.setdefault(key, ([], [], []))
        xs.append(float(x))
        means.append(a.means[metric])
        stds.append(a.stds[metric] or 0.0)
    for key, (xs, means, stds) in series.items():
        order = np.argsort(xs)
        series[key] = ([xs[i] for i in order], [means[i] for i in order],
                       [stds[i] for i in order])
    return series


def render_chart(title: str, x_label: str, series: dict) -> str:
    """Render one log-x line chart; series maps name -> (xs, means, stds)."""
    if not series:
        raise InputError(f"no data to plot for {title}")
    all_x = sorted({x for xs, _, _ in series.values() for x in xs})
    if min(all_x) <= 0:
        raise InputError("log-scaled x axis needs positive values")
    lo_x, hi_x = np.log10(min(all_x)), np.log10(max(all_x))
    if hi_x == lo_x:
        hi_x = lo_x + 1.0
    y_low = min(m - s for _, ms, ss in series.values() for m, s in zip(ms, ss))
    y_high = max(m + s for _, ms, ss in series.values() for m, s in zip(ms, ss))
    if y_high == y_low:
        y_high = y_low + 1.0
    pad = 0.05 * (y_high - y_low)
    y_low, y_high = y_low - pad, y_high + pad

    px_w = WIDTH - MARGIN_L - MARGIN_R
    px_h = HEIGHT - MARGIN_T - MARGIN_B

    def sx(x):
        return MARGIN_L + (np.log10(x) - lo_x) / (hi_x - lo_x) * px_w

    def sy(y):
        return MARGIN_T + (y_high - y) / (y_high - y_low) * px_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH/2:.1f}" y="24" text-anchor="middle" font-size="16">{title}</text>',
    ]
    axis_y = HEIGHT - MARGIN_B
    parts.append(f'<line x1="{MARGIN_L}" y1="{axis_y}" x2="{WIDTH-MARGIN_R}" '
                 f'y2="{axis_y}" stroke="black"/>')
    parts.append(f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" '
                 f'y2="{axis_y}" stroke="black"/>')
    for x in all_x:
        px = sx(x)
        parts.append(f'<line x1="{px:.2f}" y1="{axis_y}" x2="{px:.2f}" '
                     f'y2="{axis_y+5}" stroke="black" class="x-tick"/>')
        parts.append(f'<text x="{px:.2f}" y="{axis_y+18}" text-anchor="middle" '
                     f'font-size="10">{x:g}</text>')
    for frac in np.linspace(0.0, 1.0, 5):
        y = y_low + frac * (y_high - y_low)
        py = sy(y)
        parts.append(f'<line x1="{MARGIN_L-5}" y1="{py:.2f}" x2="{MARGIN_L}" '
                     f'y2="{py:.2f}" stroke="black" class="y-tick"/>')
        parts.append(f'<text x="{MARGIN_L-8}" y="{py+3:.2f}" text-anchor="end" '
                     f'font-size="10">{y:.3g}</text>')
    parts.append(f'<text x="{WIDTH/2:.1f}" y="{HEIGHT-10}" text-anchor="middle" '
                 f'font-size="12">{x_label} (log scale)</text>')

    for i, (name, (xs, means, stds)) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        upper = [(sx(x), sy(m + s)) for x, m, s in zip(xs, means, stds)]
        lower = [(sx(x), sy(m - s)) for x, m, s in zip(xs, means, stds)]
        band = " ".join(f"{px:.2f},{py:.2f}" for px, py in upper + lower[::-1])
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.15" '
                     f'class="band"/>')
        line = " ".join(f"{sx(x):.2f},{sy(m):.2f}" for x, m in zip(xs, means))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" '
                     f'stroke-width="1.8" class="series" data-name="{name}"/>')
        ly = MARGIN_T + 14 + 16 * i
        lx = WIDTH - MARGIN_R + 10
        parts.append(f'<line x1="{lx}" y1="{ly-4}" x2="{lx+18}" y2="{ly-4}" '
                     f'stroke="{color}" stroke-width="1.8"/>')
        parts.append(f'<text x="{lx+24}" y="{ly}" font-size="11">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def charts_for_aggregates(aggs: list[AggRow], axis: str,
                          splits=("train", "test")) -> dict[str, str]:
    """One chart per (metric, split) that has data. Keys are file stems like
    `smce_test`."""
    x_label = "n" if axis == "sample_size" else "lambda"

    def x_from(a: AggRow):
        if axis == "sample_size":
            return a.n
        return a.lam

    out = {}
    for metric in AGG_METRICS:
        for split in splits:
            series = _collect_series(aggs, metric, split, x_from)
            series = {k: v for k, v in series.items() if len(v[0]) >= 2}
            if not series:
                continue
            title = f"{metric} ({split})"
            out[f"{metric}_{split}"] = render_chart(title, x_label, series)
    return out
