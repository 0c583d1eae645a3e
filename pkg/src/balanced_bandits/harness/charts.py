"""Cumulative-regret charts as standalone SVG plus the CSV table behind them."""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from pathlib import Path

import numpy as np

WIDTH, HEIGHT = 720, 440
MARGIN = {"left": 70, "right": 150, "top": 30, "bottom": 50}
MAX_POINTS = 400
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def regret_curves(traces) -> dict:
    """Across-seed mean and standard error of cumulative regret, per policy.

    Traces of one policy are truncated to their shortest length. With a
    single seed the standard error is 0.
    """
    groups = defaultdict(list)
    for tr in traces:
        groups[tr.policy].append(tr)
    curves = {}
    for policy in sorted(groups):
        trs = sorted(groups[policy], key=lambda tr: tr.seed)
        n = min(len(tr) for tr in trs)
        cum = np.array([tr.cumulative_regret[:n] for tr in trs]).reshape(len(trs), n)
        mean = cum.mean(axis=0)
        se = cum.std(axis=0, ddof=1) / np.sqrt(len(trs)) if len(trs) > 1 else np.zeros(n)
        curves[policy] = {"t": np.arange(n), "mean": mean, "se": se, "n_seeds": len(trs)}
    return curves


def curves_csv(curves) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["policy", "t", "n_seeds", "mean_cumulative_regret", "se"])
    for policy, c in curves.items():
        for t, m, s in zip(c["t"], c["mean"], c["se"]):
            writer.writerow([policy, int(t), c["n_seeds"], repr(float(m)), repr(float(s))])
    return buf.getvalue()


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_max(v: float) -> float:
    if v <= 0:
        return 1.0
    mag = 10 ** np.floor(np.log10(v))
    for step in (1, 2, 5, 10):
        if step * mag >= v:
            return float(step * mag)
    return float(10 * mag)


def _thin(n: int) -> np.ndarray:
    if n <= MAX_POINTS:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, MAX_POINTS).round().astype(int))


def render_svg(curves, title: str = "Cumulative regret") -> str:
    """Line chart of mean cumulative regret with a shaded +/- 1 SE band.

    The output depends only on ``curves`` and ``title``, so identical
    inputs give identical bytes. An empty ``curves`` gives the bare axes.
    """
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    t_max = max((len(c["t"]) - 1 for c in curves.values()), default=0)
    y_max = max((float(np.max(c["mean"] + c["se"])) for c in curves.values() if len(c["t"])), default=0.0)
    t_top, y_top = _nice_max(float(t_max)), _nice_max(y_max)
    sx = lambda t: x0 + (x1 - x0) * t / t_top  # noqa: E731
    sy = lambda y: y0 - (y0 - y1) * y / y_top  # noqa: E731

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="18" text-anchor="middle" font-size="14">{title}</text>',
        f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
        f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>',
    ]
    for k in range(6):
        tv, yv = t_top * k / 5, y_top * k / 5
        out.append(f'<text x="{_fmt(sx(tv))}" y="{y0 + 16}" text-anchor="middle">{tv:g}</text>')
        out.append(f'<text x="{x0 - 6}" y="{_fmt(sy(yv) + 4)}" text-anchor="end">{yv:g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2}" y="{HEIGHT - 12}" text-anchor="middle">t</text>')
    out.append(f'<text x="16" y="{(y0 + y1) / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {(y0 + y1) / 2})">cumulative regret</text>')

    for i, (policy, c) in enumerate(curves.items()):
        colour = PALETTE[i % len(PALETTE)]
        idx = _thin(len(c["t"]))
        if idx.size:
            t, m, s = c["t"][idx], c["mean"][idx], c["se"][idx]
            upper = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(t, m + s))
            lower = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(t[::-1], (m - s)[::-1]))
            line = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(t, m))
            out.append(f'<polygon points="{upper} {lower}" fill="{colour}" fill-opacity="0.2" stroke="none"/>')
            out.append(f'<polyline points="{line}" fill="none" stroke="{colour}" stroke-width="1.5"/>')
        ly = y1 + 16 * i + 10
        out.append(f'<line x1="{x1 + 10}" y1="{ly}" x2="{x1 + 30}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{x1 + 36}" y="{ly + 4}">{policy} (n={c["n_seeds"]})</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_charts(traces, out_dir, stem: str = "regret", title: str = "Cumulative regret"):
    """Write ``<stem>.svg`` and ``<stem>.csv`` into ``out_dir`` and return both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = regret_curves(traces)
    svg_path = out_dir / f"{stem}.svg"
    csv_path = out_dir / f"{stem}.csv"
    svg_path.write_text(render_svg(curves, title), encoding="utf-8")
    csv_path.write_text(curves_csv(curves), encoding="utf-8")
    return svg_path, csv_path
