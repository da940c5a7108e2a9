"""Standalone SVG step plots and CSV dumps of survival curves."""
from __future__ import annotations

import csv
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f")


def write_curves_csv(path, curves):
    """``curves``: list of (label, SurvivalCurve). Rows: label,time,probability."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["curve", "time", "probability"])
        for label, c in curves:
            for t, p in zip(c.times, c.probabilities):
                w.writerow([label, repr(float(t)), repr(float(p))])


def _step_path(times, probs, sx, sy):
    pts = [f"M{sx(times[0]):.2f},{sy(probs[0]):.2f}"]
    for i in range(1, len(times)):
        pts.append(f"H{sx(times[i]):.2f}")
        pts.append(f"V{sy(probs[i]):.2f}")
    return " ".join(pts)


def write_step_svg(path, curves, title="", width=640, height=400, xlabel="time (days)",
                   ylabel="survival probability"):
    """One ``<path>`` element per curve; axes are drawn with ``<line>``."""
    left, right, top, bottom = 60, 150, 30, 50
    t_max = max((float(np.max(c.times)) for _, c in curves), default=1.0) or 1.0

    def sx(t):
        return left + (width - left - right) * float(t) / t_max

    def sy(p):
        return top + (height - top - bottom) * (1.0 - float(p))

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{left}" y1="{sy(0)}" x2="{sx(t_max)}" y2="{sy(0)}" stroke="black"/>',
             f'<line x1="{left}" y1="{sy(0)}" x2="{left}" y2="{sy(1)}" stroke="black"/>',
             f'<text x="{width / 2 - 40}" y="{height - 12}" font-size="12">{escape(xlabel)}</text>',
             f'<text x="8" y="{top - 10}" font-size="12">{escape(ylabel)}</text>',
             f'<text x="{left}" y="{sy(1) - 4}" font-size="10">1.0</text>']
    if title:
        parts.append(f'<text x="{left + 120}" y="18" font-size="14">{escape(title)}</text>')
    for i, (label, c) in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        parts.append(f'<path d="{_step_path(c.times, c.probabilities, sx, sy)}" fill="none" '
                     f'stroke="{color}" stroke-width="1.5"><title>{escape(str(label))}</title></path>')
        parts.append(f'<text x="{width - right + 8}" y="{top + 14 * (i + 1)}" font-size="11" '
                     f'fill="{color}">{escape(str(label))}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts))
