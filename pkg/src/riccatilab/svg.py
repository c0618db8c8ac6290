"""Minimal deterministic SVG 1.1 output: scatter plots and polylines."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _fmt(v):
    return f"{v:.3f}"


class Figure:
    def __init__(self, width=480, height=480, xlim=(-1, 1), ylim=(-1, 1), title=""):
        self.w, self.h = width, height
        self.xlim, self.ylim = xlim, ylim
        self.items = []
        self.legend = []
        self.title = title

    def _px(self, x, y):
        x0, x1 = self.xlim
        y0, y1 = self.ylim
        m = 30
        px = m + (np.asarray(x) - x0) / (x1 - x0) * (self.w - 2 * m)
        py = self.h - m - (np.asarray(y) - y0) / (y1 - y0) * (self.h - 2 * m)
        return px, py

    def scatter(self, x, y, color=None, r=1.2, label=None, opacity=0.5):
        color = color or PALETTE[len(self.legend) % len(PALETTE)]
        px, py = self._px(x, y)
        dots = "".join(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="{r}"/>' for a, b in zip(px, py))
        self.items.append(f'<g fill="{color}" fill-opacity="{opacity}">{dots}</g>')
        if label:
            self.legend.append((label, color))

    def polyline(self, x, y, color=None, label=None, width=1.5):
        color = color or PALETTE[len(self.legend) % len(PALETTE)]
        px, py = self._px(x, y)
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(px, py))
        self.items.append(f'<polyline fill="none" stroke="{color}" stroke-width="{width}" points="{pts}"/>')
        if label:
            self.legend.append((label, color))

    def circle(self, cx, cy, radius, color="#888888"):
        (px,), (py,) = self._px([cx], [cy])
        rx = radius / (self.xlim[1] - self.xlim[0]) * (self.w - 60)
        self.items.append(f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(rx)}" fill="none" stroke="{color}"/>')

    def render(self) -> str:
        head = (
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{self.w}" height="{self.h}" '
            f'viewBox="0 0 {self.w} {self.h}">\n'
            f'<rect width="{self.w}" height="{self.h}" fill="white"/>\n'
        )
        body = "\n".join(self.items)
        leg = "".join(
            f'<text x="36" y="{20 + 14 * i}" font-size="11" fill="{c}">{escape(t)}</text>'
            for i, (t, c) in enumerate(self.legend)
        )
        title = f'<text x="{self.w - 10}" y="16" font-size="12" text-anchor="end">{escape(self.title)}</text>'
        return head + body + "\n" + leg + title + "\n</svg>\n"

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.render())


def stereo(xyz):
    """Stereographic view from the north pole (inf) onto the equatorial plane, squashed into the unit disc."""
    xyz = np.asarray(xyz)
    den = np.maximum(1 - xyz[:, 2], 1e-12)
    u, v = xyz[:, 0] / den, xyz[:, 1] / den
    r = np.hypot(u, v)
    s = np.where(r > 0, np.tanh(r / 2) / np.where(r > 0, r, 1), 0.5)
    return u * s, v * s


def sphere_scatter(path, clouds: dict, title="", max_points=4000):
    fig = Figure(title=title, xlim=(-1.05, 1.05), ylim=(-1.05, 1.05))
    fig.circle(0, 0, 1.0)
    for i, (label, xyz) in enumerate(clouds.items()):
        xyz = np.asarray(xyz)[:max_points]
        x, y = stereo(xyz)
        fig.scatter(x, y, PALETTE[i % len(PALETTE)], label=label)
    fig.save(path)


def series_plot(path, x, ys: dict, title=""):
    x = np.asarray(x, float)
    allv = np.concatenate([np.asarray(v, float).ravel() for v in ys.values()])
    allv = allv[np.isfinite(allv)]
    lo, hi = (float(allv.min()), float(allv.max())) if len(allv) else (0.0, 1.0)
    pad = 0.05 * (hi - lo or 1.0)
    fig = Figure(640, 360, (float(x.min()), float(x.max()) + 1e-12), (lo - pad, hi + pad), title)
    for i, (label, y) in enumerate(ys.items()):
        fig.polyline(x, y, PALETTE[i % len(PALETTE)], label=label)
    fig.save(path)
