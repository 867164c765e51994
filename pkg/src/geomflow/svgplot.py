"""Deterministic SVG line plots for simulation diagnostics.

Hand-rolled on purpose: the output contains no timestamps, library version
strings or nondeterministic ids, so identical data produces byte-identical
files and plots can be golden-file tested.  Linear and log-log variants cover
the diagnostic series (area, perimeter, mesh ratios) and convergence tables;
log-log plots can draw dashed order-guide lines with slopes 1..4.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

__all__ = ["Series", "line_plot", "loglog_plot", "save_svg"]

WIDTH, HEIGHT = 640, 480
MARGIN = {"left": 72, "right": 24, "top": 42, "bottom": 54}
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
           "#17becf", "#7f7f7f")


@dataclass(frozen=True)
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _nice_ticks(lo: float, hi: float, target: int = 6):
    span = hi - lo
    raw = span / max(target, 2)
    mag = 10.0 ** np.floor(np.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = np.ceil(lo / step) * step
    ticks = np.arange(first, hi + 0.5 * step, step)
    return [t if abs(t) > 1e-12 * span else 0.0 for t in ticks]


def _decade_ticks(lo: float, hi: float):
    return list(range(int(np.floor(lo)), int(np.ceil(hi)) + 1))


class _Canvas:
    def __init__(self, title: str, xlabel: str, ylabel: str):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" '
            f'height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        ]
        self.x0 = MARGIN["left"]
        self.y0 = MARGIN["top"]
        self.x1 = WIDTH - MARGIN["right"]
        self.y1 = HEIGHT - MARGIN["bottom"]
        if title:
            self.parts.append(
                f'<text x="{(self.x0 + self.x1) / 2:.0f}" y="24" font-family="sans-serif" '
                f'font-size="15" text-anchor="middle">{_escape(title)}</text>')
        if xlabel:
            self.parts.append(
                f'<text x="{(self.x0 + self.x1) / 2:.0f}" y="{HEIGHT - 14}" '
                f'font-family="sans-serif" font-size="13" text-anchor="middle">'
                f'{_escape(xlabel)}</text>')
        if ylabel:
            self.parts.append(
                f'<text x="18" y="{(self.y0 + self.y1) / 2:.0f}" font-family="sans-serif" '
                f'font-size="13" text-anchor="middle" transform="rotate(-90 18 '
                f'{(self.y0 + self.y1) / 2:.0f})">{_escape(ylabel)}</text>')

    def set_ranges(self, xlo, xhi, ylo, yhi):
        if xhi - xlo <= 0:
            pad = max(abs(xlo), 1.0) * 0.05
            xlo, xhi = xlo - pad, xhi + pad
        if yhi - ylo <= 0:
            pad = max(abs(ylo), 1.0) * 0.05
            ylo, yhi = ylo - pad, yhi + pad
        self.xlo, self.xhi, self.ylo, self.yhi = xlo, xhi, ylo, yhi

    def px(self, x: float) -> float:
        return self.x0 + (x - self.xlo) / (self.xhi - self.xlo) * (self.x1 - self.x0)

    def py(self, y: float) -> float:
        return self.y1 - (y - self.ylo) / (self.yhi - self.ylo) * (self.y1 - self.y0)

    def frame(self, xticks, yticks, xfmt, yfmt):
        self.parts.append(
            f'<rect x="{self.x0}" y="{self.y0}" width="{self.x1 - self.x0}" '
            f'height="{self.y1 - self.y0}" fill="none" stroke="black" stroke-width="1"/>')
        for t in xticks:
            if not self.xlo - 1e-12 <= t <= self.xhi + 1e-12:
                continue
            x = self.px(t)
            self.parts.append(f'<line x1="{_fmt(x)}" y1="{self.y1}" x2="{_fmt(x)}" '
                              f'y2="{self.y1 + 5}" stroke="black" stroke-width="1"/>')
            self.parts.append(f'<text x="{_fmt(x)}" y="{self.y1 + 19}" '
                              f'font-family="sans-serif" font-size="11" '
                              f'text-anchor="middle">{xfmt(t)}</text>')
        for t in yticks:
            if not self.ylo - 1e-12 <= t <= self.yhi + 1e-12:
                continue
            y = self.py(t)
            self.parts.append(f'<line x1="{self.x0 - 5}" y1="{_fmt(y)}" x2="{self.x0}" '
                              f'y2="{_fmt(y)}" stroke="black" stroke-width="1"/>')
            self.parts.append(f'<text x="{self.x0 - 8}" y="{_fmt(y + 4)}" '
                              f'font-family="sans-serif" font-size="11" '
                              f'text-anchor="end">{yfmt(t)}</text>')

    def polyline(self, xs, ys, color: str, dashed: bool = False):
        pts = " ".join(f"{_fmt(self.px(x))},{_fmt(self.py(y))}" for x, y in zip(xs, ys))
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                          f'stroke-width="1.5"{dash}/>')

    def text(self, x, y, s, color="black", anchor="start", size=11):
        self.parts.append(f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-family="sans-serif" '
                          f'font-size="{size}" fill="{color}" '
                          f'text-anchor="{anchor}">{_escape(s)}</text>')

    def legend(self, labels_colors):
        y = self.y0 + 16
        for label, color in labels_colors:
            x_line = self.x1 - 150
            self.parts.append(f'<line x1="{x_line}" y1="{y - 4:.0f}" x2="{x_line + 24}" '
                              f'y2="{y - 4:.0f}" stroke="{color}" stroke-width="1.5"/>')
            self.text(x_line + 30, y, label)
            y += 16

    def render(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _check_series(series: Sequence[Series]):
    if not series:
        raise ValueError("no series to plot")
    out = []
    for s in series:
        x = np.asarray(s.x, dtype=float)
        y = np.asarray(s.y, dtype=float)
        if x.size == 0 or x.shape != y.shape:
            raise ValueError(f"series {s.label!r} is empty or mismatched")
        out.append((s.label, x, y))
    return out


def line_plot(series: Sequence[Series], *, title: str = "", xlabel: str = "",
              ylabel: str = "", hlines: Sequence[float] = ()) -> str:
    """Linear-axes line plot; hlines draws dotted horizontal reference lines."""
    data = _check_series(series)
    xlo = min(x.min() for _, x, _ in data)
    xhi = max(x.max() for _, x, _ in data)
    ylo = min(min(y.min() for _, _, y in data), *(hlines or [np.inf]))
    yhi = max(max(y.max() for _, _, y in data), *(hlines or [-np.inf]))
    canvas = _Canvas(title, xlabel, ylabel)
    canvas.set_ranges(xlo, xhi, ylo, yhi)
    canvas.frame(_nice_ticks(canvas.xlo, canvas.xhi), _nice_ticks(canvas.ylo, canvas.yhi),
                 lambda t: f"{t:g}", lambda t: f"{t:g}")
    for ref in hlines:
        y = canvas.py(ref)
        canvas.parts.append(f'<line x1="{canvas.x0}" y1="{_fmt(y)}" x2="{canvas.x1}" '
                            f'y2="{_fmt(y)}" stroke="#444444" stroke-width="1" '
                            f'stroke-dasharray="2,3"/>')
    for i, (label, x, y) in enumerate(data):
        canvas.polyline(x, y, PALETTE[i % len(PALETTE)])
    canvas.legend([(label, PALETTE[i % len(PALETTE)])
                   for i, (label, _, _) in enumerate(data)])
    return canvas.render()


def loglog_plot(series: Sequence[Series], *, title: str = "", xlabel: str = "",
                ylabel: str = "", slope_guides: Sequence[int] = ()) -> str:
    """Log-log plot; slope_guides draws dashed reference lines of those orders."""
    data = _check_series(series)
    for label, x, y in data:
        if np.any(x <= 0) or np.any(y <= 0):
            raise ValueError(f"series {label!r} has non-positive values; cannot log")
    logged = [(label, np.log10(x), np.log10(y)) for label, x, y in data]
    xlo = min(x.min() for _, x, _ in logged)
    xhi = max(x.max() for _, x, _ in logged)
    ylo = min(y.min() for _, _, y in logged)
    yhi = max(y.max() for _, _, y in logged)
    canvas = _Canvas(title, xlabel, ylabel)
    canvas.set_ranges(xlo - 0.05, xhi + 0.05, ylo - 0.2, yhi + 0.2)
    canvas.frame(_decade_ticks(canvas.xlo, canvas.xhi),
                 _decade_ticks(canvas.ylo, canvas.yhi),
                 lambda t: f"1e{int(t)}", lambda t: f"1e{int(t)}")
    for k in slope_guides:
        # Anchor each guide near the lower-right data corner.
        y_hi_end = ylo + 0.08 * max(yhi - ylo, 0.5)
        x_left = canvas.xlo + 0.02
        y_left = y_hi_end - k * (xhi - x_left)
        if y_left < canvas.ylo:
            x_left = xhi - (y_hi_end - canvas.ylo) / k
            y_left = canvas.ylo
        canvas.polyline([x_left, xhi], [y_left, y_hi_end], "#999999", dashed=True)
        canvas.text(canvas.px(x_left) + 4, canvas.py(y_left) - 4, f"slope {k}",
                    color="#777777")
    for i, (label, x, y) in enumerate(logged):
        canvas.polyline(x, y, PALETTE[i % len(PALETTE)])
    canvas.legend([(label, PALETTE[i % len(PALETTE)])
                   for i, (label, _, _) in enumerate(logged)])
    return canvas.render()


def save_svg(text: str, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(text)
