"""Dependency-free SVG charts on a fixed 800x600 canvas with deterministic output."""

from __future__ import annotations

import math
from dataclasses import dataclass
from html import escape
from pathlib import Path
from typing import Sequence

WIDTH, HEIGHT = 800, 600
LEFT, RIGHT, TOP, BOTTOM = 90, 30, 50, 70
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _f(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    return f"{v:.3g}"


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    markers: bool = True
    dashed: bool = False


class _Axes:
    def __init__(self, xs, ys, logx=False, logy=False, equal=False):
        self.logx, self.logy = logx, logy
        tx = [self._tx(v) for v in xs]
        ty = [self._ty(v) for v in ys]
        self.x0, self.x1 = _padded(min(tx), max(tx))
        self.y0, self.y1 = _padded(min(ty), max(ty))
        self.pw = WIDTH - LEFT - RIGHT
        self.ph = HEIGHT - TOP - BOTTOM
        if equal:
            scale = max((self.x1 - self.x0) / self.pw, (self.y1 - self.y0) / self.ph)
            cx, cy = (self.x0 + self.x1) / 2, (self.y0 + self.y1) / 2
            self.x0, self.x1 = cx - scale * self.pw / 2, cx + scale * self.pw / 2
            self.y0, self.y1 = cy - scale * self.ph / 2, cy + scale * self.ph / 2

    def _tx(self, v):
        return math.log10(v) if self.logx else v

    def _ty(self, v):
        return math.log10(v) if self.logy else v

    def px(self, v):
        return LEFT + (self._tx(v) - self.x0) / (self.x1 - self.x0) * self.pw

    def py(self, v):
        return TOP + self.ph - (self._ty(v) - self.y0) / (self.y1 - self.y0) * self.ph

    def ticks(self, lo, hi, log):
        if log:
            return [10.0**k for k in range(math.ceil(lo - 1e-9), math.floor(hi + 1e-9) + 1)]
        step = _nice_step((hi - lo) / 6)
        start = math.ceil(lo / step) * step
        out, v = [], start
        while v <= hi + 1e-9 * step:
            out.append(0.0 if abs(v) < 1e-12 * step else v)
            v += step
        return out


def _padded(lo, hi):
    if hi - lo < 1e-12:
        pad = max(abs(lo) * 0.1, 1.0)
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _nice_step(raw):
    mag = 10 ** math.floor(math.log10(raw))
    for m in (1, 2, 2.5, 5, 10):
        if m * mag >= raw:
            return m * mag
    return 10 * mag


def _frame(ax: _Axes, title: str, xlabel: str, ylabel: str) -> list[str]:
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="28" text-anchor="middle" font-family="sans-serif" font-size="18">{escape(title)}</text>',
        f'<rect x="{LEFT}" y="{TOP}" width="{ax.pw}" height="{ax.ph}" fill="none" stroke="black"/>',
    ]
    for v in ax.ticks(ax.x0, ax.x1, ax.logx):
        x = LEFT + ((v if not ax.logx else math.log10(v)) - ax.x0) / (ax.x1 - ax.x0) * ax.pw
        parts.append(f'<line x1="{_f(x)}" y1="{TOP + ax.ph}" x2="{_f(x)}" y2="{TOP + ax.ph + 5}" stroke="black"/>')
        parts.append(
            f'<text x="{_f(x)}" y="{TOP + ax.ph + 20}" text-anchor="middle" font-family="sans-serif" '
            f'font-size="12">{_tick_label(v)}</text>'
        )
    for v in ax.ticks(ax.y0, ax.y1, ax.logy):
        y = TOP + ax.ph - ((v if not ax.logy else math.log10(v)) - ax.y0) / (ax.y1 - ax.y0) * ax.ph
        parts.append(f'<line x1="{LEFT - 5}" y1="{_f(y)}" x2="{LEFT}" y2="{_f(y)}" stroke="black"/>')
        parts.append(
            f'<text x="{LEFT - 8}" y="{_f(y + 4)}" text-anchor="end" font-family="sans-serif" '
            f'font-size="12">{_tick_label(v)}</text>'
        )
    parts.append(
        f'<text x="{LEFT + ax.pw / 2}" y="{HEIGHT - 20}" text-anchor="middle" font-family="sans-serif" '
        f'font-size="14">{escape(xlabel)}</text>'
    )
    parts.append(
        f'<text x="22" y="{TOP + ax.ph / 2}" text-anchor="middle" font-family="sans-serif" font-size="14" '
        f'transform="rotate(-90 22 {TOP + ax.ph / 2})">{escape(ylabel)}</text>'
    )
    return parts


def line_chart(
    series: Sequence[Series],
    title: str,
    xlabel: str,
    ylabel: str,
    path: str | Path | None = None,
    logx: bool = False,
    logy: bool = False,
) -> str:
    """Render line series; non-finite or (on log axes) non-positive points are skipped."""

    def usable(x, y):
        ok = math.isfinite(x) and math.isfinite(y)
        return ok and (not logx or x > 0) and (not logy or y > 0)

    pts = [(x, y) for s in series for x, y in zip(s.x, s.y) if usable(x, y)]
    if not pts:
        pts = [(1.0, 1.0)]
    ax = _Axes([p[0] for p in pts], [p[1] for p in pts], logx, logy)
    parts = _frame(ax, title, xlabel, ylabel)
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        coords = [(ax.px(x), ax.py(y)) for x, y in zip(s.x, s.y) if usable(x, y)]
        if len(coords) > 1:
            d = " ".join(f"{_f(x)},{_f(y)}" for x, y in coords)
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="2"{dash}/>')
        if s.markers:
            parts.extend(f'<circle cx="{_f(x)}" cy="{_f(y)}" r="3" fill="{color}"/>' for x, y in coords)
        ly = TOP + 18 + 18 * k
        parts.append(f'<line x1="{LEFT + 12}" y1="{ly}" x2="{LEFT + 36}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(
            f'<text x="{LEFT + 42}" y="{ly + 4}" font-family="sans-serif" font-size="12">{escape(s.label)}</text>'
        )
    parts.append("</svg>")
    return _emit(parts, path)


def trajectory_plot(
    trajectories: Sequence[Sequence[tuple[float, float]]],
    success: Sequence[bool],
    obstacles: Sequence[Sequence[tuple[float, float]]],
    goal_center: tuple[float, float],
    goal_radius: float,
    title: str,
    path: str | Path | None = None,
) -> str:
    """Planar paths coloured by outcome (green success, red failure) over obstacles and the goal disc."""
    xs = [p[0] for t in trajectories for p in t] + [v[0] for o in obstacles for v in o]
    ys = [p[1] for t in trajectories for p in t] + [v[1] for o in obstacles for v in o]
    xs += [goal_center[0] - goal_radius, goal_center[0] + goal_radius]
    ys += [goal_center[1] - goal_radius, goal_center[1] + goal_radius]
    # keep the view on the scene; diverged samples would squash everything
    span = 4 * max(max(abs(v) for o in obstacles for p in o for v in p), abs(goal_center[0]), abs(goal_center[1]))
    xs = [min(max(v, -span), span) for v in xs]
    ys = [min(max(v, -span), span) for v in ys]
    ax = _Axes(xs, ys, equal=True)
    parts = _frame(ax, title, "p_x", "p_y")
    parts.append(f'<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{ax.pw}" height="{ax.ph}"/></clipPath>')
    parts.append('<g clip-path="url(#plot)">')
    for o in obstacles:
        d = " ".join(f"{_f(ax.px(x))},{_f(ax.py(y))}" for x, y in o)
        parts.append(f'<polygon points="{d}" fill="#777777" fill-opacity="0.6" stroke="black"/>')
    r = goal_radius / (ax.x1 - ax.x0) * ax.pw
    parts.append(
        f'<circle cx="{_f(ax.px(goal_center[0]))}" cy="{_f(ax.py(goal_center[1]))}" r="{_f(r)}" '
        f'fill="#2ca02c" fill-opacity="0.15" stroke="#2ca02c"/>'
    )
    for traj, ok in zip(trajectories, success):
        color = "#2ca02c" if ok else "#d62728"
        d = " ".join(f"{_f(ax.px(x))},{_f(ax.py(y))}" for x, y in traj)
        parts.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-opacity="0.35" stroke-width="1"/>')
    parts.append("</g>")
    parts.append("</svg>")
    return _emit(parts, path)


def _emit(parts: list[str], path) -> str:
    text = "\n".join(parts) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text
