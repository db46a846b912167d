"""Run-trace serialization: per-loop CSV, JSON summary and static SVG plots.

CSV columns are dimension-labeled, e.g. ``q[0]`` ... ``q[17]``,
``p_act[0]`` ... ``p_act[5]`` (right xyz, left xyz). Scalar fields keep
their names. The SVG files are plain hand-written documents:
``paths.svg`` (top view of palm and base paths, obstacles and sampled
task-plan snapshots) and ``forces.svg`` (palm-normal force tracking).
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

# (field, width); width 0 marks a scalar
ROW_SCHEMA = (
    ("loop", 0), ("t", 0), ("q", 18), ("qd", 18), ("cmd_upper", 15), ("cmd_base", 3),
    ("p_act", 6), ("theta_act", 8), ("p_ref", 6), ("theta_ref", 8),
    ("F_act", 6), ("F_ref", 6), ("F_opt", 6), ("clearance_mid", 0), ("clearance_base", 0),
    ("task_solve_time", 0), ("wb_solve_time", 0), ("task_converged", 0), ("wb_converged", 0),
    ("task_violation", 0), ("wb_violation", 0), ("consistency", 0),
)
VECTOR_FIELDS = tuple(name for name, width in ROW_SCHEMA if width)


def columns() -> list[str]:
    cols = []
    for name, width in ROW_SCHEMA:
        cols += [f"{name}[{i}]" for i in range(width)] if width else [name]
    return cols


def _flatten(row: dict) -> list:
    out = []
    for name, width in ROW_SCHEMA:
        val = row[name]
        if width:
            v = np.ravel(val)
            if v.size != width:
                raise ValueError(f"trace field {name!r} has {v.size} values, expected {width}")
            out += [repr(float(x)) for x in v]
        elif isinstance(val, float):
            out.append(repr(val))
        else:
            out.append(val)
    return out


def write_csv(rows, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns())
        for r in rows:
            w.writerow(_flatten(r))


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with Path(path).open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(header))
    return header, data


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def write_summary(summary: dict, path) -> None:
    clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in summary.items()}
    Path(path).write_text(json.dumps(clean, indent=2, sort_keys=True, default=_json_default) + "\n")


class _Svg:
    def __init__(self, width=640, height=480, margin=50):
        self.w, self.h, self.m = width, height, margin
        self.items = []

    def frame(self, xlim, ylim, equal=False):
        (x0, x1), (y0, y1) = xlim, ylim
        if x1 - x0 < 1e-9:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 - y0 < 1e-9:
            y0, y1 = y0 - 0.5, y1 + 0.5
        sx = (self.w - 2 * self.m) / (x1 - x0)
        sy = (self.h - 2 * self.m) / (y1 - y0)
        if equal:
            sx = sy = min(sx, sy)
        self.tx = lambda x: self.m + (np.asarray(x) - x0) * sx
        self.ty = lambda y: self.h - self.m - (np.asarray(y) - y0) * sy
        self.scale = sx
        self.items.append(f'<rect x="{self.m}" y="{self.m}" width="{self.w - 2 * self.m}" '
                          f'height="{self.h - 2 * self.m}" fill="none" stroke="#888"/>')
        self.text(self.m, self.h - self.m + 16, f"{x0:.2f}")
        self.text(self.w - self.m - 30, self.h - self.m + 16, f"{x1:.2f}")
        self.text(4, self.h - self.m, f"{y0:.2f}")
        self.text(4, self.m + 10, f"{y1:.2f}")

    def polyline(self, x, y, color, width=1.5, dash=None):
        pts = " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(self.tx(x), self.ty(y)))
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="{width}"{d}/>')

    def circle(self, x, y, r, color, fill="none", dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.items.append(f'<circle cx="{float(self.tx(x)):.2f}" cy="{float(self.ty(y)):.2f}" '
                          f'r="{r * self.scale:.2f}" stroke="{color}" fill="{fill}"{d}/>')

    def text(self, x, y, s, size=11):
        self.items.append(f'<text x="{x:.1f}" y="{y:.1f}" font-size="{size}" font-family="sans-serif">{s}</text>')

    def render(self, title: str) -> str:
        body = "\n".join(self.items)
        return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.w}" height="{self.h}" '
                f'viewBox="0 0 {self.w} {self.h}">\n<title>{title}</title>\n'
                f'<text x="{self.m}" y="24" font-size="14" font-family="sans-serif">{title}</text>\n'
                f'{body}\n</svg>\n')


def paths_svg(trace, scenario) -> str:
    rows = trace.rows
    p = np.array([r["p_act"] for r in rows])
    base = np.array([r["q"][:2] for r in rows])
    xs = [p[:, 0], p[:, 3], base[:, 0]]
    ys = [p[:, 1], p[:, 4], base[:, 1]]
    for o in scenario.obstacles:
        xs.append(np.array([o.center[0] - scenario.d_safe, o.center[0] + scenario.d_safe]))
        ys.append(np.array([o.center[1] - scenario.d_safe, o.center[1] + scenario.d_safe]))
    for _, plan in trace.task_paths:
        xs += [plan[:, 0], plan[:, 3]]
        ys += [plan[:, 1], plan[:, 4]]
    allx, ally = np.concatenate(xs), np.concatenate(ys)
    svg = _Svg()
    svg.frame((allx.min() - 0.1, allx.max() + 0.1), (ally.min() - 0.1, ally.max() + 0.1), equal=True)
    for _, plan in trace.task_paths:
        svg.polyline(plan[:, 0], plan[:, 1], "#f4a582", 1.0, "4,3")
        svg.polyline(plan[:, 3], plan[:, 4], "#92c5de", 1.0, "4,3")
    svg.polyline(p[:, 0], p[:, 1], "#b2182b")
    svg.polyline(p[:, 3], p[:, 4], "#2166ac")
    svg.polyline(0.5 * (p[:, 0] + p[:, 3]), 0.5 * (p[:, 1] + p[:, 4]), "#555", 1.0)
    svg.polyline(base[:, 0], base[:, 1], "#1a9850")
    for o in scenario.obstacles:
        svg.circle(o.center[0], o.center[1], max(o.radius, 0.01), "#000", "#999")
        svg.circle(o.center[0], o.center[1], scenario.d_safe + o.radius, "#000", dash="3,3")
    svg.text(svg.m + 8, svg.m + 16, "red/blue: right/left palm, grey: midpoint, green: base, "
                                    "dashed: task plans")
    return svg.render(f"{scenario.name}: top view")


def forces_svg(trace, scenario) -> str:
    rows = trace.rows
    t = np.array([r["t"] for r in rows])
    fa = np.array([r["F_act"] for r in rows])
    fr = np.array([r["F_ref"] for r in rows])
    fo = np.array([r["F_opt"] for r in rows])
    cols = [2, 5]  # palm-normal components
    vals = np.concatenate([fa[:, cols].ravel(), fr[:, cols].ravel(), fo[:, cols].ravel()])
    svg = _Svg()
    svg.frame((t.min(), max(t.max(), t.min() + 1e-3)), (min(vals.min(), 0.0), max(vals.max(), 1.0)))
    for c, color in zip(cols, ("#b2182b", "#2166ac")):
        svg.polyline(t, fa[:, c], color)
        svg.polyline(t, fr[:, c], color, 1.0, "5,3")
        svg.polyline(t, fo[:, c], color, 0.8, "1,2")
    svg.text(svg.m + 8, svg.m + 16, "palm-normal force [N]; solid: measured, dashed: reference, "
                                    "dotted: admittance model")
    return svg.render(f"{scenario.name}: force tracking")


def write_trace(trace, scenario, outdir, plots: bool = True) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = {"csv": outdir / "trace.csv", "summary": outdir / "summary.json"}
    write_csv(trace.rows, files["csv"])
    write_summary(trace.summary, files["summary"])
    if plots and trace.rows:
        files["paths"] = outdir / "paths.svg"
        files["paths"].write_text(paths_svg(trace, scenario))
        files["forces"] = outdir / "forces.svg"
        files["forces"].write_text(forces_svg(trace, scenario))
    return files
