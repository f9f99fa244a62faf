"""Static SVG figures (heatmaps, curves, trajectories) and run-directory summaries."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import DomainError

SCHEMA_VERSION = 1
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2"]


def _fmt(x: float) -> str:
    return f"{x:.2f}".rstrip("0").rstrip(".")


def _svg(width: int, height: int, body: Sequence[str]) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">'
    )
    return "\n".join([head, f'<rect width="{width}" height="{height}" fill="white"/>', *body, "</svg>\n"])


def _text(x, y, s, anchor="middle", size=11, rotate=None) -> str:
    rot = f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"' if rotate is not None else ""
    return f'<text x="{_fmt(x)}" y="{_fmt(y)}" text-anchor="{anchor}" font-size="{size}"{rot}>{escape(str(s))}</text>'


def _color(frac: float) -> str:
    # white -> dark red
    f = min(max(frac, 0.0), 1.0)
    r = 255 - int(round(75 * f))
    gb = 255 - int(round(255 * f))
    return f"#{r:02x}{gb:02x}{gb:02x}"


def heatmap_svg(
    values: np.ndarray,
    feasible: np.ndarray,
    row_labels: Sequence[float],
    col_labels: Sequence[float],
    title: str = "",
    cell: int = 24,
) -> str:
    """Per-cell values in [0, 1] with the feasibility boundary as a red dashed outline."""
    values = np.asarray(values, dtype=float)
    feasible = np.asarray(feasible, dtype=bool)
    ni, nj = values.shape
    left, top = 70, 40
    w, h = left + nj * cell + 90, top + ni * cell + 60
    body = [_text(w / 2, 20, title, size=13)]
    for i in range(ni):
        for j in range(nj):
            x, y = left + j * cell, top + i * cell
            v = values[i, j]
            body.append(
                f'<rect class="cell" x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{_color(v)}" '
                f'stroke="#cccccc" stroke-width="0.5"><title>{escape(f"{row_labels[i]:.3g}, {col_labels[j]:.3g}: {v:.2f}")}</title></rect>'
            )
    # boundary segments between feasible and infeasible neighbours
    segs = []
    for i in range(ni):
        for j in range(nj):
            if not feasible[i, j]:
                continue
            x, y = left + j * cell, top + i * cell
            if j + 1 >= nj or not feasible[i, j + 1]:
                segs.append((x + cell, y, x + cell, y + cell))
            if i + 1 >= ni or not feasible[i + 1, j]:
                segs.append((x, y + cell, x + cell, y + cell))
            if j == 0 or not feasible[i, j - 1]:
                segs.append((x, y, x, y + cell))
            if i == 0 or not feasible[i - 1, j]:
                segs.append((x, y, x + cell, y))
    if segs:
        d = " ".join(f"M{a} {b} L{c} {e}" for a, b, c, e in segs)
        body.append(f'<path class="feasibility" d="{d}" stroke="red" stroke-width="2" stroke-dasharray="5,3" fill="none"/>')
    for i in range(0, ni, max(1, ni // 10)):
        body.append(_text(left - 4, top + i * cell + cell * 0.65, f"{row_labels[i]:.2f}", anchor="end", size=9))
    for j in range(0, nj, max(1, nj // 10)):
        body.append(_text(left + j * cell + cell / 2, top + ni * cell + 14, f"{col_labels[j]:.2f}", size=9))
    body.append(_text(left + nj * cell / 2, top + ni * cell + 34, "follower deceleration (m/s²)"))
    body.append(_text(16, top + ni * cell / 2, "lead deceleration (m/s²)", rotate=-90))
    # colour bar
    bx = left + nj * cell + 20
    for k in range(10):
        body.append(f'<rect x="{bx}" y="{top + (9 - k) * 20}" width="14" height="20" fill="{_color((k + 0.5) / 10)}"/>')
    body.append(_text(bx + 18, top + 8, "1.0", anchor="start", size=9))
    body.append(_text(bx + 18, top + 200, "0.0", anchor="start", size=9))
    return _svg(w, h, body)


def _axes(xs: np.ndarray, ys: np.ndarray, width: int, height: int, margin=(60, 20, 30, 45)):
    left, right, top, bottom = margin
    x0, x1 = float(np.nanmin(xs)), float(np.nanmax(xs))
    y0, y1 = float(np.nanmin(ys)), float(np.nanmax(ys))
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 1.0, y1 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def sx(x):
        return left + (x - x0) / (x1 - x0) * (width - left - right)

    def sy(y):
        return top + (y1 - y) / (y1 - y0) * (height - top - bottom)

    body = [
        f'<line x1="{left}" y1="{height - bottom}" x2="{width - right}" y2="{height - bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{height - bottom}" stroke="black"/>',
    ]
    for t in np.linspace(x0, x1, 5):
        body.append(_text(sx(t), height - bottom + 14, f"{t:.3g}", size=9))
    for t in np.linspace(y0, y1, 5):
        body.append(_text(left - 4, sy(t) + 3, f"{t:.3g}", anchor="end", size=9))
    return sx, sy, body


def _polyline(xs, ys, sx, sy, color, cls="series") -> str:
    pts = " ".join(f"{_fmt(sx(x))},{_fmt(sy(y))}" for x, y in zip(xs, ys) if math.isfinite(y))
    return f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>'


def curves_svg(
    x: Sequence[float],
    series: dict[str, Sequence[float]],
    bands: Optional[dict[str, Sequence[float]]] = None,
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    width: int = 640,
    height: int = 360,
) -> str:
    """Line plot of one or more series; ``bands`` adds a +/- std envelope to the named series."""
    x = np.asarray(x, dtype=float)
    bands = bands or {}
    lo_hi = [np.asarray(v, dtype=float) for v in series.values()]
    for name, sd in bands.items():
        m = np.asarray(series[name], dtype=float)
        lo_hi += [m - np.asarray(sd), m + np.asarray(sd)]
    sx, sy, body = _axes(x, np.concatenate(lo_hi), width, height)
    body.insert(0, _text(width / 2, 16, title, size=13))
    for k, (name, ys) in enumerate(series.items()):
        color = PALETTE[k % len(PALETTE)]
        ys = np.asarray(ys, dtype=float)
        if name in bands:
            sd = np.asarray(bands[name], dtype=float)
            upper = [f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x, ys + sd)]
            lower = [f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(x[::-1], (ys - sd)[::-1])]
            body.append(f'<polygon class="band" points="{" ".join(upper + lower)}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        body.append(_polyline(x, ys, sx, sy, color))
        body.append(_text(width - 25, 32 + 14 * k, name, anchor="end", size=10).replace("<text", f'<text fill="{color}"', 1))
    body.append(_text(width / 2, height - 8, xlabel))
    body.append(_text(14, height / 2, ylabel, rotate=-90))
    return _svg(width, height, body)


def trajectory_svg(log, title: str = "") -> str:
    """Position-vs-time traces per vehicle with a marker at each collision."""
    t = log.column("t")
    names = [k[1:] for k in log.rows[0] if k.startswith("x") and k[1:].isdigit()]
    xs = {n: log.column(f"x{n}") for n in names}
    allx = np.concatenate([v[np.isfinite(v)] for v in xs.values()])
    if allx.size == 0:
        raise DomainError("trajectory holds no positions")
    sx, sy, body = _axes(t, allx, 640, 360)
    body.insert(0, _text(320, 16, title, size=13))
    for k, n in enumerate(names):
        body.append(_polyline(t, xs[n], sx, sy, PALETTE[k % len(PALETTE)], cls=f"vehicle v{n}"))
        body.append(_text(615, 32 + 14 * k, f"vehicle {n}", anchor="end", size=10))
    for row in log.rows:
        if "collision" in row["events"].split(";"):
            xpos = [row[f"x{n}"] for n in names if row[f"x{n}"] is not None]
            y = float(np.mean(xpos))
            body.append(f'<circle class="collision" cx="{_fmt(sx(row["t"]))}" cy="{_fmt(sy(y))}" r="6" fill="none" stroke="red" stroke-width="2"/>')
    body.append(_text(320, 352, "time (s)"))
    body.append(_text(14, 180, "position (m)", rotate=-90))
    return _svg(640, 360, body)


# --------------------------------------------------------------------------
# run-directory summary


def summarize_run(run_dir) -> dict:
    """Collect the JSON artifacts of a run directory into one versioned summary."""
    d = Path(run_dir)
    files = sorted(p for p in d.glob("*.json") if p.name != "summary.json" and not p.name.endswith(".meta.json"))
    if not files:
        raise DomainError(f"no JSON artifacts in {d}")
    out: dict = {"schema_version": SCHEMA_VERSION, "grids": {}, "scenarios": {}, "calibration": None, "training": None}
    for p in files:
        data = json.loads(p.read_text())
        kind = data.get("artifact")
        if kind == "grid":
            out["grids"][data["controller"]] = {
                "success_over_feasible": data.get("success_over_feasible"),
                "p_collision": data.get("p_collision"),
                "collision_rate": data.get("collision_rate"),
                "seed": data.get("seed"),
            }
        elif kind == "scenario":
            out["scenarios"][f"{data['controller']}:{data['case']}{'n' if data.get('narrow') else ''}"] = {
                "clean": data["clean"], "collided": data["collided"], "final_gaps": data["final_gaps"],
            }
        elif kind == "calibration":
            out["calibration"] = {"raw_rmse": data["raw_rmse"], "calibrated_rmse": data["calibrated_rmse"]}
        elif kind == "training":
            out["training"] = {"seeds": data.get("seeds"), "best_score": data.get("best_score")}
    return out


def summary_table(summary: dict) -> str:
    gap = "n/a"
    lines = ["section       item                      value", "-" * 56]
    for ctrl in ("baseline", "rl", "untrained"):
        g = summary["grids"].get(ctrl)
        val = f"{g['success_over_feasible']:.2f}% success over feasible" if g and g["success_over_feasible"] is not None else gap
        lines.append(f"grid          {ctrl:<25} {val}")
    for key in sorted(summary["scenarios"]):
        s = summary["scenarios"][key]
        gaps = ", ".join(f"{g:.2f}" for g in s["final_gaps"])
        lines.append(f"scenario      {key:<25} {'clean' if s['clean'] else 'COLLISION' if s['collided'] else 'tight'} [{gaps}]")
    if not summary["scenarios"]:
        lines.append(f"scenario      {'-':<25} {gap}")
    c = summary["calibration"]
    lines.append(f"calibration   {'rmse raw -> calibrated':<25} " + (f"{c['raw_rmse']:.3f} -> {c['calibrated_rmse']:.3f} m" if c else gap))
    return "\n".join(lines) + "\n"
