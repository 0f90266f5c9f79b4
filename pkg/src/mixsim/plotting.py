"""Static figures: top-down scene snapshots and benchmark scaling plots.

SVG output is byte-stable for identical inputs (fixed hash salt, no
timestamp), so tests can compare files directly.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib import patches  # noqa: E402

from .geometry import Circle, Rect, perp  # noqa: E402

KIND_COLORS = {
    "pedestrian": "#1f77b4",
    "car": "#d62728",
    "bicycle": "#2ca02c",
    "tricycle": "#9467bd",
    "other": "#7f7f7f",
}
_SVG_META = {"Date": None, "Creator": None}


def _stable_svg():
    return matplotlib.rc_context({"svg.hashsalt": "mixsim", "svg.fonttype": "none"})


def _shape_patch(shape, position, heading, **style):
    x, y = float(position[0]), float(position[1])
    if isinstance(shape, Circle):
        return patches.Circle((x, y), shape.radius, **style)
    assert isinstance(shape, Rect)
    hx, hy = float(heading[0]), float(heading[1])
    if hx * hx + hy * hy < 1e-18:
        hx, hy = 1.0, 0.0
    angle = math.degrees(math.atan2(hy, hx))
    # Rectangle is anchored at a corner; rotate about the center instead
    return patches.Rectangle(
        (x - shape.half_length, y - shape.half_width),
        2 * shape.half_length,
        2 * shape.half_width,
        angle=angle,
        rotation_point="center",
        **style,
    )


def render_scene(scenario, positions, headings, shapes, kinds, time: float, path, title: str | None = None) -> None:
    """Write one SVG snapshot of the scene at ``time``."""
    x0, y0, x1, y1 = scenario.bounds
    width = max(x1 - x0, 1e-6)
    height = max(y1 - y0, 1e-6)
    scale = 8.0 / max(width, height)
    with _stable_svg():
        fig, ax = plt.subplots(figsize=(max(width * scale, 2.0), max(height * scale, 2.0) + 0.4))
        for road in scenario.roads.values():
            c = road.centerline
            ax.plot(c[:, 0], c[:, 1], color="#bbbbbb", lw=0.8, ls="--")
            for k in range(len(c) - 1):
                t = (c[k + 1] - c[k]) / math.dist(c[k + 1], c[k])
                n = perp(t) * road.half_width
                for side in (1.0, -1.0):
                    seg = c[k : k + 2] + side * n
                    ax.plot(seg[:, 0], seg[:, 1], color="#555555", lw=1.0)
        for light in scenario.lights:
            color = "#d62728" if light.phase(time) == "red" else "#2ca02c"
            ax.plot(light.stop_line[:, 0], light.stop_line[:, 1], color=color, lw=2.5)
        for obs in scenario.obstacles:
            ax.add_patch(_shape_patch(obs.shape, obs.position, obs.heading, fc="#444444", ec="none"))
        for att in scenario.attractors:
            ax.plot([att.position[0]], [att.position[1]], marker="*", color="#ff7f0e", ms=8)
        for pos, head, shape, kind in zip(positions, headings, shapes, kinds):
            color = KIND_COLORS.get(kind, "#7f7f7f")
            ax.add_patch(_shape_patch(shape, pos, head, fc=color, ec="black", lw=0.3, alpha=0.9))
        ax.set_xlim(x0, x1)
        ax.set_ylim(y0, y1)
        ax.set_aspect("equal")
        ax.set_title(title or f"t = {time:.2f} s", fontsize=9)
        ax.tick_params(labelsize=7)
        fig.tight_layout()
        _save(fig, path)


def _save(fig, path) -> None:
    if str(path).lower().endswith(".svg"):
        fig.savefig(path, format="svg", metadata=_SVG_META)
    else:
        fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_bench(report, path) -> None:
    """Seconds per frame against agent count, one line per mode and worker count."""
    series: dict[tuple, list] = {}
    for r in report.rows:
        series.setdefault((r.label, r.mode, r.workers), []).append(r)
    with _stable_svg():
        fig, ax = plt.subplots(figsize=(5.5, 4.0))
        for (label, mode, workers), rows in sorted(series.items()):
            if label == "parallel":
                continue
            rows = sorted(rows, key=lambda r: r.n)
            ax.plot([r.n for r in rows], [r.seconds_per_frame for r in rows], marker="o",
                    label=f"{mode} ({workers} worker{'s' if workers > 1 else ''})")
            for r in rows:
                if r.estimated:
                    ax.plot([r.n], [r.seconds_per_frame], marker="o", mfc="white", color="black")
        par = [r for r in report.rows if r.label == "parallel"]
        if par:
            for r in par:
                ax.plot([r.n], [r.seconds_per_frame], marker="s", ls="none", label=f"{r.workers} workers")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("agents")
        ax.set_ylabel("seconds per frame")
        ax.grid(True, which="both", lw=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        _save(fig, path)
