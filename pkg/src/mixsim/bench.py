"""Wall-clock benchmarks: grid-and-groups solver against the all-pairs baseline,
and the accelerated solver across worker counts.
"""

from __future__ import annotations

import csv
import io
import os
import platform
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .dataset import GroupedDataset, group_by_speed, synthesize_dataset
from .energy import EnergyWeights
from .geometry import Circle
from .scenario import AgentSpec, OppositeSideGoal, Params, RegionPlacement, Scenario, initialize_agents
from .solver import SimState, Simulator, TrajectoryLog

SCENE_SIZE = 1000.0
BRUTE_CEILING = 4000
REPORT_COLUMNS = ["label", "n", "mode", "workers", "seconds_per_frame", "speedup_vs_brute", "estimated"]


class BenchError(RuntimeError):
    pass


@dataclass
class BenchRow:
    label: str
    n: int
    mode: str
    workers: int
    seconds_per_frame: float
    speedup_vs_brute: float | None = None
    estimated: bool = False


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def write_csv(self, stream) -> None:
        for key, value in self.metadata.items():
            stream.write(f"# {key}: {value}\n")
        w = csv.writer(stream, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([
                r.label, r.n, r.mode, r.workers, f"{r.seconds_per_frame:.6g}",
                "" if r.speedup_vs_brute is None else f"{r.speedup_vs_brute:.6g}",
                int(r.estimated),
            ])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()

    def table(self) -> str:
        head = f"{'label':<12}{'n':>7}  {'mode':<12}{'workers':>8}{'s/frame':>12}{'speedup':>11}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            sp = "" if r.speedup_vs_brute is None else f"{r.speedup_vs_brute:.1f}x"
            mark = "*" if r.estimated else ""
            lines.append(
                f"{r.label:<12}{r.n:>7}  {r.mode:<12}{r.workers:>8}{r.seconds_per_frame:>12.4g}{sp:>11}{mark}"
            )
        if any(r.estimated for r in self.rows):
            lines.append("* extrapolated from a quadratic fit of the measured brute-force rows")
        return "\n".join(lines)


def machine_metadata() -> dict:
    return {
        "python": platform.python_version(),
        "platform": platform.platform(),
        "processor": platform.processor() or platform.machine(),
        "cpus": os.cpu_count(),
    }


def bench_dataset(seed: int = 0, count: int = 1000) -> GroupedDataset:
    """Pedestrian states with speeds spread over six 0.5 m/s groups."""
    return group_by_speed(synthesize_dataset(("pedestrian",), (0.0, 3.0), count=count, seed=seed))


def synthetic_scene(n: int, seed: int = 0, size: float = SCENE_SIZE, h: float = 10.0, z: int = 2) -> Scenario:
    """``n`` pedestrians scattered over an empty square, half walking each way."""
    if n < 1:
        raise ValueError("n must be at least 1")
    params = Params(dt=0.1, T=10, d_c=1.0, h=h, z=z, seed=seed)
    shape = Circle(0.25)
    region = RegionPlacement((0.0, 0.0, size, size))
    specs = [AgentSpec("east", "pedestrian", (n + 1) // 2, shape, region, OppositeSideGoal((1.0, 0.0), size))]
    if n > 1:
        specs.append(AgentSpec("west", "pedestrian", n // 2, shape, region, OppositeSideGoal((-1.0, 0.0), 0.0)))
    weights = {"pedestrian": EnergyWeights()}
    return Scenario((0.0, 0.0, size, size), params, weights, specs)


def _time_frames(scenario: Scenario, dataset: GroupedDataset, frames: int, workers: int, mode: str,
                 warmup: int = 1) -> tuple[float, TrajectoryLog]:
    agents = initialize_agents(scenario, dataset)
    sim = SimState(0, 0.0, agents)
    log = TrajectoryLog([a.kind for a in agents], [a.shape for a in agents])
    log.record(sim)
    times = []
    with Simulator(scenario, dataset, workers, mode) as simulator:
        for k in range(warmup + frames):
            t0 = time.perf_counter()
            sim = simulator.step(sim)
            elapsed = time.perf_counter() - t0
            if k >= warmup:
                times.append(elapsed)
            log.record(sim)
    return statistics.median(times), log


def _quadratic_fit(ns, ts):
    """Least-squares fit of ``t = c * n^2`` through the measured points."""
    ns = np.asarray(ns, dtype=float)
    ts = np.asarray(ts, dtype=float)
    c = float(np.dot(ns * ns, ts) / np.dot(ns**4, np.ones_like(ns)))
    return lambda n: c * n * n


def bench_scaling(
    sizes,
    frames: int = 10,
    dataset: GroupedDataset | None = None,
    workers: int = 1,
    brute_ceiling: int = BRUTE_CEILING,
    seed: int = 0,
) -> BenchReport:
    """Median seconds per frame for both modes on the synthetic scene at each size."""
    sizes = [int(n) for n in sizes]
    if not sizes:
        raise ValueError("sizes must not be empty")
    if frames < 10:
        raise ValueError("frames must be at least 10")
    dataset = bench_dataset(seed) if dataset is None else dataset
    report = BenchReport(metadata={**machine_metadata(), "frames": frames, "scene": f"{SCENE_SIZE:g}m square"})
    brute_times: dict[int, float] = {}
    accel_times: dict[int, float] = {}
    for n in sizes:
        scene = synthetic_scene(n, seed)
        accel_times[n], _ = _time_frames(scene, dataset, frames, workers, "accelerated")
        if n <= brute_ceiling:
            brute_times[n], _ = _time_frames(scene, dataset, frames, 1, "brute")
    fit = _quadratic_fit(list(brute_times), list(brute_times.values())) if brute_times else None
    for n in sizes:
        estimated = n not in brute_times
        if estimated and fit is None:
            brute = None
        else:
            brute = fit(n) if estimated else brute_times[n]
        if brute is not None:
            report.rows.append(BenchRow("synthetic", n, "brute", 1, brute, 1.0, estimated))
        speedup = None if brute is None else brute / accel_times[n]
        report.rows.append(BenchRow("synthetic", n, "accelerated", workers, accel_times[n], speedup))
    return report


def bench_parallel(
    n: int,
    worker_counts,
    frames: int = 10,
    dataset: GroupedDataset | None = None,
    seed: int = 0,
) -> BenchReport:
    """Accelerated mode at fixed ``n`` across worker counts.

    Every worker count must reproduce the single-worker log exactly;
    divergence raises ``BenchError``.
    """
    worker_counts = [int(w) for w in worker_counts]
    if not worker_counts or min(worker_counts) < 1:
        raise ValueError("worker counts must be positive")
    if n < max(worker_counts):
        raise ValueError("n must be at least the largest worker count")
    if frames < 10:
        raise ValueError("frames must be at least 10")
    dataset = bench_dataset(seed) if dataset is None else dataset
    scene = synthetic_scene(n, seed)
    report = BenchReport(metadata={**machine_metadata(), "frames": frames, "scene": f"{SCENE_SIZE:g}m square"})
    reference = None
    for w in worker_counts:
        t, log = _time_frames(scene, dataset, frames, w, "accelerated")
        digest = log.checksum()
        if reference is None:
            reference = digest
        elif digest != reference:
            raise BenchError(f"{w} workers produced a different trajectory log than {worker_counts[0]}")
        report.rows.append(BenchRow("parallel", n, "accelerated", w, t))
    report.metadata["checksum"] = reference
    return report
