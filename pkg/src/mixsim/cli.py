"""Command-line entry point: ``simulate``, ``estimate`` and ``bench``.

Errors go to standard error as ``mixsim-error: <category>: <message>`` and
the process exits nonzero (2 for usage errors, 1 otherwise).
"""

from __future__ import annotations

import argparse
import sys
from collections import Counter
from pathlib import Path

from .dataset import DatasetError, estimate_states, group_by_speed, load_trajectories, speed_group, write_states
from .scenario import InitializationError, ScenarioError, load_scenario
from .solver import SolverError, run

ERROR_PREFIX = "mixsim-error"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return value


def _int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _add_timestep(p: argparse.ArgumentParser) -> None:
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--dt", type=_positive_float, help="dataset sampling interval in seconds")
    g.add_argument("--frame-rate", type=_positive_float, help="dataset sampling rate in Hz")


def _dt(args) -> float:
    return 1.0 / args.frame_rate if args.frame_rate is not None else args.dt


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mixsim", description="Data-driven mixed traffic and crowd simulation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="run a scenario and write the trajectory log")
    sim.add_argument("--scenario", required=True, type=Path)
    sim.add_argument("--dataset", required=True, type=Path, action="append")
    sim.add_argument("--frames", required=True, type=_positive_int)
    _add_timestep(sim)
    sim.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")
    sim.add_argument("--workers", type=_positive_int, default=1)
    sim.add_argument("--out", required=True, type=Path, help="trajectory log CSV")
    sim.add_argument("--svg-dir", type=Path, default=None)
    sim.add_argument("--snapshot-every", type=_positive_int, default=10)

    est = sub.add_parser("estimate", help="estimate dataset states from raw trajectories")
    est.add_argument("--in", dest="input", required=True, type=Path)
    _add_timestep(est)
    est.add_argument("--delta", type=_positive_int, default=10)
    est.add_argument("--bin-width", type=_positive_float, default=0.5)
    est.add_argument("--out", required=True, type=Path)

    bench = sub.add_parser("bench", help="time accelerated against brute-force stepping")
    bench.add_argument("--sizes", required=True, type=_int_list)
    bench.add_argument("--workers", type=_int_list, default=[1])
    bench.add_argument("--frames", type=_positive_int, default=10)
    bench.add_argument("--brute-ceiling", type=_positive_int, default=4000)
    bench.add_argument("--out", type=Path, default=None, help="also write the CSV report here")
    bench.add_argument("--plot", type=Path, default=None, help="write a scaling figure (SVG or PNG)")
    return parser


def cmd_estimate(args) -> int:
    dt = _dt(args)
    try:
        trajs = load_trajectories(args.input)
    except DatasetError as exc:
        raise DatasetError(f"{args.input}: {exc}") from None
    states = [s for tr in trajs for s in estimate_states(tr, dt, args.delta)]
    if not states:
        raise DatasetError(f"{args.input}: no trajectory has two consecutive samples")
    with open(args.out, "w", newline="") as fh:
        write_states(states, args.bin_width, fh)
    hist = Counter((s.kind, int(speed_group(s.speed, args.bin_width))) for s in states)
    print(f"states: {len(states)}")
    for (kind, g), count in sorted(hist.items()):
        lo = g * args.bin_width
        print(f"  {kind} group {g} [{lo:g}, {lo + args.bin_width:g}) m/s: {count}")
    return 0


def _snapshot_writer(scenario, svg_dir: Path, every: int):
    from .plotting import render_scene

    def on_frame(sim):
        if sim.frame % every:
            return
        render_scene(
            scenario,
            [a.position for a in sim.agents],
            [a.heading for a in sim.agents],
            [a.shape for a in sim.agents],
            [a.kind for a in sim.agents],
            sim.time,
            svg_dir / f"frame_{sim.frame:06d}.svg",
        )

    return on_frame


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    dt = _dt(args)
    p = scenario.params
    states = []
    for path in args.dataset:
        try:
            trajs = load_trajectories(path)
        except DatasetError as exc:
            raise DatasetError(f"{path}: {exc}") from None
        for tr in trajs:
            states.extend(estimate_states(tr, dt, p.delta))
    dataset = group_by_speed(states, p.bin_width)

    on_frame = None
    if args.svg_dir is not None:
        args.svg_dir.mkdir(parents=True, exist_ok=True)
        on_frame = _snapshot_writer(scenario, args.svg_dir, args.snapshot_every)

    log = run(scenario, dataset, args.frames, seed=args.seed, workers=args.workers, on_frame=on_frame)
    with open(args.out, "w", newline="") as fh:
        log.write_csv(fh)
    print(f"frames: {args.frames}  agents: {len(log.kinds)}  checksum: {log.checksum()}")
    return 0


def cmd_bench(args) -> int:
    from .bench import bench_parallel, bench_scaling

    report = bench_scaling(args.sizes, args.frames, workers=args.workers[0], brute_ceiling=args.brute_ceiling)
    if len(args.workers) > 1:
        par = bench_parallel(max(args.sizes), args.workers, args.frames)
        report.rows.extend(par.rows)
        report.metadata["checksum"] = par.metadata["checksum"]
    print(report.table())
    print()
    report.write_csv(sys.stdout)
    if args.out is not None:
        with open(args.out, "w", newline="") as fh:
            report.write_csv(fh)
    if args.plot is not None:
        from .plotting import plot_bench

        plot_bench(report, args.plot)
    return 0


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "bench": cmd_bench}


def _fail(category: str, message: str, code: int = 1) -> int:
    print(f"{ERROR_PREFIX}: {category}: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    try:
        return COMMANDS[args.command](args)
    except DatasetError as exc:
        return _fail("dataset", str(exc))
    except ScenarioError as exc:
        return _fail("scenario", str(exc))
    except InitializationError as exc:
        return _fail("initialization", str(exc))
    except SolverError as exc:
        return _fail("solver", str(exc))
    except OSError as exc:
        return _fail("io", f"{exc.filename or ''}: {exc.strerror or exc}".lstrip(": "))


if __name__ == "__main__":
    sys.exit(main())
