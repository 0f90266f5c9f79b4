"""Regenerate the trajectory CSVs shipped in src/mixsim/data."""

from pathlib import Path

from mixsim.dataset import synthesize_trajectories, write_trajectories

DATA = Path(__file__).resolve().parents[1] / "src" / "mixsim" / "data"

# kind, agents, frames, speed mean, speed sd, lateral sd
POPULATIONS = {
    "pedestrian": (12, 30, 1.3, 0.35, 0.3),
    "bicycle": (6, 30, 4.0, 0.8, 0.2),
    "tricycle": (6, 30, 3.0, 0.6, 0.2),
    "car": (8, 30, 8.0, 2.5, 0.15),
}


def build(kinds, seed):
    trajs = []
    next_id = 1
    for k, kind in enumerate(kinds):
        agents, frames, mean, sd, lat = POPULATIONS[kind]
        trajs += synthesize_trajectories(
            kind, agents, frames, dt=0.1, speed_mean=mean, speed_sd=sd,
            lateral_sd=lat, seed=seed + k, first_id=next_id,
        )
        next_id += agents
    return trajs


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    for name, kinds in {
        "pedestrians.csv": ["pedestrian"],
        "cars.csv": ["car"],
        "mixed.csv": ["pedestrian", "bicycle", "tricycle", "car"],
    }.items():
        with open(DATA / name, "w", newline="") as fh:
            write_trajectories(build(kinds, seed=7), fh)


if __name__ == "__main__":
    main()
