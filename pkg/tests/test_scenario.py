import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixsim.dataset import group_by_speed, synthesize_dataset
from mixsim.energy import EnergyWeights
from mixsim.geometry import Circle, Rect, clearance, shape_params
from mixsim.scenario import (
    AgentSpec,
    CirclePlacement,
    CrossingGoal,
    InitializationError,
    OppositeSideGoal,
    Params,
    PointGoal,
    RegionPlacement,
    Road,
    RoadFollowGoal,
    RoadsidePlacement,
    Scenario,
    ScenarioError,
    TrafficLight,
    advance_modes,
    control_direction,
    dump_scenario,
    initialize_agents,
    light_gate,
    load_scenario,
)
from mixsim.state import AgentState

FIXTURES = ["crowd1", "crowd2", "crowd3", "traffic1", "traffic2", "traffic3"]

MINIMAL = b"""
bounds = [0.0, 0.0, 20.0, 20.0]

[weights.pedestrian]
direction = 1.0

[agents.walkers]
kind = "pedestrian"
count = 3
shape = "circle"
radius = 0.3
placement = { type = "region", rect = [0.0, 0.0, 20.0, 20.0] }
goal = { type = "point", target = [10.0, 10.0] }
"""


def agent(spec_index=0, p=(0.0, 0.0), kind="pedestrian", shape=Circle(0.3), v=(0.0, 0.0), heading=(1.0, 0.0)):
    return AgentState(0, kind, np.array(p, dtype=float), np.array(v, dtype=float), np.zeros(2), shape,
                      heading=np.array(heading, dtype=float), spec_index=spec_index)


def scene(goal, roads=None, lights=None, kind="pedestrian", shape=Circle(0.3), placement=None, count=1):
    spec = AgentSpec("a", kind, count, shape, placement or RegionPlacement((0, 0, 1, 1)), goal)
    return Scenario((-200, -200, 200, 200), Params(), {kind: EnergyWeights()}, [spec],
                    roads=roads or {}, lights=lights or [])


def ped_dataset():
    return group_by_speed(synthesize_dataset(("pedestrian", "car"), (0.5, 2.0), count=40, seed=1))


# ------------------------------------------------------------ loading


def test_minimal_config_fills_defaults():
    sc = load_scenario(MINIMAL)
    assert sc.params == Params()
    assert sc.params.d_a_max == 3.0 * sc.params.d_a
    assert sc.total_agents == 3
    w = sc.weights["pedestrian"]
    assert w.w_d == 1.0 and w.w_m1 == 1.0 and w.w_sg == 0.0


def test_missing_weights_for_used_kind():
    text = MINIMAL.replace(b"[weights.pedestrian]", b"[weights.car]")
    with pytest.raises(ScenarioError, match="weights.pedestrian"):
        load_scenario(text)


@pytest.mark.parametrize(
    "old,new,path",
    [
        (b'radius = 0.3', b'radius = 0.3\ncolour = "red"', "agents.walkers.colour"),
        (b'count = 3', b'count = 0', "agents.walkers.count"),
        (b'radius = 0.3', b'radius = -1.0', "agents.walkers.radius"),
        (b'target = [10.0, 10.0]', b'target = [10.0]', "agents.walkers.goal.target"),
        (b'kind = "pedestrian"', b'kind = "horse"', "agents.walkers.kind"),
        (b'[weights.pedestrian]', b'[params]\nT = 0\n[weights.pedestrian]', "params.T"),
        (b'[weights.pedestrian]', b'[params]\nspeed = 2\n[weights.pedestrian]', "params.speed"),
    ],
)
def test_validation_errors_name_the_path(old, new, path):
    with pytest.raises(ScenarioError, match=path.replace(".", r"\.")):
        load_scenario(MINIMAL.replace(old, new))


def test_missing_required_key():
    with pytest.raises(ScenarioError, match="bounds: missing"):
        load_scenario(MINIMAL.replace(b"bounds = [0.0, 0.0, 20.0, 20.0]", b""))


def test_syntax_error_reported():
    with pytest.raises(ScenarioError, match="syntax"):
        load_scenario(b"bounds = [")


@pytest.mark.parametrize("name", FIXTURES)
def test_dump_is_a_fixed_point(name, data_dir):
    once = dump_scenario(load_scenario(data_dir / f"{name}.scn"))
    twice = dump_scenario(load_scenario(once.encode()))
    assert once == twice


def test_crowd2_has_two_opposing_groups_of_fifty(crowd2):
    assert [(s.count, s.group) for s in crowd2.agent_specs] == [(50, "east"), (50, "west")]
    east, west = crowd2.agent_specs
    assert np.dot(east.goal.direction, west.goal.direction) == -1.0
    assert isinstance(east.placement, RegionPlacement)


TABLE = {
    "crowd1": {"pedestrian": (1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.5)},
    "crowd2": {"pedestrian": (1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.0, 1.5)},
    "crowd3": {"pedestrian": (0.83, 1.0, 0.67, 0.67, 0.0, 0.83, 0.0, 1.0)},
    "traffic1": {"car": (0.5, 0.5, 1.0, 1.0, 2.0, 3.0, 10.0, 10.0)},
    "traffic2": {
        "pedestrian": (1.0, 1.0, 1.0, 1.0, 0.0, 1.5, 1.0, 10.0),
        "car": (5.0, 1.0, 1.0, 1.0, 2.0, 5.0, 1.0, 10.0),
    },
    "traffic3": {
        "pedestrian": (10.0, 1.0, 1.0, 1.0, 0.0, 5.0, 10.0, 5.0),
        "bicycle": (10.0, 1.0, 1.0, 1.0, 0.0, 5.0, 10.0, 5.0),
        "tricycle": (0.5, 0.5, 1.0, 1.0, 2.0, 3.0, 1.0, 10.0),
        "car": (0.5, 0.5, 1.0, 1.0, 2.0, 3.0, 1.0, 10.0),
    },
}
COLUMNS = ("continuity_dir", "continuity_len", "collision_ins", "collision_anti",
           "attraction", "direction", "lane", "speed")


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_weights_match_table(name, data_dir):
    sc = load_scenario(data_dir / f"{name}.scn")
    assert set(sc.weights) == set(TABLE[name])
    for kind, row in TABLE[name].items():
        table = sc.weights[kind].to_table()
        assert tuple(table[c] for c in COLUMNS) == row


# ------------------------------------------------------------ control direction


def test_point_goal_direction():
    sc = scene(PointGoal((3.0, 4.0)))
    assert np.allclose(control_direction(sc, agent()), [0.6, 0.8])
    assert np.array_equal(control_direction(sc, agent(p=(3.0, 4.0))), [0.0, 0.0])


def test_road_follow_direction():
    road = Road("r", [(0, 0), (100, 0)])
    sc = scene(RoadFollowGoal("r"), roads={"r": road})
    assert np.array_equal(control_direction(sc, agent(p=(40.0, 1.0))), [1.0, 0.0])


def turn_scene():
    roads = {"in": Road("in", [(-50, 0), (-8, 0)], 2), "out": Road("out", [(0, 8), (0, 50)], 2)}
    return scene(CrossingGoal("in", "out"), roads=roads, kind="car", shape=Rect(2, 0.9))


def test_halfway_through_turn():
    sc = turn_scene()
    got = control_direction(sc, agent(p=(-4.0, 4.0), kind="car"))
    assert np.allclose(got, [math.sqrt(0.5), math.sqrt(0.5)], atol=1e-12)
    # progress oracle: nearest of many chord samples to p
    s = np.linspace(0, 1, 100_001)
    chord = np.array([-8.0, 0.0]) + s[:, None] * np.array([8.0, 8.0])
    lam = s[np.argmin(np.hypot(*(chord - [-4.0, 4.0]).T))]
    blend = (1 - lam) * np.array([1.0, 0.0]) + lam * np.array([0.0, 1.0])
    assert np.allclose(got, blend / np.linalg.norm(blend), atol=1e-5)


def test_turn_before_and_after_intersection():
    sc = turn_scene()
    assert np.allclose(control_direction(sc, agent(p=(-30.0, 1.0), kind="car")), [1.0, 0.0])
    assert np.allclose(control_direction(sc, agent(p=(1.0, 30.0), kind="car")), [0.0, 1.0])


def test_crossing_pedestrian_turns_perpendicular():
    road = Road("r", [(0, 0), (100, 0)], 2)
    sc = scene(CrossingGoal("r"), roads={"r": road})
    ag = agent(p=(10.0, 6.0))
    assert np.allclose(control_direction(sc, ag), [1.0, 0.0])
    ag.phase, ag.cross_sign = 1, -1.0
    assert np.allclose(control_direction(sc, ag), [0.0, -1.0])


def test_crossing_decision_is_keyed_by_seed_agent_frame():
    road = Road("r", [(0, 0), (100, 0)], 2)
    sc = scene(CrossingGoal("r"), roads={"r": road})
    sc.params = Params(cross_probability=1.0)
    ag = agent(p=(10.0, 6.0))
    advance_modes(sc, [ag], 0)
    assert ag.phase == 1 and ag.cross_sign == -1.0
    ag.position = np.array([10.0, -6.0])
    advance_modes(sc, [ag], 1)
    assert ag.phase == 2


@settings(max_examples=200, deadline=None)
@given(st.floats(-60, 60), st.floats(-60, 60), st.sampled_from(["point", "road", "side", "turn", "cross"]))
def test_control_direction_is_unit_or_zero(x, y, mode):
    roads = {"in": Road("in", [(-50, 0), (-8, 0)], 2), "out": Road("out", [(0, 8), (0, 50)], 2)}
    goal = {
        "point": PointGoal((1.0, 2.0)),
        "road": RoadFollowGoal("in"),
        "side": OppositeSideGoal((0.6, 0.8), 10.0),
        "turn": CrossingGoal("in", "out"),
        "cross": CrossingGoal("in"),
    }[mode]
    sc = scene(goal, roads=roads)
    n = float(np.linalg.norm(control_direction(sc, agent(p=(x, y)))))
    assert n == 0.0 or abs(n - 1.0) <= 1e-9


def test_many_random_queries_are_unit_or_zero():
    rng = np.random.default_rng(4)
    roads = {"in": Road("in", [(-50, 0), (-20, 5), (-8, 0)], 2), "out": Road("out", [(0, 8), (0, 50)], 2)}
    goals = [PointGoal((1.0, 2.0)), RoadFollowGoal("in"), OppositeSideGoal((1.0, 0.0), 3.0),
             CrossingGoal("in", "out"), CrossingGoal("in")]
    for goal in goals:
        sc = scene(goal, roads=roads)
        for p in rng.uniform(-60, 60, (10_000, 2)):
            n = float(np.linalg.norm(control_direction(sc, agent(p=p))))
            assert n == 0.0 or abs(n - 1.0) <= 1e-9


# ------------------------------------------------------------ initialization


def test_initialization_is_deterministic(crowd2, pedestrian_dataset):
    a = initialize_agents(crowd2, pedestrian_dataset)
    b = initialize_agents(crowd2, pedestrian_dataset)
    for x, y in zip(a, b):
        assert np.array_equal(x.position, y.position) and np.array_equal(x.velocity, y.velocity)


def test_crowd2_initial_sides(crowd2, pedestrian_dataset):
    agents = initialize_agents(crowd2, pedestrian_dataset)
    assert len(agents) == 100
    assert all(a.position[0] <= 11 for a in agents[:50])
    assert all(a.position[0] >= 29 for a in agents[50:])


def test_zero_radius_circle_placement_fails():
    spec = AgentSpec("pair", "pedestrian", 2, Circle(0.3), CirclePlacement((0.0, 0.0), 0.0), PointGoal((5, 5)))
    sc = Scenario((-10, -10, 10, 10), Params(), {"pedestrian": EnergyWeights()}, [spec])
    with pytest.raises(InitializationError) as info:
        initialize_agents(sc, ped_dataset())
    assert info.value.placed == 1 and info.value.requested == 2


@pytest.mark.parametrize("name", FIXTURES)
def test_fixture_agents_never_overlap(name, data_dir):
    from mixsim.dataset import load_dataset

    sc = load_scenario(data_dir / f"{name}.scn")
    files = ["mixed.csv"] if len(sc.kinds) > 2 else (["cars.csv"] if sc.kinds == ["car"] else
                                                      ["pedestrians.csv", "cars.csv"])
    ds = load_dataset([data_dir / f for f in files], dt=0.1)
    agents = initialize_agents(sc, ds)
    assert len(agents) == sc.total_agents
    params = [shape_params(a.shape) for a in agents]
    for i, ai in enumerate(agents):
        for j in range(i + 1, len(agents)):
            aj = agents[j]
            d = clearance(ai.position, np.zeros(2), *params[i], ai.heading,
                          aj.position, np.zeros(2), *params[j], aj.heading, 0.0)
            assert d > 0


def test_missing_kind_in_dataset():
    sc = load_scenario(MINIMAL)
    cars = group_by_speed(synthesize_dataset(("car",), (0, 5), count=10))
    with pytest.raises(ScenarioError):
        initialize_agents(sc, cars)


def test_target_speed_defaults_to_initial_speed():
    sc = load_scenario(MINIMAL)
    for a in initialize_agents(sc, ped_dataset()):
        assert a.target_speed == pytest.approx(np.linalg.norm(a.velocity))


def test_roadside_placement_on_lanes():
    road = Road("r", [(0, 0), (200, 0)], 2, 3.5)
    sc = scene(RoadFollowGoal("r"), roads={"r": road}, kind="car", shape=Rect(2.2, 0.9),
               placement=RoadsidePlacement("r"), count=10)
    for a in initialize_agents(sc, ped_dataset()):
        assert abs(a.position[1]) == pytest.approx(1.75)
        assert np.allclose(a.heading, [1.0, 0.0])


# ------------------------------------------------------------ traffic lights


def light_scene(cycle):
    road = Road("r", [(-200, 0), (0, 0)], 2)
    light = TrafficLight("l", [(-10, -3.5), (-10, 3.5)], cycle, "r")
    return scene(RoadFollowGoal("r"), roads={"r": road}, lights=[light], kind="car", shape=Rect(2.2, 0.9))


def test_green_light_no_directive():
    sc = light_scene([("green", 10.0), ("red", 10.0)])
    assert light_gate(sc, agent(p=(-13.0, 1.75), kind="car", v=(5.0, 0.0)), t=1.0) is None


def test_red_light_far_agent_no_directive():
    sc = light_scene([("red", 10.0)])
    assert light_gate(sc, agent(p=(-110.0, 1.75), kind="car", v=(1.0, 0.0)), t=1.0) is None


def test_red_light_adjacent_agent_gets_stop():
    sc = light_scene([("red", 10.0)])
    out = light_gate(sc, agent(p=(-13.0, 1.75), kind="car", shape=Rect(2.2, 0.9), v=(1.0, 0.0)), t=1.0)
    assert out is not None
    assert np.allclose(out.obstacles.positions, [[-10.0, 0.0]])
    assert not out.suppress_attraction


def test_agent_past_the_line_ignores_it():
    sc = light_scene([("red", 10.0)])
    assert light_gate(sc, agent(p=(-5.0, 1.75), kind="car", v=(1.0, 0.0)), t=1.0) is None


def test_light_phase_cycles():
    light = TrafficLight("l", [(0, 0), (0, 1)], [("green", 15.0), ("red", 10.0)], "r")
    assert [light.phase(t) for t in (0, 14.9, 15, 24.9, 25, 40)] == ["green", "green", "red", "red", "green", "red"]
    with pytest.raises(ScenarioError):
        TrafficLight("bad", [(0, 0), (0, 1)], [("amber", 1.0)], "r")


def test_pedestrian_ahead_stops_vehicle_and_cancels_attraction():
    from mixsim.energy import point_bodies

    sc = light_scene([("green", 10.0)])
    car = agent(p=(-50.0, 1.75), kind="car", shape=Rect(2.2, 0.9), v=(5.0, 0.0))
    ped = point_bodies([3], [(-45.0, 1.5)], 0.25)
    out = light_gate(sc, car, others=(ped, np.array(["pedestrian"])))
    assert out is not None and out.suppress_attraction
    assert out.obstacles.ids.tolist() == [3]
    behind = point_bodies([4], [(-60.0, 1.5)], 0.25)
    assert light_gate(sc, car, others=(behind, np.array(["pedestrian"]))) is None
