import random

import pytest
from hypothesis import given, settings, strategies as st

from normrl.gridworld import (
    BACKWARD,
    FORWARD,
    LEFT,
    NOOP,
    RIGHT,
    AgentState,
    Command,
    ConfigError,
    GridWorld,
    ObjectState,
    ScenarioConfig,
    invoke,
    parse_map,
    reset,
    SCENARIOS,
)
from normrl.trajectory import Trajectory, active, executed, has, position, used_obj


def open_board(agents, objects=None, size=9, caps=None):
    blocked = {(x, y) for x in range(size) for y in range(size) if x in (0, size - 1) or y in (0, size - 1)}
    agents = {n: AgentState(cell, h) for n, (cell, h) in agents.items()}
    objects = {n: ObjectState(cell, cat, cat == "item") for n, (cell, cat) in (objects or {}).items()}
    caps = caps or {n: ("pick", "transfer", "exit") for n in agents}
    return GridWorld(size, size, blocked, agents, objects, caps)


def state(world):
    return (
        world.t,
        {n: (a.cell, a.heading, a.held) for n, a in world.agents.items()},
        {n: o.cell for n, o in world.objects.items()},
    )


def test_reset_deterministic():
    cfg = ScenarioConfig("store-small", seed=42)
    w1, a1 = reset(cfg)
    w2, a2 = reset(cfg)
    assert state(w1) == state(w2) and a1 == a2
    _, _, _, slots, _ = parse_map(SCENARIOS["store-small"]["map"])
    items = [o for o in w1.objects.values() if o.mobile]
    assert len(items) == 3 and len({o.cell for o in items}) == 3
    assert all(o.cell in slots for o in items)
    assert w1.agents["robby"].cell == SCENARIOS["store-small"]["spawns"]["robby"][0]
    assert w1.t == 0


def test_reset_seed_changes_items():
    cells = {tuple(sorted((n, o.cell) for n, o in reset(ScenarioConfig("store-small"), seed=s)[0].objects.items()))
             for s in range(10)}
    assert len(cells) > 1


def test_too_many_items():
    items = tuple(f"item{i}" for i in range(200))
    with pytest.raises(ConfigError):
        reset(ScenarioConfig("store-full", items=items))


def test_unknown_scenario_and_grid_mismatch():
    with pytest.raises(ConfigError):
        ScenarioConfig("mall")
    with pytest.raises(ConfigError):
        reset(ScenarioConfig("store-small", grid=(10, 10)))
    with pytest.raises(ConfigError):
        ScenarioConfig.from_dict({"scenario": "store-small", "colour": "red"})


def test_factory_items_arrive_over_time():
    world, init = reset(ScenarioConfig("factory", seed=3))
    path = world.conveyor.path
    seen = {o.cell for o in world.objects.values() if o.mobile} - {None}
    assert seen <= {path[0]}
    for _ in range(60):
        world.step({})
    on_belt = [o.cell for o in world.objects.values() if o.mobile and o.cell is not None]
    assert on_belt and all(c in path for c in on_belt)


def test_factory_static_variant():
    world, _ = reset(ScenarioConfig("factory", seed=3, static_items=True))
    before = {n: o.cell for n, o in world.objects.items()}
    for _ in range(10):
        world.step({})
    assert {n: o.cell for n, o in world.objects.items()} == before
    assert all(o.cell is not None for o in world.objects.values())


def test_pick_faced_item():
    world = open_board({"robby": ((4, 4), "N")}, {"battery": ((4, 3), "item")})
    world.initial_assignments()
    out = world.step({"robby": invoke("pick")})
    assert world.agents["robby"].held == "battery"
    assert out[active("pick", "robby")] is True
    assert out[used_obj("pick", "robby")] == "battery"
    assert out[has("robby", "battery")] is True
    assert out[position("battery")] is None
    out = world.step({})
    assert out[active("pick", "robby")] is False
    assert out[used_obj("pick", "robby")] is None


def test_pick_nothing():
    world = open_board({"robby": ((4, 4), "N")}, {"battery": ((2, 2), "item")})
    world.initial_assignments()
    out = world.step({"robby": invoke("pick")})
    assert out[active("pick", "robby")] is True
    assert used_obj("pick", "robby") not in out
    assert world.agents["robby"].held is None
    assert executed("pick", "robby") not in out


def test_transfer_reports_marker_and_exit_needs_door():
    world = open_board({"robby": ((4, 4), "N")}, {"register": ((4, 4), "register"), "door": ((6, 6), "door")})
    world.initial_assignments()
    out = world.step({"robby": invoke("transfer")})
    assert out[used_obj("transfer", "robby")] == "register"
    assert out[executed("transfer", "robby")] is True
    out = world.step({"robby": invoke("exit")})
    assert out[active("exit", "robby")] is True
    assert executed("exit", "robby") not in out


def test_incapable_behavior_rejected():
    world = open_board({"robby": ((4, 4), "N")})
    with pytest.raises(ValueError):
        world.step({"robby": invoke("lift")})
    with pytest.raises(KeyError):
        world.step({"ghost": NOOP})


def test_command_validation():
    with pytest.raises(ValueError):
        Command("jump")
    with pytest.raises(ValueError):
        Command("invoke")


def test_walls_and_turns():
    world = open_board({"robby": ((1, 1), "N")})
    world.step({"robby": FORWARD})
    assert world.agents["robby"].cell == (1, 1)
    world.step({"robby": RIGHT})
    world.step({"robby": FORWARD})
    assert world.agents["robby"].cell == (2, 1)
    world.step({"robby": LEFT})
    world.step({"robby": BACKWARD})
    assert world.agents["robby"].cell == (2, 2)


def test_same_cell_conflict_lower_id_wins():
    world = open_board({"a": ((3, 4), "E"), "b": ((5, 4), "W")})
    world.step({"a": FORWARD, "b": FORWARD})
    assert world.agents["a"].cell == (4, 4)
    assert world.agents["b"].cell == (5, 4)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_joint_step_independent_of_command_order(seed):
    rng = random.Random(seed)
    cmds = [FORWARD, BACKWARD, LEFT, RIGHT, NOOP]
    cells = rng.sample([(x, y) for x in range(1, 5) for y in range(1, 5)], 3)
    make = lambda: open_board({n: (c, rng2.choice("NESW")) for n, c in zip("abc", cells)}, size=6)
    rng2 = random.Random(seed)
    w1 = make()
    rng2 = random.Random(seed)
    w2 = make()
    for _ in range(10):
        joint = {n: rng.choice(cmds) for n in "abc"}
        w1.step(joint)
        w2.step(dict(reversed(list(joint.items()))))
        assert state(w1) == state(w2)
        assert len({a.cell for a in w1.agents.values()}) == 3


def test_ray_wall_ahead():
    world = open_board({"robby": ((4, 3), "N")})
    assert world.ray_sense("robby")[3] == ("wall", None, 3)


def test_ray_beyond_range():
    world = open_board({"robby": ((4, 19), "N")}, size=30)
    assert world.ray_sense("robby", ray_range=10)[3] == (None, None, None)


def test_ray_plus_30_hits_battery():
    # +30 degrees from north: offsets (1,-1), (1,-2), (2,-3)
    world = open_board({"robby": ((4, 7), "N")}, {"battery": ((6, 4), "item")}, size=12)
    assert world.ray_sense("robby")[4] == ("object", "battery", 3)


def test_rays_rotate_with_heading():
    world = open_board({"robby": ((4, 4), "E")}, {"battery": ((6, 4), "item")})
    assert world.ray_sense("robby")[3] == ("object", "battery", 2)


def test_periodic_agent_skips_steps():
    world = open_board({"forky": ((4, 4), "N")}, caps={"forky": ("lift",)})
    world.agents["forky"].period = 2
    world.step({"forky": FORWARD})
    world.step({"forky": FORWARD})
    assert world.agents["forky"].cell == (4, 3)


def test_changed_assignments_rebuild_state():
    world, init = reset(ScenarioConfig("store-small", seed=1))
    traj = Trajectory(0).record(init)
    rng = random.Random(0)
    for _ in range(40):
        cmd = rng.choice([FORWARD, LEFT, RIGHT, invoke("pick"), invoke("transfer")])
        traj.record(world.step({"robby": cmd}))
        assert traj.current(position("robby")) == world.agents["robby"].cell
        for name, ob in world.objects.items():
            assert traj.current(position(name)) == ob.cell
