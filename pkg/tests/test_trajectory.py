import random

import pytest
from hypothesis import given, strategies as st

from normrl.trajectory import (
    TimeRangeError,
    Trajectory,
    TrajectoryError,
    UnknownVariableError,
    ValueTypeError,
    active,
    position,
    read_trace,
    used_obj,
)

PICK = active("pick", "robby")


def bool_track(values):
    traj = Trajectory(0)
    for t, v in enumerate(values):
        traj.record({PICK: v}, t=t)
    return traj


def test_run_split():
    traj = bool_track([False] * 5 + [True])
    assert traj.runs(PICK) == [(0, 4, False), (5, 5, True)]


def test_run_merge():
    traj = bool_track([False] * 5)
    traj.record({PICK: False})
    assert traj.runs(PICK) == [(0, 5, False)]


def test_type_mismatch():
    traj = Trajectory(0)
    with pytest.raises(ValueTypeError):
        traj.record({PICK: (1, 2)})
    with pytest.raises(ValueTypeError):
        traj.record({position("robby"): True})
    with pytest.raises(ValueTypeError):
        traj.record({used_obj("pick", "robby"): 3})


def test_value_at():
    traj = bool_track([False] * 5 + [True])
    assert traj.value_at(PICK, 3) is False
    assert traj.value_at(PICK, 5) is True
    with pytest.raises(TimeRangeError):
        traj.value_at(PICK, 9)
    with pytest.raises(UnknownVariableError):
        traj.value_at(active("pick", "kobby"), 0, strict=True)
    assert traj.value_at(active("pick", "kobby"), 0) is False


def test_activation_times():
    assert bool_track([False, False, True] + [False] * 5).activation_times("pick", "robby") == [2]
    assert bool_track([False] * 4).activation_times("pick", "robby") == []
    assert bool_track([True, False, False, False, True]).activation_times("pick", "robby") == [0, 4]


def test_absent_variable_keeps_value():
    traj = Trajectory(0)
    traj.record({position("robby"): (1, 1)})
    traj.record({})
    assert traj.value_at(position("robby"), 1) == (1, 1)


def test_late_variable_backfills_default():
    traj = Trajectory(0)
    traj.record({})
    traj.record({PICK: True})
    assert traj.runs(PICK) == [(0, 0, False), (1, 1, True)]


def test_time_gap_rejected():
    traj = Trajectory(0)
    traj.record({})
    with pytest.raises(TrajectoryError):
        traj.record({}, t=5)


def test_trace_errors_carry_line():
    with pytest.raises(TrajectoryError, match="line 2"):
        read_trace(['{"t": 0, "assignments": []}', "not json"])


@given(st.lists(st.booleans(), min_size=1, max_size=60), st.integers(-5, 5))
def test_runs_match_step_scan(values, t0):
    traj = Trajectory(t0)
    for v in values:
        traj.record({PICK: v})
    runs = traj.runs(PICK)
    # runs tile the interval, are maximal, and agree with the raw values
    assert runs[0][0] == t0 and runs[-1][1] == t0 + len(values) - 1
    for (s, e, v), nxt in zip(runs, runs[1:] + [None]):
        assert all(values[t - t0] == v for t in range(s, e + 1))
        if nxt is not None:
            assert nxt[0] == e + 1 and nxt[2] != v
    assert traj.activation_times("pick", "robby") == [t0 + i for i, v in enumerate(values) if v]


def test_jsonl_round_trip():
    rng = random.Random(3)
    traj = Trajectory(2)
    for _ in range(30):
        traj.record(
            {
                PICK: rng.random() < 0.3,
                used_obj("pick", "robby"): rng.choice([None, "battery", "axe"]),
                position("robby"): (rng.randrange(5), rng.randrange(5)),
            }
        )
    back = Trajectory.from_jsonl(traj.to_jsonl())
    assert back.t_start == 2 and len(back) == 30
    for var in traj.variables:
        assert back.runs(var) == traj.runs(var)
