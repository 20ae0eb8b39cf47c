"""Trajectories stored as constant-value runs per state variable."""
from __future__ import annotations

import json
from functools import lru_cache
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Union

Coord = tuple[int, int]
Value = Union[bool, str, Coord, None]

# kind -> subject arity
KINDS: dict[str, int] = {
    "active": 2,  # (behavior, agent)
    "usedObj": 2,  # (behavior, agent)
    "executed": 2,  # (behavior, agent)
    "position": 1,  # (entity,)
    "near": 2,  # (agent, object)
    "has": 2,  # (agent, object)
}
BOOLEAN_KINDS = frozenset({"active", "executed", "near", "has"})


class TrajectoryError(Exception):
    pass


class ValueTypeError(TrajectoryError, TypeError):
    pass


class TimeRangeError(TrajectoryError, IndexError):
    pass


class UnknownVariableError(TrajectoryError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


@dataclass(frozen=True)
class StateVariable:
    kind: str
    subject: tuple[str, ...]

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown state-variable kind {self.kind!r}")
        subject = tuple(self.subject)
        object.__setattr__(self, "subject", subject)
        if len(subject) != KINDS[self.kind]:
            raise ValueError(f"{self.kind} takes {KINDS[self.kind]} subject(s), got {subject}")
        object.__setattr__(self, "_hash", hash((self.kind, subject)))

    def __hash__(self) -> int:
        return self._hash

    def __str__(self) -> str:
        return f"{self.kind}({','.join(self.subject)})"


@lru_cache(maxsize=None)
def active(behavior: str, agent: str) -> StateVariable:
    return StateVariable("active", (behavior, agent))


@lru_cache(maxsize=None)
def used_obj(behavior: str, agent: str) -> StateVariable:
    return StateVariable("usedObj", (behavior, agent))


@lru_cache(maxsize=None)
def executed(behavior: str, agent: str) -> StateVariable:
    return StateVariable("executed", (behavior, agent))


@lru_cache(maxsize=None)
def position(entity: str) -> StateVariable:
    return StateVariable("position", (entity,))


@lru_cache(maxsize=None)
def near(agent: str, obj: str) -> StateVariable:
    return StateVariable("near", (agent, obj))


@lru_cache(maxsize=None)
def has(agent: str, obj: str) -> StateVariable:
    return StateVariable("has", (agent, obj))


def default_value(var: StateVariable) -> Value:
    return False if var.kind in BOOLEAN_KINDS else None


def check_value(var: StateVariable, value) -> Value:
    """Validate ``value`` for ``var`` and return it in canonical form."""
    if var.kind in BOOLEAN_KINDS:
        if not isinstance(value, bool):
            raise ValueTypeError(f"{var} expects a boolean, got {value!r}")
        return value
    if var.kind == "usedObj":
        if value is not None and not isinstance(value, str):
            raise ValueTypeError(f"{var} expects an object id or none, got {value!r}")
        return value
    # position
    if value is None:
        return None
    if (
        isinstance(value, (tuple, list))
        and len(value) == 2
        and all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        return (value[0], value[1])
    raise ValueTypeError(f"{var} expects a (col, row) coordinate, got {value!r}")


class Trajectory:
    """Time-indexed state-variable values over ``[t_start, t_now]``.

    Each track is a list of maximal runs, kept as parallel ``starts``/``values``
    lists; a run ends where the next one starts (or at ``t_now``).  Variables
    never recorded read as their default (``False`` / ``None``).
    """

    def __init__(self, t_start: int = 0):
        self.t_start = t_start
        self.t_now: int | None = None
        self._starts: dict[StateVariable, list[int]] = {}
        self._values: dict[StateVariable, list[Value]] = {}

    def __len__(self) -> int:
        return 0 if self.t_now is None else self.t_now - self.t_start + 1

    @property
    def empty(self) -> bool:
        return self.t_now is None

    @property
    def variables(self) -> list[StateVariable]:
        return list(self._starts)

    def record(self, assignments: Mapping[StateVariable, Value], t: int | None = None) -> "Trajectory":
        """Append one time step; absent variables keep their previous value."""
        expected = self.t_start if self.t_now is None else self.t_now + 1
        if t is not None and t != expected:
            raise TrajectoryError(f"expected step t={expected}, got t={t}")
        checked = [(var, check_value(var, val)) for var, val in assignments.items()]
        for var, val in checked:
            starts = self._starts.get(var)
            if starts is None:
                default = default_value(var)
                if expected == self.t_start or val == default:
                    self._starts[var] = [self.t_start]
                    self._values[var] = [val]
                else:
                    # first seen after the start: backfill the default run
                    self._starts[var] = [self.t_start, expected]
                    self._values[var] = [default, val]
                continue
            values = self._values[var]
            if values[-1] != val:
                starts.append(expected)
                values.append(val)
        self.t_now = expected
        return self

    def _locate(self, var: StateVariable, t: int) -> Value:
        starts = self._starts.get(var)
        if starts is None:
            return default_value(var)
        i = bisect_right(starts, t) - 1
        if i < 0:
            return default_value(var)
        return self._values[var][i]

    def value_at(self, var: StateVariable, t: int, *, strict: bool = False) -> Value:
        if self.t_now is None or not (self.t_start <= t <= self.t_now):
            span = "empty" if self.t_now is None else f"[{self.t_start}, {self.t_now}]"
            raise TimeRangeError(f"time {t} outside trajectory interval {span}")
        if strict and var not in self._starts:
            raise UnknownVariableError(f"variable {var} is not tracked")
        return self._locate(var, t)

    def current(self, var: StateVariable) -> Value:
        """Value at ``t_now`` (default when untracked)."""
        values = self._values.get(var)
        return default_value(var) if values is None else values[-1]

    def runs(self, var: StateVariable) -> list[tuple[int, int, Value]]:
        if self.t_now is None:
            return []
        starts = self._starts.get(var)
        if starts is None:
            return [(self.t_start, self.t_now, default_value(var))]
        values = self._values[var]
        ends = [s - 1 for s in starts[1:]] + [self.t_now]
        return list(zip(starts, ends, values))

    def activation_times(self, behavior: str, agent: str) -> list[int]:
        var = active(behavior, agent)
        out: list[int] = []
        for start, end, value in self.runs(var):
            if value:
                out.extend(range(start, end + 1))
        return out

    def snapshot(self, t: int) -> dict[StateVariable, Value]:
        return {var: self.value_at(var, t) for var in self._starts}

    # -- JSON-lines trace format ------------------------------------------

    def iter_steps(self) -> Iterator[tuple[int, dict[StateVariable, Value]]]:
        """Yield ``(t, changed assignments)``; the first step carries every variable."""
        if self.t_now is None:
            return
        pointers = {var: 0 for var in self._starts}
        for t in range(self.t_start, self.t_now + 1):
            changed = {}
            for var, starts in self._starts.items():
                i = pointers[var]
                if t == self.t_start:
                    changed[var] = self._locate(var, t)
                    if starts[0] == t:
                        pointers[var] = 1
                elif i < len(starts) and starts[i] == t:
                    changed[var] = self._values[var][i]
                    pointers[var] = i + 1
            yield t, changed

    def to_jsonl(self) -> str:
        lines = []
        for t, changed in self.iter_steps():
            lines.append(
                json.dumps(
                    {
                        "t": t,
                        "assignments": [
                            {"kind": v.kind, "subject": list(v.subject), "value": _encode_value(val)}
                            for v, val in changed.items()
                        ],
                    },
                    separators=(",", ":"),
                )
            )
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_jsonl(cls, text: str) -> "Trajectory":
        return read_trace(text.splitlines())


def _encode_value(value: Value):
    return list(value) if isinstance(value, tuple) else value


def read_trace(lines: Iterable[str]) -> Trajectory:
    """Parse a JSON-lines trace; errors carry the 1-based line number."""
    traj: Trajectory | None = None
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
            if not isinstance(doc, dict) or set(doc) != {"t", "assignments"}:
                raise ValueError("expected keys 't' and 'assignments'")
            t = doc["t"]
            if not isinstance(t, int):
                raise ValueError("'t' must be an integer")
            if traj is None:
                traj = Trajectory(t_start=t)
            assignments = {}
            for item in doc["assignments"]:
                if set(item) != {"kind", "subject", "value"}:
                    raise ValueError("assignment needs exactly kind, subject, value")
                var = StateVariable(item["kind"], tuple(item["subject"]))
                assignments[var] = item["value"]
            traj.record(assignments, t=t)
        except (ValueError, TypeError, TrajectoryError) as exc:
            raise TrajectoryError(f"trace line {lineno}: {exc}") from None
    return traj if traj is not None else Trajectory()
