"""Deterministic Store and Factory-yard gridworlds.

Cells are ``(col, row)`` with rows growing southwards.  Items sit on shelf or
conveyor cells, which agents cannot enter; markers (register, door, till,
hatch) sit on walkable floor cells.  All behaviors are atomic: an invoked
behavior is active for exactly the step it was invoked in.
"""
from __future__ import annotations

import math
import random
from functools import lru_cache
from dataclasses import dataclass, field, fields
from typing import Mapping

from .institution import DomainVocabulary
from .trajectory import StateVariable, Value, active, executed, has, near, position, used_obj


class ConfigError(ValueError):
    pass


HEADINGS = ("N", "E", "S", "W")
VECTORS = {"N": (0, -1), "E": (1, 0), "S": (0, 1), "W": (-1, 0)}

# what each domain behavior does physically
EFFECTS = {
    "pick": "grab",
    "lift": "grab",
    "transfer": "signal",
    "receive_payment": "signal",
    "leave": "signal",
    "exit": "exit",
}

RAY_ANGLES = (-90, -60, -30, 0, 30, 60, 90)
RAY_RANGE = 10


@dataclass(frozen=True)
class Command:
    kind: str  # forward | backward | left | right | noop | invoke
    behavior: str | None = None

    def __post_init__(self):
        if self.kind not in ("forward", "backward", "left", "right", "noop", "invoke"):
            raise ValueError(f"unknown command {self.kind!r}")
        if (self.kind == "invoke") != (self.behavior is not None):
            raise ValueError("invoke commands need a behavior, movement commands none")

    def __str__(self) -> str:
        return f"invoke({self.behavior})" if self.kind == "invoke" else self.kind


FORWARD = Command("forward")
BACKWARD = Command("backward")
LEFT = Command("left")
RIGHT = Command("right")
NOOP = Command("noop")


def invoke(behavior: str) -> Command:
    return Command("invoke", behavior)


@dataclass
class AgentState:
    cell: tuple[int, int]
    heading: str
    held: str | None = None
    period: int = 1  # acts on steps where t % period == 0


@dataclass
class ObjectState:
    cell: tuple[int, int] | None
    category: str
    mobile: bool


@dataclass
class Conveyor:
    path: list[tuple[int, int]]
    period: int
    static: bool
    entry: dict[str, int] = field(default_factory=dict)  # queued object -> entry time


# -- scenario maps -------------------------------------------------------------

STORE_SMALL = """\
#########
#sssssss#
#.......#
#.......#
#.......#
#R.....D#
#########
#T......#
#########"""

STORE_FULL = """\
###########
##sssssss##
#s.......s#
#s.......s#
#s.......s#
#....R....#
#.........#
#.........#
#.........#
#........D#
###########"""

FACTORY = """\
#############
#ccccccccccc#
#...........#
#...........#
#...........#
#...........#
#...........#
#...........#
#...........#
#...........#
#...........#
#H..........#
#############"""

MARKERS = {"R": "register", "D": "door", "T": "till", "H": "hatch"}

STORE_ITEMS = (
    "battery", "drill", "axe", "screwdriver", "hammer", "saw", "wrench",
    "pliers", "tape", "glue", "nails", "paint", "brush",
)

SCENARIOS = {
    "store-small": {
        "map": STORE_SMALL,
        "items": STORE_ITEMS[:3],
        "agents": ("robby",),
        "spawns": {"robby": ((4, 3), "N"), "kobby": ((1, 7), "E")},
    },
    "store-full": {
        "map": STORE_FULL,
        "items": STORE_ITEMS,
        "agents": ("robby",),
        "spawns": {"robby": ((5, 8), "N")},
    },
    "factory": {
        "map": FACTORY,
        "items": ("box1", "box2", "box3", "box4", "box5"),
        "agents": ("forky",),
        "spawns": {"forky": ((6, 6), "N")},
    },
}

CAPABILITIES = {
    "robby": ("pick", "transfer", "exit"),
    "kobby": ("receive_payment",),
    "forky": ("lift", "leave"),
}
AGENT_PERIOD = {"forky": 2}
CONVEYOR_PERIOD = 2


@dataclass
class ScenarioConfig:
    scenario: str
    grid: tuple[int, int] | None = None
    items: tuple[str, ...] | None = None
    agents: tuple[str, ...] | None = None
    max_episode_steps: int = 300
    seed: int = 0
    static_items: bool = False
    debug: bool = False

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.grid is not None:
            self.grid = tuple(self.grid)
        if self.items is not None:
            self.items = tuple(self.items)
        if self.agents is not None:
            self.agents = tuple(self.agents)
        if self.max_episode_steps < 1:
            raise ConfigError("max_episode_steps must be positive")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scenario keys {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        for k in ("grid", "items", "agents"):
            if out[k] is not None:
                out[k] = list(out[k])
        return out


class GridWorld:
    def __init__(
        self,
        width: int,
        height: int,
        blocked: set,
        agents: dict[str, AgentState],
        objects: dict[str, ObjectState],
        capabilities: Mapping[str, tuple[str, ...]] | None = None,
        conveyor: Conveyor | None = None,
        max_episode_steps: int = 300,
        rng: random.Random | None = None,
    ):
        self.width = width
        self.height = height
        self.blocked = frozenset(blocked)
        self.agents = {k: agents[k] for k in sorted(agents)}
        self.objects = dict(objects)
        self.capabilities = {a: tuple((capabilities or {}).get(a, ())) for a in self.agents}
        self.conveyor = conveyor
        self.max_episode_steps = max_episode_steps
        self.rng = rng or random.Random(0)
        self.t = 0
        self.executed: set[tuple[str, str]] = set()  # sticky (behavior, agent)
        self._check_layout()
        self._last: dict[StateVariable, Value] = {}
        self._vars = None

    # -- geometry -------------------------------------------------------------

    def _check_layout(self) -> None:
        seen = set()
        for name, ag in self.agents.items():
            if ag.cell in self.blocked or not self.in_bounds(ag.cell):
                raise ConfigError(f"agent {name} on a non-walkable cell {ag.cell}")
            if ag.cell in seen:
                raise ConfigError(f"two agents on cell {ag.cell}")
            seen.add(ag.cell)

    def in_bounds(self, cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def agent_at(self, cell) -> str | None:
        for name, ag in self.agents.items():
            if ag.cell == cell:
                return name
        return None

    def object_at(self, cell) -> str | None:
        for name, ob in self.objects.items():
            if ob.cell == cell:
                return name
        return None

    def objects_at(self, cell) -> list[str]:
        return [name for name, ob in self.objects.items() if ob.cell == cell]

    def walkable(self, cell) -> bool:
        return self.in_bounds(cell) and cell not in self.blocked

    def faced_cell(self, agent: str) -> tuple[int, int]:
        ag = self.agents[agent]
        dx, dy = VECTORS[ag.heading]
        return (ag.cell[0] + dx, ag.cell[1] + dy)

    # -- dynamics -------------------------------------------------------------

    def step(self, commands: Mapping[str, Command]) -> dict[StateVariable, Value]:
        """Advance one step and return the changed state-variable assignments."""
        unknown = set(commands) - set(self.agents)
        if unknown:
            raise KeyError(f"commands for unknown agents {sorted(unknown)}")
        acting = [a for a, ag in self.agents.items() if self.t % ag.period == 0]
        occupied = {ag.cell for ag in self.agents.values()}

        for name in acting:
            cmd = commands.get(name, NOOP)
            ag = self.agents[name]
            if cmd.kind in ("forward", "backward"):
                dx, dy = VECTORS[ag.heading]
                if cmd.kind == "backward":
                    dx, dy = -dx, -dy
                target = (ag.cell[0] + dx, ag.cell[1] + dy)
                if self.walkable(target) and target not in occupied:
                    occupied.discard(ag.cell)
                    occupied.add(target)
                    ag.cell = target
            elif cmd.kind in ("left", "right"):
                i = HEADINGS.index(ag.heading)
                ag.heading = HEADINGS[(i + (1 if cmd.kind == "right" else -1)) % 4]

        fired: dict[tuple[str, str], str | None] = {}
        done: set[tuple[str, str]] = set()
        for name in acting:
            cmd = commands.get(name, NOOP)
            if cmd.kind != "invoke":
                continue
            b = cmd.behavior
            if b not in self.capabilities[name]:
                raise ValueError(f"agent {name} cannot perform {b!r}")
            ag = self.agents[name]
            effect = EFFECTS.get(b, "signal")
            used = None
            if effect == "grab":
                if ag.held is None:
                    for cell in (self.faced_cell(name), ag.cell):
                        obj = next(
                            (o for o in self.objects_at(cell) if self.objects[o].mobile), None
                        )
                        if obj is not None:
                            used = obj
                            ag.held = obj
                            self.objects[obj].cell = None
                            if self.conveyor is not None:
                                self.conveyor.entry.pop(obj, None)
                            done.add((b, name))
                            break
            else:
                markers = [o for o in self.objects_at(ag.cell) if not self.objects[o].mobile]
                used = markers[0] if markers else None
                if effect == "signal" or (
                    effect == "exit" and any(self.objects[o].category == "door" for o in markers)
                ):
                    done.add((b, name))
            fired[(b, name)] = used

        self.executed |= done
        self.t += 1
        if self.conveyor is not None and not self.conveyor.static:
            if self.t % self.conveyor.period == 0:
                self._advance_conveyor()
        return self._emit(fired)

    def _advance_conveyor(self) -> None:
        conv = self.conveyor
        path = conv.path
        index = {cell: i for i, cell in enumerate(path)}
        riding = sorted(
            ((index[ob.cell], name) for name, ob in self.objects.items() if ob.cell in index),
            reverse=True,
        )
        for i, name in riding:
            if i == len(path) - 1:
                self.objects[name].cell = None
                conv.entry[name] = self.t + self.rng.randrange(len(path) + 1)
            else:
                self.objects[name].cell = path[i + 1]
        self._enter_waiting()

    def _enter_waiting(self) -> None:
        conv = self.conveyor
        waiting = sorted((when, name) for name, when in conv.entry.items() if when <= self.t)
        if waiting and self.object_at(conv.path[0]) is None:
            _, name = waiting[0]
            del conv.entry[name]
            self.objects[name].cell = conv.path[0]

    def _variables(self):
        if self._vars is None:
            per_agent = {}
            for name in self.agents:
                behaviors = [
                    ((b, name), active(b, name), used_obj(b, name), executed(b, name))
                    for b in self.capabilities[name]
                ]
                pairs = [(obj, near(name, obj), has(name, obj)) for obj in self.objects]
                per_agent[name] = (behaviors, position(name), pairs)
            objs = [(obj, position(obj)) for obj in self.objects]
            self._vars = (per_agent, objs)
        return self._vars

    def _snapshot(self, fired) -> dict[StateVariable, Value]:
        per_agent, objs = self._variables()
        snap: dict[StateVariable, Value] = {}
        objects = self.objects
        for name, ag in self.agents.items():
            behaviors, pos_var, pairs = per_agent[name]
            for key, v_act, v_used, v_exec in behaviors:
                snap[v_act] = key in fired
                snap[v_used] = fired.get(key)
                snap[v_exec] = key in self.executed
            snap[pos_var] = ag.cell
            close = (ag.cell, self.faced_cell(name))
            held = ag.held
            for obj, v_near, v_has in pairs:
                snap[v_near] = objects[obj].cell in close
                snap[v_has] = held == obj
        for obj, v_pos in objs:
            snap[v_pos] = objects[obj].cell
        return snap

    def _emit(self, fired) -> dict[StateVariable, Value]:
        snap = self._snapshot(fired)
        last = self._last
        changed = {k: v for k, v in snap.items() if last.get(k, _MISSING) != v}
        self._last = snap
        return changed

    def initial_assignments(self) -> dict[StateVariable, Value]:
        self._last = {}
        return self._emit({})

    # -- sensing ----------------------------------------------------------------

    def ray_sense(self, agent: str, ray_range: int = RAY_RANGE):
        """First hit along each of the 7 rays: ``(kind, name, distance)``.

        ``kind`` is ``"agent"``, ``"object"``, ``"wall"`` or ``None`` on a miss
        (then ``distance`` is ``None``).
        """
        ag = self.agents[agent]
        ax, ay = ag.cell
        agent_cells = {a.cell: n for n, a in self.agents.items() if n != agent}
        object_cells = {}
        for n, ob in self.objects.items():
            if ob.cell is not None and ob.cell not in object_cells:
                object_cells[ob.cell] = n
        blocked, w, h = self.blocked, self.width, self.height
        hits = []
        for ray in _ray_offsets(ag.heading, ray_range):
            hit = (None, None, None)
            for k, (dx, dy) in enumerate(ray, start=1):
                cell = (ax + dx, ay + dy)
                if cell in agent_cells:
                    hit = ("agent", agent_cells[cell], k)
                    break
                if cell in object_cells:
                    hit = ("object", object_cells[cell], k)
                    break
                if cell in blocked or not (0 <= cell[0] < w and 0 <= cell[1] < h):
                    hit = ("wall", None, k)
                    break
            hits.append(hit)
        return hits

    # -- misc -------------------------------------------------------------------

    @property
    def done_by_time(self) -> bool:
        return self.t >= self.max_episode_steps

    def vocabulary(self) -> DomainVocabulary:
        behaviors = {b for caps in self.capabilities.values() for b in caps}
        return DomainVocabulary(set(self.agents), behaviors, set(self.objects), self.capabilities)

    def render(self) -> str:
        rows = []
        arrows = {"N": "^", "E": ">", "S": "v", "W": "<"}
        for y in range(self.height):
            row = []
            for x in range(self.width):
                cell = (x, y)
                a = self.agent_at(cell)
                o = self.object_at(cell)
                if a is not None:
                    row.append(arrows[self.agents[a].heading])
                elif o is not None:
                    row.append(o[0].upper() if self.objects[o].mobile else o[0])
                elif cell in self.blocked:
                    row.append("#")
                else:
                    row.append(".")
            rows.append("".join(row))
        return "\n".join(rows)


_MISSING = object()


@lru_cache(maxsize=None)
def _ray_offsets(heading: str, ray_range: int) -> tuple:
    """Per ray, the grid offsets visited at steps 1..range."""
    fx, fy = VECTORS[heading]
    rx, ry = -fy, fx  # right-hand vector
    rays = []
    for angle in RAY_ANGLES:
        c, s = math.cos(math.radians(angle)), math.sin(math.radians(angle))
        dx, dy = c * fx + s * rx, c * fy + s * ry
        rays.append(tuple((_round(k * dx), _round(k * dy)) for k in range(1, ray_range + 1)))
    return tuple(rays)


def _round(x: float) -> int:
    return math.floor(x + 0.5 + 1e-9)


def parse_map(text: str):
    rows = text.splitlines()
    height, width = len(rows), len(rows[0])
    blocked, slots, markers = set(), [], {}
    for y, row in enumerate(rows):
        if len(row) != width:
            raise ConfigError("ragged map")
        for x, ch in enumerate(row):
            if ch in "#sc":
                blocked.add((x, y))
            if ch in "sc":
                slots.append((x, y))
            if ch in MARKERS:
                markers[MARKERS[ch]] = (x, y)
    return width, height, blocked, slots, markers


def reset(config: ScenarioConfig, seed: int | None = None):
    """Build a fresh world; returns ``(world, initial assignments)``."""
    scen = SCENARIOS[config.scenario]
    rng = random.Random(config.seed if seed is None else seed)
    width, height, blocked, slots, markers = parse_map(scen["map"])
    if config.grid is not None and tuple(config.grid) != (width, height):
        raise ConfigError(f"{config.scenario} is {width}x{height}, config asks for {config.grid}")
    items = config.items if config.items is not None else scen["items"]
    names = config.agents if config.agents is not None else scen["agents"]
    if len(items) > len(slots):
        raise ConfigError(f"{len(items)} items but only {len(slots)} shelf cells")

    objects = {m: ObjectState(cell, m, False) for m, cell in markers.items()}
    conveyor = None
    if config.scenario == "factory":
        conveyor = Conveyor(list(slots), CONVEYOR_PERIOD, config.static_items)
    if conveyor is None or conveyor.static:
        cells = rng.sample(slots, len(items))
        for item, cell in zip(items, cells):
            objects[item] = ObjectState(cell, "item", True)
    else:
        span = len(conveyor.path)
        for item in items:
            objects[item] = ObjectState(None, "item", True)
            conveyor.entry[item] = rng.randrange(2 * span)
    agents = {}
    for name in names:
        if name not in scen["spawns"]:
            raise ConfigError(f"scenario {config.scenario} has no spawn for agent {name!r}")
        cell, heading = scen["spawns"][name]
        agents[name] = AgentState(cell, heading, period=AGENT_PERIOD.get(name, 1))
    world = GridWorld(
        width, height, blocked, agents, objects,
        {n: CAPABILITIES.get(n, ()) for n in names},
        conveyor, config.max_episode_steps, rng,
    )
    if conveyor is not None and not conveyor.static:
        world._enter_waiting()
    return world, world.initial_assignments()

