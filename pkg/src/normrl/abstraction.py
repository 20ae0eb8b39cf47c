"""Observation encoders and action spaces bound to a grounding.

The abstract encoder only ever sees institution categories: an object counts
as a given artifact because the grounding says so.  The same weights can then
drive a different agent in a different domain by binding a new grounding.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Hashable, Sequence

import numpy as np

from .gridworld import BACKWARD, FORWARD, LEFT, NOOP, RIGHT, VECTORS, Command, GridWorld, invoke
from .institution import Grounding, Institution, InstitutionError
from .norms import F, N, V, NormState

_STATE_CODE = {F: 0, N: 1, V: 2}

MOVES: tuple[Command, ...] = (FORWARD, BACKWARD, LEFT, RIGHT, NOOP)
HEADING_ORDER = ("N", "E", "S", "W")
OBSERVATION_MODES = ("abstract", "full", "tabular-abstract")


class EncodingError(ValueError):
    pass


class IncompatibleLayoutError(ValueError):
    pass


def agent_acts(inst: Institution, g: Grounding, agent: str) -> tuple[str, ...]:
    """Acts the agent may perform through its roles, in declaration order."""
    roles = g.roles_of_agent(agent)
    if not roles:
        raise EncodingError(f"agent {agent!r} is not grounded to any role")
    acts = []
    for role in roles:
        for act in inst.acts_of_role(role):
            if act not in acts:
                acts.append(act)
    return tuple(a for a in inst.acts if a in acts)


class ActionSpace:
    """Movement commands followed by one action per act of the agent's roles.

    With ``grounded=False`` the invocations are every behavior the agent is
    capable of instead, as an unabstracted learner would see them.
    """

    def __init__(
        self, inst: Institution, g: Grounding, agent: str, capabilities: Sequence[str], grounded: bool = True
    ):
        self.agent = agent
        commands = list(MOVES)
        if not grounded:
            self.acts = ()
            self.behaviors = tuple(capabilities)
            self.commands = tuple(commands + [invoke(b) for b in self.behaviors])
            return
        self.acts = agent_acts(inst, g, agent)
        caps = set(capabilities)
        for act in self.acts:
            options = sorted(g.behaviors_of_act(act) & caps)
            if len(options) != 1:
                raise InstitutionError(
                    f"act {act} needs exactly one grounded behavior for {agent}, found {options}"
                )
            commands.append(invoke(options[0]))
        self.behaviors = tuple(c.behavior for c in commands[len(MOVES):])
        self.commands = tuple(commands)

    def __len__(self) -> int:
        return len(self.commands)

    def __getitem__(self, index: int) -> Command:
        return self.dispatch(index)

    def dispatch(self, index: int) -> Command:
        if not 0 <= index < len(self.commands):
            raise IndexError(f"action {index} outside [0, {len(self.commands)})")
        return self.commands[index]

    @property
    def layout(self) -> tuple[str, ...]:
        return tuple(c.kind for c in MOVES) + self.acts


def _egocentric(heading: str, origin, cell) -> tuple[int, int]:
    """(lateral, forward) offset of ``cell`` seen from ``origin``; right is positive."""
    fx, fy = VECTORS[heading]
    rx, ry = -fy, fx
    dx, dy = cell[0] - origin[0], cell[1] - origin[1]
    return dx * rx + dy * ry, dx * fx + dy * fy


class AbstractEncoder:
    """Ray, held, executed and here features over institution categories.

    Per ray: one channel per artifact, then other-object, other-agent, wall,
    then the distance divided by the ray range (1.0 on a miss).  Agent flags:
    held one-hot [none, grounded, other], executed flag per institution act,
    one flag per artifact set when a grounded object lies on the agent's cell,
    normalised position and heading one-hot.
    """

    def __init__(self, inst: Institution, g: Grounding, agent: str, ray_range: int = 10):
        if not g.roles_of_agent(agent):
            raise EncodingError(f"agent {agent!r} is not grounded to any role")
        self.inst = inst
        self.g = g
        self.agent = agent
        self.ray_range = ray_range
        self.arts = tuple(inst.arts)
        self.acts = tuple(inst.acts)
        self.category: dict[str, int] = {}
        for i, art in enumerate(self.arts):
            for obj in sorted(g.objects_of_art(art)):
                self.category.setdefault(obj, i)
        self.act_behaviors = [g.behaviors_of_act(act) for act in self.acts]
        k = len(self.arts)
        self.ray_width = k + 4
        self.size = 7 * self.ray_width + 3 + len(self.acts) + k + 6

    @property
    def layout(self) -> tuple:
        return ("abstract", self.arts, self.acts)

    @property
    def bias_slice(self) -> slice:
        return slice(self.size - 4, self.size)

    def encode(self, world: GridWorld) -> np.ndarray:
        k = len(self.arts)
        w = self.ray_width
        out = np.zeros(self.size)
        for r, (kind, name, dist) in enumerate(world.ray_sense(self.agent, self.ray_range)):
            base = r * w
            if kind is None:
                out[base + w - 1] = 1.0
                continue
            if name in self.category:
                out[base + self.category[name]] = 1.0
            elif kind == "object":
                out[base + k] = 1.0
            elif kind == "agent":
                out[base + k + 1] = 1.0
            else:
                out[base + k + 2] = 1.0
            out[base + w - 1] = min(dist / self.ray_range, 1.0)
        i = 7 * w
        ag = world.agents[self.agent]
        if ag.held is None:
            out[i] = 1.0
        elif ag.held in self.category:
            out[i + 1] = 1.0
        else:
            out[i + 2] = 1.0
        i += 3
        for j, behaviors in enumerate(self.act_behaviors):
            if any((b, self.agent) in world.executed for b in behaviors):
                out[i + j] = 1.0
        i += len(self.acts)
        for obj in world.objects_at(ag.cell):
            if obj in self.category:
                out[i + self.category[obj]] = 1.0
        i += k
        out[i] = ag.cell[0] / max(world.width - 1, 1)
        out[i + 1] = ag.cell[1] / max(world.height - 1, 1)
        out[i + 2 + HEADING_ORDER.index(ag.heading)] = 1.0
        return out

    def held_index(self, world: GridWorld) -> int:
        """Held category: 0 none, 1 grounded art, 2 other."""
        held = world.agents[self.agent].held
        return 0 if held is None else (1 if held in self.category else 2)

    n_held = 3

    def context(self, world: GridWorld) -> int:
        """Held category x executed-act flags, both read off the layout itself."""
        c = self.held_index(world)
        for behaviors in self.act_behaviors:
            c = 2 * c + int(any((b, self.agent) in world.executed for b in behaviors))
        return c

    @property
    def n_contexts(self) -> int:
        return self.n_held * 2 ** len(self.acts)


class FullEncoder:
    """Ray features over every concrete object type of the domain.

    Per ray: one channel per object, then wall, other-agent, then distance.
    Agent flags: held-item one-hot (items + none), executed flag per behavior
    of the agent, one flag per object lying on the agent's cell, position and
    heading.
    """

    def __init__(self, world: GridWorld, agent: str, ray_range: int = 10):
        if agent not in world.agents:
            raise EncodingError(f"unknown agent {agent!r}")
        self.agent = agent
        self.ray_range = ray_range
        self.objects = tuple(sorted(world.objects))
        self.index = {o: i for i, o in enumerate(self.objects)}
        self.items = tuple(o for o in self.objects if world.objects[o].mobile)
        self.item_index = {o: i for i, o in enumerate(self.items)}
        self.behaviors = tuple(world.capabilities[agent])
        n = len(self.objects)
        self.ray_width = n + 3
        self.size = 7 * self.ray_width + len(self.items) + 1 + len(self.behaviors) + n + 6

    @property
    def layout(self) -> tuple:
        return ("full", self.objects, self.behaviors)

    @property
    def bias_slice(self) -> slice:
        return slice(self.size - 4, self.size)

    def encode(self, world: GridWorld) -> np.ndarray:
        n = len(self.objects)
        w = self.ray_width
        out = np.zeros(self.size)
        for r, (kind, name, dist) in enumerate(world.ray_sense(self.agent, self.ray_range)):
            base = r * w
            if kind is None:
                out[base + w - 1] = 1.0
                continue
            if kind == "object":
                out[base + self.index[name]] = 1.0
            elif kind == "wall":
                out[base + n] = 1.0
            else:
                out[base + n + 1] = 1.0
            out[base + w - 1] = min(dist / self.ray_range, 1.0)
        i = 7 * w
        ag = world.agents[self.agent]
        out[i + (0 if ag.held is None else 1 + self.item_index[ag.held])] = 1.0
        i += len(self.items) + 1
        for j, b in enumerate(self.behaviors):
            if (b, self.agent) in world.executed:
                out[i + j] = 1.0
        i += len(self.behaviors)
        for obj in world.objects_at(ag.cell):
            out[i + self.index[obj]] = 1.0
        i += n
        out[i] = ag.cell[0] / max(world.width - 1, 1)
        out[i + 1] = ag.cell[1] / max(world.height - 1, 1)
        out[i + 2 + HEADING_ORDER.index(ag.heading)] = 1.0
        return out

    def held_index(self, world: GridWorld) -> int:
        held = world.agents[self.agent].held
        return 0 if held is None else 1 + self.item_index[held]

    @property
    def n_held(self) -> int:
        return len(self.items) + 1

    def context(self, world: GridWorld) -> int:
        """Held item x executed-behavior flags."""
        c = self.held_index(world)
        for b in self.behaviors:
            c = 2 * c + int((b, self.agent) in world.executed)
        return c

    @property
    def n_contexts(self) -> int:
        return self.n_held * 2 ** len(self.behaviors)


class TabularEncoder:
    """Compact hashable key for tabular learning.

    Egocentric (lateral, forward) offset, clipped to +-``clip``, to the nearest
    present grounded object of each artifact; the unclipped offset of the
    nearest other agent when it lies inside that window, else None; the held
    category; and the current norm states.  Nothing in the key
    depends on board size or on concrete identities.
    """

    def __init__(self, inst: Institution, g: Grounding, agent: str, clip: int = 2):
        if not g.roles_of_agent(agent):
            raise EncodingError(f"agent {agent!r} is not grounded to any role")
        self.agent = agent
        self.clip = clip
        self.arts = tuple(inst.arts)
        self.acts = tuple(inst.acts)
        self.n_norms = len(inst.norms)
        self.members = [sorted(g.objects_of_art(a)) for a in self.arts]
        self.grounded = {o for objs in self.members for o in objs}

    @property
    def layout(self) -> tuple:
        return ("tabular-abstract", self.arts, self.acts, self.n_norms)

    def _offset(self, heading, origin, cell):
        lat, fwd = _egocentric(heading, origin, cell)
        c = self.clip
        return (max(-c, min(c, lat)), max(-c, min(c, fwd)))

    def encode(self, world: GridWorld, norm_states: Sequence[NormState] = ()) -> Hashable:
        ag = world.agents[self.agent]
        origin, heading = ag.cell, ag.heading
        parts: list[Any] = []
        for objs in self.members:
            best = None
            for o in objs:
                cell = world.objects[o].cell if o in world.objects else None
                if cell is None and o in world.agents:
                    cell = world.agents[o].cell
                if cell is None:
                    continue
                d = abs(cell[0] - origin[0]) + abs(cell[1] - origin[1])
                if best is None or d < best[0]:
                    best = (d, cell)
            parts.append(None if best is None else self._offset(heading, origin, best[1]))
        others = [
            (abs(a.cell[0] - origin[0]) + abs(a.cell[1] - origin[1]), n, a.cell)
            for n, a in world.agents.items()
            if n != self.agent
        ]
        near = None
        if others:
            lat, fwd = _egocentric(heading, origin, min(others)[2])
            if max(abs(lat), abs(fwd)) <= self.clip:
                near = (lat, fwd)
        parts.append(near)
        held = ag.held
        parts.append(0 if held is None else (1 if held in self.grounded else 2))
        parts.append("".join(s.value for s in norm_states))
        return tuple(parts)


DISTANCE_BINS = (1, 2, 3, 5)  # upper edges in cells; farther hits share the last bin


def _distance_bin(cells: int) -> int:
    for i, edge in enumerate(DISTANCE_BINS):
        if cells <= edge:
            return i
    return len(DISTANCE_BINS)


class RayTiles:
    """Fixed binary expansion of a vector encoding for linear learners.

    Each ray's (channel, distance) reading becomes one active indicator out of
    ``(channels + 1) x bins`` (the extra channel marks a miss).  The normalised
    position is tile-coded on a ``pos_bins x pos_bins`` grid crossed with the
    heading.  The non-ray tail of the vector is passed through unchanged, so the
    heading one-hot stays last.  The layout depends only on the encoder, never
    on the board size.
    """

    def __init__(self, encoder, ray_range: int = 10, pos_bins: int = 11):
        self.encoder = encoder
        self.ray_range = ray_range
        self.pos_bins = pos_bins
        self.channels = encoder.ray_width - 1
        self.bins = len(DISTANCE_BINS) + 1
        self.per_ray = (self.channels + 1) * self.bins
        self.tail = encoder.size - 7 * encoder.ray_width
        self.n_pos = pos_bins * pos_bins * 4
        self.size = 7 * self.per_ray + self.n_pos + self.tail

    @property
    def bias_slice(self) -> slice:
        """The position tiles: exactly one is active, so they act as a per-cell bias."""
        base = 7 * self.per_ray
        return slice(base, base + self.n_pos)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros(self.size)
        w = self.encoder.ray_width
        for r in range(7):
            ray = x[r * w:(r + 1) * w]
            hot = np.flatnonzero(ray[:-1])
            if hot.size == 0:
                idx = self.channels * self.bins
            else:
                cells = int(round(ray[-1] * self.ray_range))
                idx = int(hot[0]) * self.bins + _distance_bin(cells)
            out[r * self.per_ray + idx] = 1.0
        base = 7 * self.per_ray
        nb = self.pos_bins
        px = int(round(x[-6] * (nb - 1)))
        py = int(round(x[-5] * (nb - 1)))
        heading = int(np.argmax(x[-4:]))
        out[base + (py * nb + px) * 4 + heading] = 1.0
        out[base + self.n_pos:] = x[7 * w:]
        return out


def make_encoder(mode: str, inst: Institution, g: Grounding, agent: str, world: GridWorld):
    if mode == "abstract":
        return AbstractEncoder(inst, g, agent)
    if mode == "full":
        return FullEncoder(world, agent)
    if mode == "tabular-abstract":
        return TabularEncoder(inst, g, agent)
    raise EncodingError(f"unknown observation mode {mode!r}; expected one of {OBSERVATION_MODES}")


def encode_abstract(world: GridWorld, agent: str, g: Grounding, inst: Institution) -> np.ndarray:
    return AbstractEncoder(inst, g, agent).encode(world)


def encode_full(world: GridWorld, agent: str) -> np.ndarray:
    return FullEncoder(world, agent).encode(world)


def dispatch_action(index: int, agent: str, g: Grounding, inst: Institution, capabilities) -> Command:
    return ActionSpace(inst, g, agent, capabilities).dispatch(index)


@dataclass
class BoundPolicy:
    """A value function plus the encoder and action space it is bound to."""

    q: Any
    inst: Institution
    g: Grounding
    agent: str
    mode: str
    encoder: Any
    actions: ActionSpace
    tiles: RayTiles | None = None
    context_source: str = "flags"

    def observe(self, world: GridWorld, norm_states: Sequence[NormState] = ()):
        """Table key for tabular-abstract, ``(context, features)`` otherwise."""
        if self.mode == "tabular-abstract":
            return self.encoder.encode(world, norm_states)
        x = self.encoder.encode(world)
        return self.context(world, norm_states), (x if self.tiles is None else self.tiles(x))

    def context(self, world: GridWorld, norm_states: Sequence[NormState] = ()) -> int:
        """Phase index for contextual linear Q.

        ``flags``: the encoder's own held x executed flags.  ``norms``: held
        category x the institution's norm-state vector.
        """
        if self.context_source == "flags":
            return self.encoder.context(world)
        c = self.encoder.held_index(world)
        for ns in norm_states:
            c = 3 * c + _STATE_CODE[ns]
        return c

    @property
    def n_contexts(self) -> int:
        if self.context_source == "flags":
            return self.encoder.n_contexts
        return self.encoder.n_held * 3 ** len(self.inst.norms)

    @property
    def n_features(self) -> int:
        return self.encoder.size if self.tiles is None else self.tiles.size

    @property
    def bias_slice(self) -> slice:
        return (self.tiles or self.encoder).bias_slice


CONTEXT_SOURCES = ("flags", "norms")


def bind_policy(
    q,
    mode: str,
    inst: Institution,
    g: Grounding,
    agent: str,
    world: GridWorld,
    tiles: bool = False,
    context: str = "flags",
) -> BoundPolicy:
    if context not in CONTEXT_SOURCES:
        raise EncodingError(f"unknown context source {context!r}; expected one of {CONTEXT_SOURCES}")
    encoder = make_encoder(mode, inst, g, agent, world)
    actions = ActionSpace(inst, g, agent, world.capabilities[agent], grounded=mode != "full")
    expansion = RayTiles(encoder) if tiles and mode != "tabular-abstract" else None
    return BoundPolicy(q, inst, g, agent, mode, encoder, actions, expansion, context)


def reground(
    policy: BoundPolicy,
    g: Grounding,
    world: GridWorld,
    agent: str | None = None,
    inst: Institution | None = None,
) -> BoundPolicy:
    """Rebind ``policy`` to a new grounding (and domain); the values are shared, not copied."""
    if policy.mode == "full":
        raise IncompatibleLayoutError("full-state policies are tied to their domain and cannot be regrounded")
    inst = inst if inst is not None else policy.inst
    if inst.fingerprint() != policy.inst.fingerprint():
        raise IncompatibleLayoutError(
            f"institution {inst.name} has a different category list than {policy.inst.name}"
        )
    if agent is None:
        candidates = sorted(g.agents_of_role(policy.g.roles_of_agent(policy.agent)[0]))
        if not candidates:
            raise EncodingError("new grounding leaves the policy's role without an agent")
        agent = candidates[0]
    new = bind_policy(
        policy.q, policy.mode, inst, g, agent, world, tiles=policy.tiles is not None, context=policy.context_source
    )
    if new.encoder.layout != policy.encoder.layout or new.actions.acts != policy.actions.acts:
        raise IncompatibleLayoutError(
            f"layout {new.encoder.layout} / {new.actions.acts} does not match "
            f"{policy.encoder.layout} / {policy.actions.acts}"
        )
    return new
