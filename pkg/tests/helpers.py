"""Shared fixtures for the test suite: random traces and a brute-force norm evaluator.

The brute force works on plain per-step arrays and re-reads the qualifier
definitions directly; it shares no code with ``normrl.norms``.
"""
from __future__ import annotations

import itertools
import random
from dataclasses import dataclass

from normrl.experiments import load_institution
from normrl.gridworld import FORWARD, RIGHT, AgentState, GridWorld, ObjectState, invoke
from normrl.institution import Grounding, Institution, Norm, Triple
from normrl.trajectory import Trajectory, active, position, used_obj

AGENTS = ("a1", "a2")
BEHAVIORS = ("b1", "b2", "b3")
OBJECTS = ("o1", "o2", "o3")


def random_institution() -> Institution:
    """Every qualifier, over two roles, three acts and two artifacts."""
    T = Triple
    norms = [
        Norm("must", (T("R1", "X", "P"),)),
        Norm("must", (T("R2", "Z", "Q"),)),
        Norm("use", (T("R1", "X", "P"),)),
        Norm("use", (T("R2", "Y", "Q"),)),
        Norm("mustUse", (T("R1", "X", "P"),)),
        Norm("mustUse", (T("R2", "Y", "Q"),)),
        Norm("mustAt", (T("R1", "Z", "Q"),)),
        Norm("mustAt", (T("R2", "X", "P"),)),
        Norm("before", (T("R1", "X", "P"), T("R2", "Y", "Q"))),
        Norm("before", (T("R1", "X", "P"), T("R1", "Z", "Q"))),
        Norm("equals", (T("R1", "Z", "P"), T("R2", "Z", "Q"))),
        Norm("equals", (T("R1", "X", "P"), T("R2", "Y", "P"))),
    ]
    return Institution("Random", ("R1", "R2"), ("X", "Y", "Z"), ("P", "Q"), norms)


def random_grounding(rng: random.Random, inst: Institution) -> Grounding:
    def subset(pool, lo=1):
        k = rng.randint(lo, len(pool))
        return rng.sample(pool, k)

    roles = {"R1": subset(AGENTS), "R2": subset(AGENTS)}
    acts = {a: subset(BEHAVIORS) if rng.random() < 0.3 else [rng.choice(BEHAVIORS)] for a in inst.acts}
    arts = {a: subset(OBJECTS) for a in inst.arts}
    return Grounding.for_institution(inst, roles, acts, arts)


def fixed_grounding(inst: Institution) -> Grounding:
    return Grounding.for_institution(
        inst,
        {"R1": ["a1"], "R2": ["a2"]},
        {"X": ["b1"], "Y": ["b2"], "Z": ["b3"]},
        {"P": ["o1"], "Q": ["o2", "o3"]},
    )


@dataclass
class ArrayTrace:
    """Per-step arrays: act[t][(b, a)], used[t][(b, a)], pos[t][entity]."""

    act: list[dict]
    used: list[dict]
    pos: list[dict]

    def __len__(self):
        return len(self.act)

    def prefix(self, n: int) -> "ArrayTrace":
        return ArrayTrace(self.act[:n], self.used[:n], self.pos[:n])

    def to_trajectory(self) -> Trajectory:
        traj = Trajectory(0)
        for t in range(len(self)):
            step = {}
            for (b, a), on in self.act[t].items():
                step[active(b, a)] = on
            for (b, a), o in self.used[t].items():
                step[used_obj(b, a)] = o
            for e, p in self.pos[t].items():
                step[position(e)] = p
            traj.record(step, t=t)
        return traj


def random_array_trace(rng: random.Random, steps: int | None = None, p_active: float = 0.12) -> ArrayTrace:
    steps = rng.randint(1, 50) if steps is None else steps
    size = 3
    pos = {e: (rng.randrange(size), rng.randrange(size)) for e in AGENTS + OBJECTS}
    acts, used, poss = [], [], []
    for _ in range(steps):
        a_t, u_t = {}, {}
        for b in BEHAVIORS:
            for a in AGENTS:
                on = rng.random() < p_active
                a_t[(b, a)] = on
                u_t[(b, a)] = rng.choice(OBJECTS + (None,)) if on else None
        for a in AGENTS:
            if rng.random() < 0.4:
                x, y = pos[a]
                dx, dy = rng.choice([(0, 1), (1, 0), (0, -1), (-1, 0)])
                pos[a] = (min(max(x + dx, 0), size - 1), min(max(y + dy, 0), size - 1))
        if rng.random() < 0.1:
            o = rng.choice(OBJECTS)
            pos[o] = (rng.randrange(size), rng.randrange(size))
        acts.append(a_t)
        used.append(u_t)
        poss.append(dict(pos))
    return ArrayTrace(acts, used, poss)


# -- brute force -----------------------------------------------------------------


def _sets(g: Grounding, trp: Triple):
    return (
        sorted(g.agents_of_role(trp.role)),
        sorted(g.behaviors_of_act(trp.act)),
        sorted(g.objects_of_art(trp.art)),
    )


def _times(tr: ArrayTrace, agents, behaviors):
    return [t for t in range(len(tr)) for a in agents for b in behaviors if tr.act[t].get((b, a), False)]


def brute_force(norm: Norm, g: Grounding, tr: ArrayTrace) -> str:
    """Norm state by literal reading of the definitions (default, non-strict options)."""
    is_f, is_v = conditions(norm, g, tr)
    if is_f and is_v:
        raise AssertionError(f"{norm} is both fulfilled and violated")
    return "f" if is_f else "v" if is_v else "n"


def conditions(norm: Norm, g: Grounding, tr: ArrayTrace) -> tuple[bool, bool]:
    """(fulfilment condition holds, violation condition holds), evaluated independently."""
    T = range(len(tr))
    if any(not g.agents_of_role(t.role) or not g.behaviors_of_act(t.act) for t in norm.triples):
        return False, False
    q = norm.qualifier
    if q == "must":
        A, B, _ = _sets(g, norm.triples[0])
        return all(any(tr.act[t].get((b, a), False) for b in B for t in T) for a in A), False
    if q == "use":
        A, B, O = _sets(g, norm.triples[0])
        events = [(b, a, t) for t in T for a in A for b in B if tr.act[t].get((b, a), False)]
        return bool(events) and all(tr.used[t][(b, a)] in O for b, a, t in events), False
    if q == "mustUse":
        A, B, O = _sets(g, norm.triples[0])
        ok = all(
            any(tr.act[t].get((b, a), False) and tr.used[t][(b, a)] in O for b in B for t in T) for a in A
        )
        return ok, False
    if q == "mustAt":
        A, B, O = _sets(g, norm.triples[0])
        ok = all(
            any(
                tr.act[t].get((b, a), False) and tr.pos[t][a] == tr.pos[t][o]
                for b in B
                for o in O
                for t in T
            )
            for a in A
        )
        return ok, False
    if q in ("before", "equals"):
        A1, B1, _ = _sets(g, norm.triples[0])
        A2, B2, _ = _sets(g, norm.triples[1])
        s1, s2 = _times(tr, A1, B1), _times(tr, A2, B2)
        covered = all(
            any(tr.act[t].get((b, a), False) for t in T) for A, B in ((A1, B1), (A2, B2)) for a in A for b in B
        )
        if q == "before":
            is_f = covered and all(t1 < t2 for t1, t2 in itertools.product(s1, s2))
            is_v = any(not any(t1 < t2 for t1 in s1) for t2 in s2) or any(
                t1 >= t2 for t1, t2 in itertools.product(s1, s2)
            )
            return is_f, is_v
        set1, set2 = set(s1), set(s2)
        is_v = any(t not in set2 for t in set1) or any(t not in set1 for t in set2)
        is_f = covered and all(t1 == t2 for t1, t2 in itertools.product(set1, set2))
        return is_f, is_v
    raise ValueError(q)


# -- constructed boards ----------------------------------------------------------------

STORE = load_institution("store.json")
EXIT = load_institution("store_exit.json")


def g_store(goods="battery"):
    return Grounding.for_institution(
        STORE, {"Buyer": ["robby"]}, {"GetGoods": ["pick"], "Pay": ["transfer"]},
        {"Goods": [goods], "PayPlace": ["register"]},
    )


def g_factory():
    return Grounding.for_institution(
        STORE, {"Buyer": ["forky"]}, {"GetGoods": ["lift"], "Pay": ["leave"]},
        {"Goods": ["box1"], "PayPlace": ["hatch"]},
    )


def board(agent, caps, objects, cell=(5, 8), heading="N", size=12, held=None, executed=()):
    blocked = {(x, y) for x in range(size) for y in range(size) if x in (0, size - 1) or y in (0, size - 1)}
    objs = {n: ObjectState(c, cat, cat == "item") for n, (c, cat) in objects.items()}
    w = GridWorld(size, size, blocked, {agent: AgentState(cell, heading, held)}, objs, {agent: caps})
    w.executed |= {(b, agent) for b in executed}
    return w


ROBBY_CAPS = ("pick", "transfer", "exit")
FORKY_CAPS = ("lift", "leave")


def random_pair(rng):
    """The same geometry twice: once as a store, once as a factory yard."""
    size = 12
    free = [(x, y) for x in range(1, size - 1) for y in range(1, size - 1)]
    cells = rng.sample(free, 4)
    heading = rng.choice("NESW")
    held = rng.random() < 0.3
    store_objs = {"register": (cells[1], "register"), "axe": (cells[3], "item")}
    factory_objs = {"hatch": (cells[1], "hatch"), "box2": (cells[3], "item")}
    if not held:
        store_objs["battery"] = (cells[2], "item")
        factory_objs["box1"] = (cells[2], "item")
    ex = [b for b in ("pick", "transfer") if rng.random() < 0.5]
    fx = [{"pick": "lift", "transfer": "leave"}[b] for b in ex]
    s = board("robby", ROBBY_CAPS, store_objs, cells[0], heading, size, "battery" if held else None, ex)
    f = board("forky", FORKY_CAPS, factory_objs, cells[0], heading, size, "box1" if held else None, fx)
    return s, f




def scripted_buyer_episode(env, seed: int, leave: bool = False):
    """Drive robby through an adherent store visit: pick the battery, pay, optionally exit.

    Returns the list of env steps taken.
    """
    world = env.reset(seed)
    ag = world.agents["robby"]
    steps = []

    def go(cmd):
        steps.append(env.step({"robby": cmd}))

    def goto(cell):
        while ag.cell != cell:
            (x, y), (tx, ty) = ag.cell, cell
            want = "E" if tx > x else "W" if tx < x else ("S" if ty > y else "N")
            while ag.heading != want:
                go(RIGHT)
            go(FORWARD)

    bat = world.objects["battery"].cell
    goto((bat[0], bat[1] + 1))
    while ag.heading != "N":
        go(RIGHT)
    go(invoke("pick"))
    register = world.objects["register"].cell
    goto((bat[0], register[1]))
    goto(register)
    go(invoke("transfer"))
    if leave:
        goto(world.objects["door"].cell)
        go(invoke("exit"))
    return steps
