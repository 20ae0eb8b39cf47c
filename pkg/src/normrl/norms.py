"""Norm semantics: direct evaluation over a trajectory and incremental monitors.

``oracle_eval`` works from the definitions: it enumerates every activation of
every grounded (behavior, agent) pair and checks the qualifier's conditions
literally, including all cross pairs for the temporal qualifiers.
``NormMonitor`` keeps a constant-size summary per norm and only reads the
values at the newest time point, so it never rescans history.  The two must
agree on every prefix.
"""
from __future__ import annotations

import enum
import functools
import itertools
import warnings
from dataclasses import dataclass

from .institution import Grounding, Institution, Norm, Triple
from .trajectory import Trajectory, active, position, used_obj


class NormState(str, enum.Enum):
    F = "f"
    V = "v"
    N = "n"

    def __str__(self) -> str:
        return self.value


F, V, N = NormState.F, NormState.V, NormState.N


class MonitorError(RuntimeError):
    pass


@dataclass(frozen=True)
class SemanticsOptions:
    """``strict``: wrong-object / wrong-place activations violate use-family norms.
    ``at_tolerance``: Chebyshev radius for position equality in ``mustAt``."""

    strict: bool = False
    at_tolerance: int = 0


DEFAULT_OPTIONS = SemanticsOptions()


@dataclass(frozen=True)
class ResolvedTriple:
    agents: tuple[str, ...]
    behaviors: tuple[str, ...]
    objects: tuple[str, ...]

    @property
    def grounded(self) -> bool:
        return bool(self.agents and self.behaviors)

    @functools.cached_property
    def pairs(self) -> tuple[tuple[str, str], ...]:
        """(behavior, agent) pairs."""
        return tuple((b, a) for a in self.agents for b in self.behaviors)


def resolve(trp: Triple, g: Grounding) -> ResolvedTriple:
    return ResolvedTriple(
        tuple(sorted(g.agents_of_role(trp.role))),
        tuple(sorted(g.behaviors_of_act(trp.act))),
        tuple(sorted(g.objects_of_art(trp.art))),
    )


def _at(p, q, tol: int) -> bool:
    if p is None or q is None:
        return False
    return max(abs(p[0] - q[0]), abs(p[1] - q[1])) <= tol


# -- oracle -------------------------------------------------------------------

def _activations(traj: Trajectory, rt: ResolvedTriple):
    """All (behavior, agent, t) activation events of a resolved triple."""
    return [(b, a, t) for b, a in rt.pairs for t in traj.activation_times(b, a)]


def _oracle_must(rts, traj, opts):
    (rt,) = rts
    ok = all(any(traj.activation_times(b, a) for b in rt.behaviors) for a in rt.agents)
    return F if ok else N


def _oracle_use(rts, traj, opts):
    (rt,) = rts
    events = _activations(traj, rt)
    if not events:
        return N
    wrong = [e for e in events if traj.value_at(used_obj(e[0], e[1]), e[2]) not in rt.objects]
    if not wrong:
        return F
    return V if opts.strict else N


def _oracle_existential(rts, traj, opts, good):
    """Shared shape of mustUse / mustAt: each agent needs one good activation."""
    (rt,) = rts
    events = _activations(traj, rt)
    first_good = {}
    wrong_times = []
    for b, a, t in events:
        if good(b, a, t):
            first_good[a] = min(first_good.get(a, t), t)
        else:
            wrong_times.append(t)
    fulfilled_at = max(first_good.values()) if len(first_good) == len(rt.agents) else None
    if opts.strict and any(fulfilled_at is None or t < fulfilled_at for t in wrong_times):
        return V
    return F if fulfilled_at is not None else N


def _oracle_must_use(rts, traj, opts):
    objs = set(rts[0].objects)
    return _oracle_existential(
        rts, traj, opts, lambda b, a, t: traj.value_at(used_obj(b, a), t) in objs
    )


def _oracle_must_at(rts, traj, opts):
    objs = rts[0].objects

    def good(b, a, t):
        here = traj.value_at(position(a), t)
        return any(_at(here, traj.value_at(position(o), t), opts.at_tolerance) for o in objs)

    return _oracle_existential(rts, traj, opts, good)


def _covered(traj, rt) -> bool:
    return all(traj.activation_times(b, a) for b, a in rt.pairs)


def _oracle_before(rts, traj, opts):
    rt1, rt2 = rts
    s1 = [t for _, _, t in _activations(traj, rt1)]
    s2 = [t for _, _, t in _activations(traj, rt2)]
    pairs = list(itertools.product(s1, s2))
    if _covered(traj, rt1) and _covered(traj, rt2) and all(t1 < t2 for t1, t2 in pairs):
        return F
    unanswered = any(not any(t1 < t2 for t1 in s1) for t2 in s2)
    if unanswered or any(t1 >= t2 for t1, t2 in pairs):
        return V
    return N


def _oracle_equals(rts, traj, opts):
    rt1, rt2 = rts
    s1 = {t for _, _, t in _activations(traj, rt1)}
    s2 = {t for _, _, t in _activations(traj, rt2)}
    if s1 ^ s2:
        return V
    if (
        _covered(traj, rt1)
        and _covered(traj, rt2)
        and all(t1 == t2 for t1, t2 in itertools.product(s1, s2))
    ):
        return F
    return N


ORACLES = {
    "must": _oracle_must,
    "use": _oracle_use,
    "mustUse": _oracle_must_use,
    "mustAt": _oracle_must_at,
    "before": _oracle_before,
    "equals": _oracle_equals,
}


def oracle_eval(
    norm: Norm, traj: Trajectory, g: Grounding, options: SemanticsOptions = DEFAULT_OPTIONS
) -> NormState:
    try:
        fn = ORACLES[norm.qualifier]
    except KeyError:
        raise ValueError(f"unsupported qualifier {norm.qualifier!r}") from None
    rts = [resolve(t, g) for t in norm.triples]
    if not all(rt.grounded for rt in rts) or traj.empty:
        return N
    return fn(rts, traj, options)


def adheres(
    inst: Institution, traj: Trajectory, g: Grounding, options: SemanticsOptions = DEFAULT_OPTIONS
) -> bool:
    return all(oracle_eval(n, traj, g, options) is F for n in inst.norms)


# -- incremental monitors -----------------------------------------------------

class _Progress:
    def __init__(self, rts: list[ResolvedTriple], opts: SemanticsOptions):
        self.rts = rts
        self.opts = opts

    def update(self, traj: Trajectory, t: int) -> NormState:
        raise NotImplementedError


class _MustProgress(_Progress):
    def __init__(self, rts, opts):
        super().__init__(rts, opts)
        self.done: set[str] = set()

    def update(self, traj, t):
        rt = self.rts[0]
        for b, a in rt.pairs:
            if a not in self.done and traj.current(active(b, a)):
                self.done.add(a)
        return F if len(self.done) == len(rt.agents) else N


class _UseProgress(_Progress):
    def __init__(self, rts, opts):
        super().__init__(rts, opts)
        self.seen = False
        self.wrong = False

    def update(self, traj, t):
        rt = self.rts[0]
        for b, a in rt.pairs:
            if traj.current(active(b, a)):
                self.seen = True
                if traj.current(used_obj(b, a)) not in rt.objects:
                    self.wrong = True
        if not self.seen:
            return N
        if not self.wrong:
            return F
        return V if self.opts.strict else N


class _ExistentialProgress(_Progress):
    def __init__(self, rts, opts):
        super().__init__(rts, opts)
        self.good: set[str] = set()
        self.fulfilled = False
        self.violated = False

    def is_good(self, traj, b, a) -> bool:
        raise NotImplementedError

    def update(self, traj, t):
        rt = self.rts[0]
        wrong_now = False
        for b, a in rt.pairs:
            if traj.current(active(b, a)):
                if self.is_good(traj, b, a):
                    self.good.add(a)
                else:
                    wrong_now = True
        if not self.fulfilled and len(self.good) == len(rt.agents):
            self.fulfilled = True
        if self.opts.strict and wrong_now and not self.fulfilled:
            self.violated = True
        if self.violated:
            return V
        return F if self.fulfilled else N


class _MustUseProgress(_ExistentialProgress):
    def is_good(self, traj, b, a):
        return traj.current(used_obj(b, a)) in self.rts[0].objects


class _MustAtProgress(_ExistentialProgress):
    def is_good(self, traj, b, a):
        here = traj.current(position(a))
        tol = self.opts.at_tolerance
        return any(_at(here, traj.current(position(o)), tol) for o in self.rts[0].objects)


class _BeforeProgress(_Progress):
    def __init__(self, rts, opts):
        super().__init__(rts, opts)
        self.cover = [set(), set()]
        self.latest_first: int | None = None
        self.earliest_second: int | None = None

    def update(self, traj, t):
        for side, rt in enumerate(self.rts):
            for pair in rt.pairs:
                if traj.current(active(*pair)):
                    self.cover[side].add(pair)
                    if side == 0:
                        self.latest_first = t
                    elif self.earliest_second is None:
                        self.earliest_second = t
        if self.earliest_second is not None and (
            self.latest_first is None or self.latest_first >= self.earliest_second
        ):
            return V
        if all(len(c) == len(rt.pairs) for c, rt in zip(self.cover, self.rts)):
            return F
        return N


class _EqualsProgress(_Progress):
    def __init__(self, rts, opts):
        super().__init__(rts, opts)
        self.cover = [set(), set()]
        self.mismatch = False
        self.first_time: int | None = None
        self.spread = False

    def update(self, traj, t):
        fired = [False, False]
        for side, rt in enumerate(self.rts):
            for pair in rt.pairs:
                if traj.current(active(*pair)):
                    self.cover[side].add(pair)
                    fired[side] = True
        if fired[0] != fired[1]:
            self.mismatch = True
        if fired[0] or fired[1]:
            if self.first_time is None:
                self.first_time = t
            elif t != self.first_time:
                self.spread = True
        if self.mismatch:
            return V
        if not self.spread and all(len(c) == len(rt.pairs) for c, rt in zip(self.cover, self.rts)):
            return F
        return N


MONITORS = {
    "must": _MustProgress,
    "use": _UseProgress,
    "mustUse": _MustUseProgress,
    "mustAt": _MustAtProgress,
    "before": _BeforeProgress,
    "equals": _EqualsProgress,
}


class NormMonitor:
    """Incremental evaluator for one norm over a growing trajectory.

    Call :meth:`step` once per recorded time point, starting with the first.
    """

    def __init__(self, norm: Norm, g: Grounding, options: SemanticsOptions = DEFAULT_OPTIONS):
        if norm.qualifier not in MONITORS:
            raise ValueError(f"unsupported qualifier {norm.qualifier!r}")
        self.norm = norm
        self.options = options
        self.resolved = [resolve(t, g) for t in norm.triples]
        self.grounded = all(rt.grounded for rt in self.resolved)
        if not self.grounded:
            warnings.warn(f"norm {norm} has an ungrounded role or act; it stays neutral", stacklevel=2)
        self._progress = MONITORS[norm.qualifier](self.resolved, options)
        self.t: int | None = None
        self.previous = N
        self.current = N

    def step(self, traj: Trajectory) -> tuple[NormState, NormState]:
        t = traj.t_now
        if t is None:
            raise MonitorError("trajectory is empty")
        expected = traj.t_start if self.t is None else self.t + 1
        if t != expected:
            raise MonitorError(f"monitor expected t={expected}, trajectory is at t={t}")
        self.t = t
        self.previous = self.current
        if self.grounded:
            self.current = self._progress.update(traj, t)
        return self.previous, self.current


def monitor_step(m: NormMonitor, traj: Trajectory) -> tuple[NormState, NormState]:
    return m.step(traj)


def make_monitors(
    inst: Institution, g: Grounding, options: SemanticsOptions = DEFAULT_OPTIONS
) -> list[NormMonitor]:
    return [NormMonitor(n, g, options) for n in inst.norms]


def timeline(
    inst: Institution, traj: Trajectory, g: Grounding, options: SemanticsOptions = DEFAULT_OPTIONS
) -> list[tuple[int, int, NormState]]:
    """Replay ``traj`` step by step; rows of (t, norm_index, state)."""
    rows = []
    if traj.empty:
        return rows
    monitors = make_monitors(inst, g, options)
    replay = Trajectory(traj.t_start)
    for t, changed in traj.iter_steps():
        replay.record(changed, t=t)
        for i, m in enumerate(monitors):
            rows.append((t, i, m.step(replay)[1]))
    return rows
