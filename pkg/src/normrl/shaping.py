"""Turning norm-state transitions into rewards and episode control."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .institution import Grounding, Institution
from .norms import F, N, V, NormState

ALL_TRANSITIONS = tuple((p, c) for p in (F, N, V) for c in (F, N, V))


def full_adherence_reward(states: Sequence[NormState]) -> int:
    for ns in states:
        if ns is not F:
            return 0
    return 1


@dataclass(frozen=True)
class TransitionTable:
    values: Mapping[tuple[NormState, NormState], float]

    def __post_init__(self):
        vals = {(NormState(p), NormState(c)): float(v) for (p, c), v in dict(self.values).items()}
        missing = set(ALL_TRANSITIONS) - set(vals)
        if missing:
            raise ValueError(f"transition table misses {sorted((str(p), str(c)) for p, c in missing)}")
        if not all(math.isfinite(v) for v in vals.values()):
            raise ValueError("transition table values must be finite")
        object.__setattr__(self, "values", vals)

    @classmethod
    def default(cls, per_norm_reward: float) -> "TransitionTable":
        return cls({tr: (per_norm_reward if tr == (N, F) else 0.0) for tr in ALL_TRANSITIONS})

    def __getitem__(self, transition) -> float:
        return self.values[transition]


class Scheme(str, enum.Enum):
    ADHERENCE_ONLY = "adherence_only"
    TRANSITION_TABLE = "transition_table"
    STOP_AFTER_VIOLATION = "stop_after_violation"
    RESTART_AFTER_VIOLATION = "restart_after_violation"

    @classmethod
    def parse(cls, name: str) -> "Scheme":
        aliases = {"A": cls.STOP_AFTER_VIOLATION, "B": cls.RESTART_AFTER_VIOLATION}
        if name in aliases:
            return aliases[name]
        return cls(name)


class Control(str, enum.Enum):
    CONTINUE = "continue"
    TERMINATE_SUCCESS = "terminate_success"
    TERMINATE_VIOLATION = "terminate_violation"


@dataclass
class StepOutcome:
    reward: float
    control: Control
    # components, kept for per-agent distribution
    norm_rewards: list[float] = field(default_factory=list)
    adherence_bonus: float = 0.0
    penalty: float = 0.0
    adherent: bool = False


@dataclass
class ShapingPolicy:
    """Per-episode reward shaper.

    ``per_norm_reward=None`` means 1 / number of norms.  Under schemes A and B
    a norm earns its (n, f) reward at most once per episode, and nothing
    positive is paid from the first violation on.
    """

    scheme: Scheme
    n_norms: int
    per_norm_reward: float | None = None
    adherence_reward: float = 1.0
    step_penalty: float = 1.0e-4
    max_episode_steps: int = 300
    table: TransitionTable | None = None
    violated_latch: bool = field(default=False, init=False)
    _paid: set = field(default_factory=set, init=False, repr=False)

    def __post_init__(self):
        if isinstance(self.scheme, str):
            self.scheme = Scheme.parse(self.scheme)
        if self.step_penalty < 0:
            raise ValueError("step_penalty must be >= 0")
        if self.per_norm_reward is None:
            self.per_norm_reward = 1.0 / self.n_norms if self.n_norms else 0.0
        if self.table is None:
            self.table = TransitionTable.default(self.per_norm_reward)

    def reset(self) -> None:
        self.violated_latch = False
        self._paid = set()

    def step(self, transitions: Sequence[tuple[NormState, NormState]], t: int) -> StepOutcome:
        if len(transitions) != self.n_norms:
            raise ValueError(f"expected {self.n_norms} transitions, got {len(transitions)}")
        p = self.step_penalty
        adherent = all(c is F for _, c in transitions)
        success = Control.TERMINATE_SUCCESS if adherent else Control.CONTINUE
        zeros = [0.0] * self.n_norms

        if self.scheme is Scheme.ADHERENCE_ONLY:
            bonus = self.adherence_reward * full_adherence_reward([c for _, c in transitions])
            return StepOutcome(bonus - p, success, zeros, bonus, p, adherent)

        if self.scheme is Scheme.TRANSITION_TABLE:
            norm_rewards = [self.table[tr] for tr in transitions]
            bonus = self.adherence_reward if adherent else 0.0
            return StepOutcome(sum(norm_rewards) + bonus - p, success, norm_rewards, bonus, p, adherent)

        # schemes A and B
        if self.violated_latch:
            return StepOutcome(-p, success, zeros, 0.0, p, adherent)
        if any(c is V for _, c in transitions):
            self.violated_latch = True
            if self.scheme is Scheme.RESTART_AFTER_VIOLATION:
                remaining = max(self.max_episode_steps - t, 0) * p
                return StepOutcome(-remaining, Control.TERMINATE_VIOLATION, zeros, 0.0, remaining, False)
            return StepOutcome(-p, Control.CONTINUE, zeros, 0.0, p, False)
        norm_rewards = []
        for i, tr in enumerate(transitions):
            r = self.table[tr]
            if r > 0:
                if i in self._paid:
                    r = 0.0
                else:
                    self._paid.add(i)
            norm_rewards.append(r)
        bonus = self.adherence_reward if adherent else 0.0
        return StepOutcome(sum(norm_rewards) + bonus - p, success, norm_rewards, bonus, p, adherent)


def shaping_step(policy: ShapingPolicy, transitions, t: int) -> StepOutcome:
    return policy.step(transitions, t)


def distribute_rewards(outcome: StepOutcome, g: Grounding, inst: Institution) -> dict[str, float]:
    """Split one step's outcome over the agents grounded to the institution's roles.

    Every grounded agent gets the adherence bonus and pays the step penalty;
    a norm's shaping reward goes to the agents of the roles in its triples.
    """
    agents = sorted(g.grounded_agents)
    out = {a: outcome.adherence_bonus - outcome.penalty for a in agents}
    for norm, r in zip(inst.norms, outcome.norm_rewards):
        if not r:
            continue
        credited = set()
        for role in norm.roles:
            credited |= g.agents_of_role(role)
        for a in credited:
            out[a] += r
    return out
