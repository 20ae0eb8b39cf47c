"""Tabular and linear Q-learning over the norm-shaped gridworld."""
from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, fields
from typing import Hashable, Mapping, Sequence

import numpy as np

from .abstraction import BoundPolicy, bind_policy
from .gridworld import ConfigError, GridWorld, ScenarioConfig, reset
from .institution import Grounding, Institution, check_admissible
from .norms import DEFAULT_OPTIONS, NormState, SemanticsOptions, make_monitors
from .shaping import Control, Scheme, ShapingPolicy, StepOutcome, distribute_rewards
from .trajectory import Trajectory


@dataclass
class TrainingConfig:
    episodes: int = 2000
    learner: str = "tabular"  # tabular | linear
    alpha: float | None = None  # None: 0.1 tabular, 0.01 linear
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_fraction: float = 0.5
    contextual: bool = True  # linear only: separate weights per discrete phase
    context: str = "flags"  # linear only: phase from layout flags or from norm states
    q_init: float = 0.0  # initial value of every Q(s, a); optimism drives exploration
    alpha_negative: float | None = None  # hysteretic rate for negative TD errors; None: alpha
    tiles: bool = False  # linear only: expand ray readings into channel x distance indicators
    seed: int = 0

    def __post_init__(self):
        if self.learner not in ("tabular", "linear"):
            raise ConfigError(f"unknown learner {self.learner!r}")
        if self.alpha is None:
            self.alpha = 0.1 if self.learner == "tabular" else 0.01
        if not self.alpha > 0:
            raise ConfigError("alpha must be positive")
        if self.alpha_negative is not None and not 0 <= self.alpha_negative <= self.alpha:
            raise ConfigError("alpha_negative must lie in [0, alpha]")
        if not 0 <= self.gamma <= 1:
            raise ConfigError("gamma must lie in [0, 1]")
        for name in ("epsilon_start", "epsilon_end"):
            if not 0 <= getattr(self, name) <= 1:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.episodes < 0:
            raise ConfigError("episodes must be >= 0")
        if self.context not in ("flags", "norms"):
            raise ConfigError(f"unknown context source {self.context!r}")

    def epsilon(self, episode: int) -> float:
        horizon = self.epsilon_decay_fraction * self.episodes
        if horizon <= 0 or episode >= horizon:
            return self.epsilon_end
        frac = episode / horizon
        return self.epsilon_start + frac * (self.epsilon_end - self.epsilon_start)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "TrainingConfig":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown training keys {sorted(unknown)}")
        return cls(**doc)


class TabularQ:
    """Q-table; unseen keys read as ``q_init`` for every action."""

    kind = "tabular"

    def __init__(self, n_actions: int, q_init: float = 0.0):
        self.n_actions = n_actions
        self.q_init = float(q_init)
        self.table: dict[Hashable, list[float]] = {}

    def values(self, obs) -> list[float]:
        row = self.table.get(obs)
        return row if row is not None else [self.q_init] * self.n_actions

    def _row(self, obs) -> list[float]:
        row = self.table.get(obs)
        if row is None:
            row = self.table[obs] = [self.q_init] * self.n_actions
        return row

    def adjust(self, obs, action: int, delta: float, alpha: float) -> None:
        self._row(obs)[action] += alpha * delta

    def to_payload(self) -> dict:
        return {
            "n_actions": self.n_actions,
            "q_init": self.q_init,
            "entries": [[_key_to_json(k), v] for k, v in self.table.items()],
        }

    @classmethod
    def from_payload(cls, doc) -> "TabularQ":
        q = cls(doc["n_actions"], doc.get("q_init", 0.0))
        for key, row in doc["entries"]:
            q.table[_key_from_json(key)] = [float(v) for v in row]
        return q


class LinearQ:
    """Q(s, a) = w[c, a] . x(s), optionally with one weight set per context c."""

    kind = "linear"

    def __init__(
        self,
        n_features: int,
        n_actions: int,
        n_contexts: int = 1,
        q_init: float = 0.0,
        bias: slice | None = None,
    ):
        self.n_features = n_features
        self.n_actions = n_actions
        self.n_contexts = n_contexts
        self.weights = np.zeros((n_contexts, n_actions, n_features))
        if q_init:
            if bias is None:
                raise ValueError("q_init needs the slice of a one-hot group that always sums to 1")
            self.weights[:, :, bias] = q_init

    def _split(self, obs):
        ctx, x = obs
        if len(x) != self.n_features:
            raise ValueError(f"feature vector has {len(x)} entries, expected {self.n_features}")
        return (ctx if self.n_contexts > 1 else 0), x

    def values(self, obs) -> np.ndarray:
        c, x = self._split(obs)
        return self.weights[c] @ x

    def adjust(self, obs, action: int, delta: float, alpha: float) -> None:
        c, x = self._split(obs)
        self.weights[c, action] += alpha * delta * x

    def to_payload(self) -> dict:
        return {
            "n_features": self.n_features,
            "n_actions": self.n_actions,
            "n_contexts": self.n_contexts,
            "weights": self.weights.tolist(),
        }

    @classmethod
    def from_payload(cls, doc) -> "LinearQ":
        q = cls(doc["n_features"], doc["n_actions"], doc["n_contexts"])
        q.weights = np.asarray(doc["weights"], dtype=float).reshape(q.weights.shape)
        return q


def _key_to_json(key):
    if isinstance(key, tuple):
        return {"t": [_key_to_json(k) for k in key]}
    return key


def _key_from_json(doc):
    if isinstance(doc, dict):
        return tuple(_key_from_json(k) for k in doc["t"])
    return doc


def td_update(q, s, a: int, r: float, s_next, terminal: bool, cfg) -> float:
    """One Q-learning step; returns the TD error."""
    target = r if terminal else r + cfg.gamma * float(max(q.values(s_next)))
    delta = target - float(q.values(s)[a])
    rate = cfg.alpha if delta >= 0 or cfg.alpha_negative is None else cfg.alpha_negative
    q.adjust(s, a, delta, rate)
    return delta


def greedy(values: Sequence[float], rng: random.Random) -> int:
    best = max(values)
    ties = [i for i, v in enumerate(values) if v == best]
    return ties[0] if len(ties) == 1 else ties[rng.randrange(len(ties))]


def select_action(q, obs, epsilon: float, rng: random.Random) -> int:
    if not 0 <= epsilon <= 1:
        raise ValueError("epsilon must lie in [0, 1]")
    n = q.n_actions
    if n == 0:
        raise ValueError("empty action space")
    if epsilon > 0 and rng.random() < epsilon:
        return rng.randrange(n)
    return greedy(list(q.values(obs)), rng)


def new_q(cfg: TrainingConfig, policy: BoundPolicy):
    if cfg.learner == "tabular":
        if policy.mode != "tabular-abstract":
            raise ConfigError("the tabular learner needs the tabular-abstract observation")
        return TabularQ(len(policy.actions), cfg.q_init)
    if policy.mode == "tabular-abstract":
        raise ConfigError("the linear learner needs the abstract or full observation")
    n_ctx = policy.n_contexts if cfg.contextual else 1
    return LinearQ(policy.n_features, len(policy.actions), n_ctx, cfg.q_init, policy.bias_slice)


# -- environment + institution stack ------------------------------------------


@dataclass
class ShapingConfig:
    scheme: str = "adherence_only"
    per_norm_reward: float | str | None = None  # None or "auto": 1 / number of norms
    adherence_reward: float = 1.0
    step_penalty: float = 1.0e-4

    def __post_init__(self):
        if self.per_norm_reward == "auto":
            self.per_norm_reward = None
        elif self.per_norm_reward is not None and not isinstance(self.per_norm_reward, (int, float)):
            raise ConfigError(f"per_norm_reward must be a number or 'auto', got {self.per_norm_reward!r}")
        if self.scheme not in ("A", "B") and self.scheme not in {s.value for s in Scheme}:
            raise ConfigError(f"unknown shaping scheme {self.scheme!r}")

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ShapingConfig":
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown shaping keys {sorted(unknown)}")
        return cls(**doc)

    def build(self, n_norms: int, max_episode_steps: int) -> ShapingPolicy:
        return ShapingPolicy(
            self.scheme,
            n_norms,
            per_norm_reward=self.per_norm_reward,
            adherence_reward=self.adherence_reward,
            step_penalty=self.step_penalty,
            max_episode_steps=max_episode_steps,
        )


@dataclass
class EnvStep:
    outcome: StepOutcome
    rewards: dict[str, float]
    done: bool
    terminal: bool  # true end of the task (no bootstrapping)
    states: list[NormState] = field(default_factory=list)


class NormativeEnv:
    """Gridworld plus trajectory, norm monitors and reward shaping.

    Observations are built by the bound policies; this class owns the
    dynamics, the reward stream and episode control.
    """

    def __init__(
        self,
        scenario: ScenarioConfig,
        inst: Institution,
        g: Grounding,
        shaping: ShapingConfig,
        options: SemanticsOptions = DEFAULT_OPTIONS,
    ):
        self.scenario = scenario
        self.inst = inst
        self.g = g
        self.options = options
        self.shaping = shaping.build(len(inst.norms), scenario.max_episode_steps)
        self.world: GridWorld | None = None
        self.traj: Trajectory | None = None
        self.monitors = []

    def reset(self, seed: int) -> GridWorld:
        self.world, initial = reset(self.scenario, seed)
        problems = check_admissible(self.g, self.inst, self.world.vocabulary())
        if problems:
            raise ConfigError("grounding is not admissible: " + "; ".join(problems))
        self.traj = Trajectory(0)
        self.traj.record(initial, t=0)
        self.monitors = make_monitors(self.inst, self.g, self.options)
        for m in self.monitors:
            m.step(self.traj)
        self.shaping.reset()
        if self.scenario.debug:
            print(f"t=0\n{self.world.render()}")
        return self.world

    @property
    def states(self) -> list[NormState]:
        return [m.current for m in self.monitors]

    def step(self, commands) -> EnvStep:
        world = self.world
        changed = world.step(commands)
        self.traj.record(changed, t=world.t)
        transitions = [m.step(self.traj) for m in self.monitors]
        outcome = self.shaping.step(transitions, world.t)
        rewards = distribute_rewards(outcome, self.g, self.inst)
        terminal = outcome.control is not Control.CONTINUE
        done = terminal or world.t >= world.max_episode_steps
        if self.scenario.debug:
            states = "".join(s.value for s in self.states)
            print(f"t={world.t} reward={outcome.reward:.4f} states={states}\n{world.render()}")
        return EnvStep(outcome, rewards, done, terminal, self.states)


def _acting(world: GridWorld, agent: str) -> bool:
    return world.t % world.agents[agent].period == 0


@dataclass
class EpisodeResult:
    rewards: dict[str, float]
    adherent: bool
    steps: int


def run_episode(
    env: NormativeEnv,
    policies: Mapping[str, BoundPolicy],
    seed: int,
    epsilon: float,
    rng: random.Random,
    cfg: TrainingConfig | None = None,
) -> EpisodeResult:
    """Play one episode; learns in place when ``cfg`` is given."""
    world = env.reset(seed)
    for agent, pol in policies.items():
        if agent not in world.agents:
            raise ConfigError(f"policy for agent {agent!r} not in the scenario")
    totals = {a: 0.0 for a in policies}
    pending: dict[str, list] = {}  # agent -> [obs, action, accumulated reward]
    step = None
    while True:
        commands = {}
        states = env.states
        for agent, pol in policies.items():
            if not _acting(world, agent):
                continue
            obs = pol.observe(world, states)
            if cfg is not None and agent in pending:
                s, a, r = pending[agent]
                td_update(pol.q, s, a, r, obs, False, cfg)
            action = select_action(pol.q, obs, epsilon, rng)
            pending[agent] = [obs, action, 0.0]
            commands[agent] = pol.actions.dispatch(action)
        step = env.step(commands)
        for agent in policies:
            r = step.rewards.get(agent, 0.0)
            totals[agent] += r
            if agent in pending:
                pending[agent][2] += r
        if step.done:
            break
    if cfg is not None:
        states = env.states
        for agent, (s, a, r) in pending.items():
            pol = policies[agent]
            nxt = None if step.terminal else pol.observe(world, states)
            td_update(pol.q, s, a, r, nxt, step.terminal, cfg)
    return EpisodeResult(totals, step.outcome.adherent and step.terminal, world.t)


def bind_all(
    env: NormativeEnv, mode: str, seed: int, qs: Mapping[str, object] | None = None, cfg=None
) -> dict[str, BoundPolicy]:
    """One policy per grounded agent present in the scenario."""
    world = env.reset(seed)
    out = {}
    for agent in sorted(env.g.grounded_agents):
        if agent not in world.agents:
            raise ConfigError(f"grounded agent {agent!r} is not in scenario {env.scenario.scenario}")
        pol = bind_policy(
            None, mode, env.inst, env.g, agent, world,
            tiles=bool(cfg and cfg.tiles), context=cfg.context if cfg else "flags",
        )
        pol.q = qs[agent] if qs is not None else new_q(cfg, pol)
        out[agent] = pol
    return out


def train(
    env: NormativeEnv,
    policies: Mapping[str, BoundPolicy],
    cfg: TrainingConfig,
    trial: int = 0,
    learn: bool = True,
    epsilon: float | None = None,
) -> list[dict]:
    """Run ``cfg.episodes`` episodes; returns one curve row per episode per agent."""
    rng = random.Random(cfg.seed)
    env_rng = random.Random(cfg.seed ^ 0x5EED)
    rows = []
    for ep in range(cfg.episodes):
        eps = cfg.epsilon(ep) if epsilon is None else epsilon
        res = run_episode(env, policies, env_rng.getrandbits(32), eps, rng, cfg if learn else None)
        for agent in sorted(policies):
            rows.append(
                {
                    "episode": ep,
                    "trial": trial,
                    "agent": agent,
                    "cum_reward": res.rewards[agent],
                    "adherent": res.adherent,
                    "steps": res.steps,
                }
            )
    return rows


def adherence_rate(rows: Sequence[dict], last: int | None = None) -> float:
    episodes = {}
    for row in rows:
        episodes[row["episode"]] = row["adherent"]
    flags = [episodes[e] for e in sorted(episodes)]
    if last is not None:
        flags = flags[-last:]
    return sum(flags) / len(flags) if flags else 0.0


def episodes_to_rate(rows: Sequence[dict], rate: float, window: int = 100) -> float:
    """First episode at which the trailing-window adherence reaches ``rate`` (inf if never)."""
    episodes = {}
    for row in rows:
        episodes[row["episode"]] = row["adherent"]
    flags = [episodes[e] for e in sorted(episodes)]
    run = 0
    for i, f in enumerate(flags):
        run += f
        if i >= window:
            run -= flags[i - window]
        if i + 1 >= window and run >= rate * window - 1e-9:
            return float(i + 1)
    return math.inf
