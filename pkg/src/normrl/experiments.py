"""Experiment runner: configs, trials, CSV output, policy artifacts and trace verification."""
from __future__ import annotations

import csv
import io
import json
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib.resources import files
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np

from .abstraction import BoundPolicy, IncompatibleLayoutError, OBSERVATION_MODES, bind_policy, reground
from .gridworld import ConfigError, ScenarioConfig
from .institution import Grounding, Institution, InstitutionError, parse_grounding, parse_institution
from .learning import (
    LinearQ,
    NormativeEnv,
    ShapingConfig,
    TabularQ,
    TrainingConfig,
    adherence_rate,
    bind_all,
    episodes_to_rate,
    train,
)
from .norms import N, timeline
from .trajectory import TrajectoryError, read_trace

EXPERIMENTS = ("e1", "e2", "e3", "e4", "e5")
CURVE_FIELDS = ("episode", "trial", "agent", "cum_reward", "adherent", "steps")
FORMAT_VERSION = 1
DATA_DIR = files("normrl") / "data"


# -- file resolution ------------------------------------------------------------


def resolve_path(name: str, base: Path | None = None):
    """Look ``name`` up next to the config first, then among the packaged fixtures."""
    candidates = []
    p = Path(name)
    if p.is_absolute():
        candidates.append(p)
    else:
        if base is not None:
            candidates.append(base / p)
        candidates.append(Path.cwd() / p)
        candidates.append(DATA_DIR / name)
        candidates.append(DATA_DIR / "configs" / name)
    for c in candidates:
        if c.is_file():
            return c
    raise ConfigError(f"file not found: {name}")


def load_institution(name: str, base: Path | None = None) -> Institution:
    try:
        return parse_institution(resolve_path(name, base).read_text())
    except InstitutionError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def load_grounding(name: str, inst: Institution, base: Path | None = None) -> Grounding:
    try:
        return parse_grounding(resolve_path(name, base).read_text(), inst)
    except InstitutionError as exc:
        raise ConfigError(f"{name}: {exc}") from None


# -- experiment specification --------------------------------------------------------------


@dataclass
class ArmSpec:
    """One learning setup: a scenario, an institution stack, an encoding and a learner."""

    name: str
    scenario: ScenarioConfig
    institution: Institution
    grounding: Grounding
    shaping: ShapingConfig
    mode: str
    training: TrainingConfig

    @classmethod
    def from_dict(cls, name: str, doc: Mapping, base: Path | None = None) -> "ArmSpec":
        allowed = {"scenario", "institution", "grounding", "shaping", "mode", "training"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"arm {name}: unknown keys {sorted(unknown)}")
        missing = {"scenario", "institution", "grounding"} - set(doc)
        if missing:
            raise ConfigError(f"arm {name}: missing keys {sorted(missing)}")
        inst = load_institution(doc["institution"], base)
        g = load_grounding(doc["grounding"], inst, base)
        mode = doc.get("mode", "tabular-abstract")
        if mode not in OBSERVATION_MODES:
            raise ConfigError(f"arm {name}: unknown mode {mode!r}")
        try:
            return cls(
                name,
                ScenarioConfig.from_dict(doc["scenario"]),
                inst,
                g,
                ShapingConfig.from_dict(doc.get("shaping", {})),
                mode,
                TrainingConfig.from_dict(doc.get("training", {})),
            )
        except TypeError as exc:
            raise ConfigError(f"arm {name}: {exc}") from None

    def make_env(self) -> NormativeEnv:
        return NormativeEnv(self.scenario, self.institution, self.grounding, self.shaping)


@dataclass
class TransferTarget:
    name: str
    scenario: ScenarioConfig
    grounding: Grounding


@dataclass
class ExperimentSpec:
    id: str
    arms: dict[str, ArmSpec]
    trials: int = 10
    seed: int = 0
    targets: dict[str, TransferTarget] = field(default_factory=dict)
    eval_episodes: int = 100
    budget_episodes: int = 200
    thresholds: dict[str, float] = field(default_factory=dict)
    source_policy: str | None = None
    target_training: dict = field(default_factory=dict)  # e3: overrides for continued / scratch runs

    @classmethod
    def from_dict(cls, doc: Mapping, base: Path | None = None) -> "ExperimentSpec":
        allowed = {
            "experiment", "arms", "trials", "seed", "targets", "eval_episodes",
            "budget_episodes", "thresholds", "source_policy", "target_training", "description",
        }
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"unknown experiment keys {sorted(unknown)}")
        eid = doc.get("experiment")
        if eid not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got {eid!r}")
        if not isinstance(doc.get("arms"), Mapping) or not doc["arms"]:
            raise ConfigError("experiment needs a non-empty 'arms' mapping")
        arms = {name: ArmSpec.from_dict(name, a, base) for name, a in doc["arms"].items()}
        targets = {}
        for name, t in doc.get("targets", {}).items():
            source = arms.get("source")
            if source is None:
                raise ConfigError("transfer targets need a 'source' arm")
            targets[name] = TransferTarget(
                name,
                ScenarioConfig.from_dict(t["scenario"]),
                load_grounding(t["grounding"], source.institution, base),
            )
        spec = cls(
            eid,
            arms,
            trials=int(doc.get("trials", 10)),
            seed=int(doc.get("seed", 0)),
            targets=targets,
            eval_episodes=int(doc.get("eval_episodes", 100)),
            budget_episodes=int(doc.get("budget_episodes", 200)),
            thresholds=dict(doc.get("thresholds", {})),
            source_policy=doc.get("source_policy"),
            target_training=dict(doc.get("target_training", {})),
        )
        spec.validate()
        return spec

    def validate(self) -> None:
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        need = {"e2": {"abstract", "full"}, "e3": {"source"}, "e4": {"A", "B"}}.get(self.id, set())
        if not need <= set(self.arms):
            raise ConfigError(f"{self.id} needs arms {sorted(need)}")
        if self.id == "e3" and not {"drill", "factory"} <= set(self.targets):
            raise ConfigError("e3 needs transfer targets 'drill' and 'factory'")
        if self.target_training:
            if "source" not in self.arms:
                raise ConfigError("target_training needs a 'source' arm")
            TrainingConfig.from_dict({**self.arms["source"].training.__dict__, **self.target_training})
        if self.id == "e5":
            for arm in self.arms.values():
                if len(arm.grounding.grounded_agents) < 2:
                    raise ConfigError("e5 needs at least two grounded agents")


def load_spec(path: str | Path) -> ExperimentSpec:
    path = resolve_path(str(path))
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return ExperimentSpec.from_dict(doc, Path(path).parent)


def trial_seeds(seed: int, trials: int) -> list[int]:
    """Independent 32-bit seeds per trial, stable for a given master seed."""
    children = np.random.SeedSequence(seed).spawn(trials)
    return [int(c.generate_state(1)[0]) for c in children]


# -- policy artifacts -----------------------------------------------------------------


@dataclass
class PolicyArtifact:
    format_version: int
    fingerprint: str
    institution: str
    mode: str
    tiles: bool
    context: str
    payload: dict

    def q(self):
        kind = self.payload.get("kind")
        if kind == "tabular":
            return TabularQ.from_payload(self.payload)
        if kind == "linear":
            return LinearQ.from_payload(self.payload)
        raise ConfigError(f"unknown value-function kind {kind!r}")

    def to_dict(self) -> dict:
        return {
            "format_version": self.format_version,
            "fingerprint": self.fingerprint,
            "institution": self.institution,
            "mode": self.mode,
            "tiles": self.tiles,
            "context": self.context,
            "payload": self.payload,
        }


def policy_artifact(policy: BoundPolicy) -> PolicyArtifact:
    payload = dict(policy.q.to_payload(), kind=policy.q.kind)
    return PolicyArtifact(
        FORMAT_VERSION,
        policy.inst.fingerprint(),
        policy.inst.name,
        policy.mode,
        policy.tiles is not None,
        policy.context_source,
        payload,
    )


def save_policy(path: str | Path, policy: BoundPolicy) -> PolicyArtifact:
    art = policy_artifact(policy)
    Path(path).write_text(json.dumps(art.to_dict(), separators=(",", ":")))
    return art


def load_policy(path: str | Path, inst: Institution | None = None) -> PolicyArtifact:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read policy {path}: {exc}") from None
    if doc.get("format_version") != FORMAT_VERSION:
        raise ConfigError(f"unsupported policy format {doc.get('format_version')!r}")
    try:
        art = PolicyArtifact(**{k: doc[k] for k in PolicyArtifact.__dataclass_fields__})
    except KeyError as exc:
        raise ConfigError(f"policy {path} lacks field {exc}") from None
    if inst is not None and inst.fingerprint() != art.fingerprint:
        raise IncompatibleLayoutError(
            f"policy was trained for institution {art.institution!r} with a different category list"
        )
    return art


def bind_artifact(art: PolicyArtifact, inst: Institution, g: Grounding, env: NormativeEnv, seed: int = 0):
    """Bind a loaded artifact to ``g`` on ``env``'s board; one policy per grounded agent of the role."""
    if inst.fingerprint() != art.fingerprint:
        raise IncompatibleLayoutError(f"policy fingerprint does not match institution {inst.name!r}")
    world = env.reset(seed)
    out = {}
    for agent in sorted(g.grounded_agents):
        out[agent] = bind_policy(art.q(), art.mode, inst, g, agent, world, tiles=art.tiles, context=art.context)
    return out


# -- running --------------------------------------------------------------------------


def evaluate(env: NormativeEnv, policies: Mapping[str, BoundPolicy], episodes: int, seed: int) -> float:
    """Greedy adherence rate without learning."""
    cfg = TrainingConfig(episodes=episodes, seed=seed)
    rows = train(env, policies, cfg, learn=False, epsilon=0.0)
    return adherence_rate(rows)


def _train_arm(arm: ArmSpec, seed: int, trial: int, qs=None, episodes: int | None = None):
    cfg = TrainingConfig.from_dict({**arm.training.__dict__, "seed": seed})
    if episodes is not None:
        cfg.episodes = episodes
    env = arm.make_env()
    policies = bind_all(env, arm.mode, seed, qs=qs, cfg=cfg)
    rows = train(env, policies, cfg, trial=trial)
    return env, policies, rows


def run_trial(spec: ExperimentSpec, trial: int, seed: int) -> dict:
    """Everything one trial produces: curve rows per arm plus experiment extras."""
    t0 = time.perf_counter()
    curves: dict[str, list[dict]] = {}
    extras: dict[str, Any] = {}
    if spec.id == "e3":
        source = spec.arms["source"]
        if spec.source_policy:
            art = load_policy(resolve_path(spec.source_policy), source.institution)
            env = source.make_env()
            policies = bind_artifact(art, source.institution, source.grounding, env, seed)
        else:
            env, policies, curves["source"] = _train_arm(source, seed, trial)
        (src,) = policies.values()
        for name, target in spec.targets.items():
            tenv = NormativeEnv(target.scenario, source.institution, target.grounding, source.shaping)
            world = tenv.reset(seed)
            moved = reground(src, target.grounding, world)
            extras[f"zero_shot_{name}"] = evaluate(tenv, {moved.agent: moved}, spec.eval_episodes, seed)
        # continued training (B2) and from-scratch training (B3) in the factory
        factory = spec.targets["factory"]
        tcfg = TrainingConfig.from_dict({**source.training.__dict__, **spec.target_training})
        tarm = ArmSpec(
            "factory", factory.scenario, source.institution, factory.grounding,
            source.shaping, source.mode, tcfg,
        )
        copy = type(src.q).from_payload(src.q.to_payload())
        agent = sorted(factory.grounding.agents_of_role(source.grounding.roles_of_agent(src.agent)[0]))[0]
        _, _, curves["continued"] = _train_arm(tarm, seed, trial, {agent: copy}, spec.budget_episodes)
        _, _, curves["scratch"] = _train_arm(tarm, seed, trial, None, spec.budget_episodes)
        extras["scratch_rate"] = adherence_rate(curves["scratch"], last=100)
        extras["continued_rate"] = adherence_rate(curves["continued"], last=100)
    else:
        for name, arm in spec.arms.items():
            _, _, curves[name] = _train_arm(arm, seed, trial)
    extras["seconds"] = time.perf_counter() - t0
    return {"trial": trial, "seed": seed, "curves": curves, "extras": extras}


def _run_trial_args(args):
    return run_trial(*args)


def run_trials(spec: ExperimentSpec, workers: int = 1) -> list[dict]:
    seeds = trial_seeds(spec.seed, spec.trials)
    jobs = [(spec, i, s) for i, s in enumerate(seeds)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_trial_args, jobs))
    else:
        results = [run_trial(*j) for j in jobs]
    return sorted(results, key=lambda r: r["trial"])


# -- aggregation and checks ------------------------------------------------------------


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def curves_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CURVE_FIELDS)
    for row in rows:
        w.writerow([_fmt(row[k]) for k in CURVE_FIELDS])
    return buf.getvalue()


def aggregate(rows: list[dict]) -> list[dict]:
    """Per (episode, agent): mean and best cumulative reward over trials, and mean adherence."""
    groups: dict[tuple[int, str], list[dict]] = {}
    for row in rows:
        groups.setdefault((row["episode"], row["agent"]), []).append(row)
    out = []
    for (ep, agent), group in sorted(groups.items()):
        rewards = [r["cum_reward"] for r in group]
        out.append(
            {
                "episode": ep,
                "agent": agent,
                "mean_cum_reward": math.fsum(rewards) / len(rewards),
                "best_cum_reward": max(rewards),
                "mean_adherent": sum(bool(r["adherent"]) for r in group) / len(group),
                "trials": len(group),
            }
        )
    return out


def aggregate_csv(rows: list[dict]) -> str:
    agg = aggregate(rows)
    keys = ("episode", "agent", "mean_cum_reward", "best_cum_reward", "mean_adherent", "trials")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(keys)
    for row in agg:
        w.writerow([_fmt(row[k]) for k in keys])
    return buf.getvalue()


def _median(values):
    return statistics.median(values) if values else math.inf


def _by_arm(results, arm):
    return [r["curves"][arm] for r in results]


def check_e1(spec, results) -> dict:
    th = {"rate": 0.95, "trials": 8, **spec.thresholds}
    rates = [adherence_rate(c, last=100) for c in _by_arm(results, "main")]
    hits = sum(r >= th["rate"] for r in rates)
    return {"final100_rates": rates, "trials_passing": hits, "passed": hits >= th["trials"]}


def check_e2(spec, results) -> dict:
    th = {"rate": 0.9, "ratio": 0.5, **spec.thresholds}
    abstract = [episodes_to_rate(c, th["rate"]) for c in _by_arm(results, "abstract")]
    full = [episodes_to_rate(c, th["rate"]) for c in _by_arm(results, "full")]
    ma, mf = _median(abstract), _median(full)
    passed = math.isfinite(ma) and (math.isinf(mf) or ma <= th["ratio"] * mf)
    return {
        "episodes_to_rate_abstract": abstract,
        "episodes_to_rate_full": full,
        "median_abstract": ma,
        "median_full": mf,
        "passed": passed,
    }


def check_e3(spec, results) -> dict:
    th = {"drill": 0.9, "factory": 0.7, **spec.thresholds}
    drill = statistics.mean(r["extras"]["zero_shot_drill"] for r in results)
    factory = statistics.mean(r["extras"]["zero_shot_factory"] for r in results)
    scratch = statistics.mean(r["extras"]["scratch_rate"] for r in results)
    continued = statistics.mean(r["extras"]["continued_rate"] for r in results)
    return {
        "zero_shot_drill": drill,
        "zero_shot_factory": factory,
        "scratch_rate": scratch,
        "continued_rate": continued,
        "passed": drill >= th["drill"] and factory >= th["factory"] and scratch < 0.5 * factory,
    }


def check_e4(spec, results) -> dict:
    th = {"rate": 0.9, **spec.thresholds}
    a = [episodes_to_rate(c, th["rate"]) for c in _by_arm(results, "A")]
    b = [episodes_to_rate(c, th["rate"]) for c in _by_arm(results, "B")]
    ma, mb = _median(a), _median(b)
    return {
        "episodes_to_rate_A": a,
        "episodes_to_rate_B": b,
        "median_A": ma,
        "median_B": mb,
        "passed": math.isfinite(ma) and math.isfinite(mb) and mb <= ma,
    }


def check_e5(spec, results) -> dict:
    th = {"rate": 0.85, "trials": 7, **spec.thresholds}
    (arm_name,) = spec.arms
    arm = spec.arms[arm_name]
    curves = _by_arm(results, arm_name)
    rates = [adherence_rate(c, last=100) for c in curves]
    hits = sum(r >= th["rate"] for r in rates)
    buyers = sorted(arm.grounding.agents_of_role("Buyer"))
    sellers = sorted(arm.grounding.agents_of_role("Seller"))
    totals = {"buyer": [], "seller": []}
    for rows in curves:
        for row in rows:
            if row["adherent"]:
                if row["agent"] in buyers:
                    totals["buyer"].append(row["cum_reward"])
                elif row["agent"] in sellers:
                    totals["seller"].append(row["cum_reward"])
    mb = statistics.mean(totals["buyer"]) if totals["buyer"] else math.nan
    ms = statistics.mean(totals["seller"]) if totals["seller"] else math.nan
    return {
        "final100_rates": rates,
        "trials_passing": hits,
        "buyer_mean_reward_adherent": mb,
        "seller_mean_reward_adherent": ms,
        "passed": hits >= th["trials"] and mb > ms,
    }


CHECKS: dict[str, Callable[[ExperimentSpec, list[dict]], dict]] = {
    "e1": check_e1,
    "e2": check_e2,
    "e3": check_e3,
    "e4": check_e4,
    "e5": check_e5,
}


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    trials: list[dict]
    summary: dict
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.summary["passed"])


def run_experiment(spec: ExperimentSpec, out: str | Path | None = None, workers: int = 1) -> ExperimentResult:
    """Run all trials, compute the experiment's verdict and optionally write the result files.

    Files per arm: ``curves_<arm>.csv`` and ``aggregate_<arm>.csv``; plus ``summary.json``.
    Timings live only in the summary so the CSVs are reproducible byte for byte.
    """
    t0 = time.perf_counter()
    results = run_trials(spec, workers)
    summary = CHECKS[spec.id](spec, results)
    seconds = time.perf_counter() - t0
    summary = {"experiment": spec.id, "trials": spec.trials, "seed": spec.seed, **summary}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for arm in results[0]["curves"]:
            rows = [row for r in results for row in r["curves"][arm]]
            (out / f"curves_{arm}.csv").write_text(curves_csv(rows))
            (out / f"aggregate_{arm}.csv").write_text(aggregate_csv(rows))
        doc = dict(summary, seconds=seconds, trial_seconds=[r["extras"]["seconds"] for r in results])
        (out / "summary.json").write_text(json.dumps(_jsonable(doc), indent=2) + "\n")
    return ExperimentResult(spec, results, summary, seconds)


# -- trace verification --------------------------------------------------------------------


def verify(inst: Institution, g: Grounding, trace_text: str) -> tuple[str, bool]:
    """Norm-state timeline CSV (t, norm_index, state) and the adherence verdict."""
    traj = read_trace(trace_text.splitlines())
    rows = timeline(inst, traj, g)
    if not rows:  # nothing observed: every norm is still pending
        rows = [(traj.t_start, i, N) for i in range(len(inst.norms))]
    final = {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("t", "norm_index", "state"))
    for t, i, state in rows:
        w.writerow((t, i, state.value))
        final[i] = state
    adherent = bool(inst.norms) and len(final) == len(inst.norms) and all(s.value == "f" for s in final.values())
    buf.write(f"# adherent={'true' if adherent else 'false'}\n")
    return buf.getvalue(), adherent


def verify_files(inst_path, grounding_path, trace_path) -> tuple[str, bool]:
    inst = load_institution(str(inst_path))
    g = load_grounding(str(grounding_path), inst)
    try:
        text = Path(trace_path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read trace {trace_path}: {exc}") from None
    return verify(inst, g, text)


__all__ = [
    "ArmSpec",
    "ExperimentSpec",
    "ExperimentResult",
    "PolicyArtifact",
    "TrajectoryError",
    "aggregate",
    "evaluate",
    "load_policy",
    "load_spec",
    "run_experiment",
    "run_trials",
    "save_policy",
    "trial_seeds",
    "verify",
]
