"""Command line entry point: ``normrl run | verify | policy``."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .abstraction import IncompatibleLayoutError
from .experiments import (
    EXPERIMENTS,
    bind_artifact,
    evaluate,
    load_grounding,
    load_institution,
    load_policy,
    load_spec,
    resolve_path,
    run_experiment,
    save_policy,
    trial_seeds,
    verify_files,
    _train_arm,
)
from .gridworld import ConfigError, ScenarioConfig
from .learning import NormativeEnv, ShapingConfig
from .trajectory import TrajectoryError

EXIT_OK, EXIT_CONFIG, EXIT_CHECK = 0, 2, 3


def _default_config(experiment: str) -> str:
    return f"{experiment}.json"


def cmd_run(args) -> int:
    spec = load_spec(args.config or _default_config(args.experiment))
    if args.experiment and spec.id != args.experiment:
        raise ConfigError(f"config is for experiment {spec.id}, not {args.experiment}")
    if args.trials is not None:
        spec.trials = args.trials
    if args.seed is not None:
        spec.seed = args.seed
    if args.episodes is not None:
        for arm in spec.arms.values():
            arm.training.episodes = args.episodes
    spec.validate()
    result = run_experiment(spec, args.out, workers=args.workers)
    status = "PASS" if result.passed else "FAIL"
    print(f"{spec.id}: {status} in {result.seconds:.1f}s")
    for key, value in result.summary.items():
        if key not in ("experiment", "passed"):
            print(f"  {key}: {value}")
    if args.check and not result.passed:
        return EXIT_CHECK
    return EXIT_OK


def cmd_verify(args) -> int:
    text, adherent = verify_files(args.institution, args.grounding, args.trace)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    print(f"adherent={'true' if adherent else 'false'}", file=sys.stderr)
    return EXIT_OK


def cmd_policy_save(args) -> int:
    spec = load_spec(args.config)
    arm_name = args.arm or next(iter(spec.arms))
    if arm_name not in spec.arms:
        raise ConfigError(f"no arm {arm_name!r} in {args.config}")
    arm = spec.arms[arm_name]
    if args.episodes is not None:
        arm.training.episodes = args.episodes
    seed = trial_seeds(spec.seed if args.seed is None else args.seed, 1)[0]
    _, policies, rows = _train_arm(arm, seed, 0)
    if len(policies) != 1:
        raise ConfigError("policy save handles single-agent arms only")
    (policy,) = policies.values()
    art = save_policy(args.out, policy)
    done = sum(r["adherent"] for r in rows[-100:])
    print(f"saved {art.mode} policy for {art.institution} to {args.out} ({done}/100 adherent at the end)")
    return EXIT_OK


def cmd_policy_load(args) -> int:
    inst = load_institution(args.institution) if args.institution else None
    art = load_policy(args.policy, inst)
    info = {
        "format_version": art.format_version,
        "institution": art.institution,
        "fingerprint": art.fingerprint,
        "mode": art.mode,
        "kind": art.payload.get("kind"),
    }
    print(json.dumps(info, indent=2))
    return EXIT_OK


def cmd_policy_reground(args) -> int:
    inst = load_institution(args.institution)
    art = load_policy(args.policy, inst)
    g = load_grounding(args.grounding, inst)
    scenario = ScenarioConfig.from_dict(json.loads(Path(resolve_path(args.scenario)).read_text()))
    env = NormativeEnv(scenario, inst, g, ShapingConfig())
    policies = bind_artifact(art, inst, g, env, args.seed)
    rate = evaluate(env, policies, args.episodes, args.seed)
    print(f"zero-shot adherence over {args.episodes} episodes: {rate:.3f}")
    if args.check is not None and rate < args.check:
        return EXIT_CHECK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="normrl", description="Institution-shaped reinforcement learning")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and write CSV results")
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--config", help="experiment JSON (default: the packaged <experiment>.json)")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--episodes", type=int, help="override the episode budget of every arm")
    run.add_argument("--out", help="output directory")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--check", action="store_true", help="exit 3 if the acceptance threshold is missed")
    run.set_defaults(func=cmd_run)

    ver = sub.add_parser("verify", help="replay a trace against an institution")
    ver.add_argument("--institution", required=True)
    ver.add_argument("--grounding", required=True)
    ver.add_argument("--trace", required=True)
    ver.add_argument("--out")
    ver.set_defaults(func=cmd_verify)

    pol = sub.add_parser("policy", help="save, inspect or reground policy artifacts")
    psub = pol.add_subparsers(dest="action", required=True)
    save = psub.add_parser("save", help="train one arm of a config and save the policy")
    save.add_argument("--config", required=True)
    save.add_argument("--arm")
    save.add_argument("--episodes", type=int)
    save.add_argument("--seed", type=int)
    save.add_argument("--out", required=True)
    save.set_defaults(func=cmd_policy_save)
    load = psub.add_parser("load", help="load an artifact and check its fingerprint")
    load.add_argument("--policy", required=True)
    load.add_argument("--institution")
    load.set_defaults(func=cmd_policy_load)
    rg = psub.add_parser("reground", help="bind an artifact to a new grounding and evaluate it greedily")
    rg.add_argument("--policy", required=True)
    rg.add_argument("--institution", required=True)
    rg.add_argument("--grounding", required=True)
    rg.add_argument("--scenario", required=True, help="scenario config JSON")
    rg.add_argument("--episodes", type=int, default=100)
    rg.add_argument("--seed", type=int, default=0)
    rg.add_argument("--check", type=float, help="exit 3 if the adherence rate is below this value")
    rg.set_defaults(func=cmd_policy_reground)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "command", None) == "run" and not (args.experiment or args.config):
        print("run needs --experiment or --config", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, IncompatibleLayoutError, TrajectoryError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
