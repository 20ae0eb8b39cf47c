"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Criteria 6-10 run the packaged experiment configs at full size (10 trials)
and take most of the suite's time.
"""
import random
import time
import warnings

import pytest

from helpers import (
    EXIT,
    STORE,
    conditions,
    g_factory,
    g_store,
    board,
    ROBBY_CAPS,
    random_array_trace,
    random_grounding,
    random_institution,
    random_pair,
    scripted_buyer_episode,
)
from normrl.abstraction import encode_abstract
from normrl.experiments import load_grounding, load_spec, run_experiment
from normrl.institution import Institution
from normrl.learning import NormativeEnv, ShapingConfig, bind_all, TrainingConfig, run_episode
from normrl.gridworld import ScenarioConfig
from normrl.norms import F, V, make_monitors, oracle_eval, adheres
from normrl.shaping import full_adherence_reward
from normrl.trajectory import Trajectory

N_TRACES = 1000
EXPERIMENT_LIMITS = {"e1": 5 * 60, "e2": 20 * 60, "e3": 15 * 60, "e4": 20 * 60, "e5": 20 * 60}


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
        return ok

    return emit


def corpus(seed: int, n: int = N_TRACES):
    """Seeded random traces: <= 50 steps, 2 agents, 3 behaviors, 3 objects."""
    rng = random.Random(seed)
    inst = random_institution()
    for _ in range(n):
        g = random_grounding(rng, inst)
        yield inst, g, random_array_trace(rng, p_active=rng.choice([0.05, 0.12, 0.3]))


def replay(inst, g, arr):
    """Monitor states after every prefix: list of (t, [(prev, cur) per norm])."""
    traj = arr.to_trajectory()
    monitors = make_monitors(inst, g)
    fresh = Trajectory(0)
    for t, changed in traj.iter_steps():
        fresh.record(changed, t=t)
        yield t, fresh, [m.step(fresh) for m in monitors]


# -- 1-5: semantics, shaping, abstraction -------------------------------------------


def test_criterion_01_oracle_equivalence(report):
    t0 = time.perf_counter()
    mismatches = checked = 0
    qualifiers = set()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for inst, g, arr in corpus(101):
            for t, prefix, steps in replay(inst, g, arr):
                for norm, (_, cur) in zip(inst.norms, steps):
                    checked += 1
                    qualifiers.add(norm.qualifier)
                    if oracle_eval(norm, prefix, g) is not cur:
                        mismatches += 1
    seconds = time.perf_counter() - t0
    ok = mismatches == 0 and seconds < 30 and len(qualifiers) == 6
    assert report(1, ok, f"{checked} prefix states over {N_TRACES} traces, {mismatches} mismatches, {seconds:.1f}s")


def test_criterion_02_disjointness_monotonicity(report):
    failures = 0
    witness = False
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for inst, g, arr in corpus(202):
            for t, _, steps in replay(inst, g, arr):
                prefix = arr.prefix(t + 1)
                for norm, (prev, cur) in zip(inst.norms, steps):
                    is_f, is_v = conditions(norm, g, prefix)
                    if is_f and is_v:
                        failures += 1
                    if norm.qualifier in ("must", "mustUse", "mustAt") and prev is F and cur is not F:
                        failures += 1
                    if norm.qualifier == "before" and prev is F and cur is V:
                        witness = True
    ok = failures == 0 and witness
    assert report(2, ok, f"{failures} failures, before f->v witness {'found' if witness else 'missing'}")


def _shaped_episodes(scheme: str):
    """Scripted adherent visits plus random-policy episodes under one scheme; lists of env steps."""
    out = []
    rng = random.Random(scheme)
    for inst, grounding, leave in ((STORE, "grounding_battery.json", False), (EXIT, "grounding_exit.json", True)):
        g = load_grounding(grounding, inst)
        env = NormativeEnv(ScenarioConfig("store-small", max_episode_steps=80), inst, g, ShapingConfig(scheme=scheme))
        for seed in range(40):
            out.append(scripted_buyer_episode(env, seed, leave=leave))
        original = env.step
        for seed in range(150):
            policies = bind_all(env, "tabular-abstract", seed, cfg=TrainingConfig(episodes=1))
            steps = []

            def recording(commands):
                step = original(commands)
                steps.append(step)
                return step

            env.step = recording
            try:
                run_episode(env, policies, seed, 1.0, rng)
            finally:
                env.step = original
            out.append(steps)
    return out


def test_criterion_03_reward_arithmetic(report):
    failures = adherent = total = violating = 0
    for scheme in ("A", "B"):
        for steps in _shaped_episodes(scheme):
            total += 1
            violated = False
            for step in steps:
                violated = violated or any(s is V for s in step.states)
                o = step.outcome
                if violated and (o.reward > 0 or any(r > 0 for r in o.norm_rewards) or o.adherence_bonus > 0):
                    failures += 1
            violating += violated
            if steps and steps[-1].outcome.adherent:
                adherent += 1
                cum = sum(step.outcome.reward for step in steps)
                if abs(cum - (2.0 - len(steps) * 1.0e-4)) > 1e-9:
                    failures += 1
    ok = failures == 0 and adherent >= 160 and violating > 0
    assert report(3, ok, f"{total} episodes ({adherent} adherent, {violating} violating), {failures} failures")


def test_criterion_04_algorithm_equivalence(report):
    mismatches = positives = 0
    rng = random.Random(404)
    full = random_institution()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for _, g, arr in corpus(404):
            norms = rng.sample(full.norms, rng.randint(1, 3))
            inst = Institution("Sub", full.roles, full.acts, full.arts, tuple(norms))
            traj = arr.to_trajectory()
            states = None
            for _, _, steps in replay(inst, g, arr):
                states = [cur for _, cur in steps]
            flag = full_adherence_reward(states)
            positives += flag
            if (flag == 1) != adheres(inst, traj, g):
                mismatches += 1
    ok = mismatches == 0 and positives > 0
    assert report(4, ok, f"{N_TRACES} traces, {positives} adherent, {mismatches} mismatches")


def test_criterion_05_transfer_invariance(report):
    mismatches = 0
    rng = random.Random(505)
    for _ in range(500):
        s, f = random_pair(rng)
        a = encode_abstract(s, "robby", g_store(), STORE)
        b = encode_abstract(f, "forky", g_factory(), STORE)
        mismatches += a.tobytes() != b.tobytes()
        cells = rng.sample([(x, y) for x in range(1, 11) for y in range(1, 11)], 4)
        objs = {"battery": (cells[1], "item"), "drill": (cells[2], "item"), "register": (cells[3], "register")}
        swapped = {"drill": (cells[1], "item"), "battery": (cells[2], "item"), "register": (cells[3], "register")}
        heading = rng.choice("NESW")
        x1 = encode_abstract(board("robby", ROBBY_CAPS, objs, cells[0], heading), "robby", g_store("battery"), STORE)
        x2 = encode_abstract(board("robby", ROBBY_CAPS, swapped, cells[0], heading), "robby", g_store("drill"), STORE)
        mismatches += x1.tobytes() != x2.tobytes()
    assert report(5, mismatches == 0, f"1000 constructed pairs, {mismatches} mismatches")


# -- 6-10: experiments ----------------------------------------------------------------


@pytest.fixture(scope="module")
def e1_output(tmp_path_factory):
    out = tmp_path_factory.mktemp("e1_first")
    return out, run_experiment(load_spec("e1.json"), out)


def _experiment(n, eid, result, report, detail):
    limit = EXPERIMENT_LIMITS[eid]
    ok = result.passed and result.seconds <= limit
    assert report(n, ok, f"{eid}: {detail}; {result.seconds:.0f}s (limit {limit}s)")


def test_criterion_06_experiment1(e1_output, report):
    _, r = e1_output
    s = r.summary
    _experiment(6, "e1", r, report, f"{s['trials_passing']}/10 trials at >= 95% over the final 100")


def test_criterion_07_experiment2(tmp_path, report):
    r = run_experiment(load_spec("e2.json"), tmp_path)
    s = r.summary
    _experiment(7, "e2", r, report, f"median episodes to 90%: abstract {s['median_abstract']}, full {s['median_full']}")


def test_criterion_08_experiment3(tmp_path, report):
    r = run_experiment(load_spec("e3.json"), tmp_path)
    s = r.summary
    detail = (
        f"zero-shot drill {s['zero_shot_drill']:.2f}, factory {s['zero_shot_factory']:.2f}, "
        f"from scratch {s['scratch_rate']:.2f}"
    )
    _experiment(8, "e3", r, report, detail)


def test_criterion_09_experiment4(tmp_path, report):
    r = run_experiment(load_spec("e4.json"), tmp_path)
    s = r.summary
    _experiment(9, "e4", r, report, f"median episodes to 90%: A {s['median_A']}, B {s['median_B']}")


def test_criterion_10_experiment5(tmp_path, report):
    r = run_experiment(load_spec("e5.json"), tmp_path)
    s = r.summary
    detail = (
        f"{s['trials_passing']}/10 trials at >= 85%; mean adherent reward buyer "
        f"{s['buyer_mean_reward_adherent']:.4f} vs seller {s['seller_mean_reward_adherent']:.4f}"
    )
    _experiment(10, "e5", r, report, detail)


# -- 11: determinism --------------------------------------------------------------------


def test_criterion_11_determinism(e1_output, tmp_path, report):
    first, _ = e1_output
    run_experiment(load_spec("e1.json"), tmp_path)
    names = sorted(p.name for p in first.glob("*.csv"))
    same = [(first / n).read_bytes() == (tmp_path / n).read_bytes() for n in names]
    ok = bool(names) and all(same)
    assert report(11, ok, f"e1 re-run: {sum(same)}/{len(names)} CSV files byte-identical")
