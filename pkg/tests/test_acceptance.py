"""Acceptance gate: one test per criterion, each at its stated tolerance.

Every test records a single PASS/FAIL line, printed together at the end of
the pytest run.
"""

import math
import time

import numpy as np
import pytest
import tomli_w

from markovwaa.cli import main
from markovwaa.engine import WeakAggregatingAlgorithm, lemma5_constant, mean_comparison
from markovwaa.experts import ExpertPool, PredictionGrid
from markovwaa.harness import (
    ADAPTIVE,
    ADVERSARIAL_SWITCH,
    IID_NOISE,
    PIECEWISE,
    BenchmarkRule,
    RealityScenario,
    Target,
    audit_trace,
    check_lil_envelope,
    empirical_universality,
    run_deterministic,
    run_randomized,
)
from markovwaa.losses import LossFunction
from markovwaa.measures import FiniteMeasure, expected_loss, fm_distance, lift
from markovwaa.spaces import ApproximationStructure, SignalSpace

TOL = 1e-9
STRUCTURE = ApproximationStructure(SignalSpace.unit_interval(), 10)
POOL_SHAPES = [(2, 1), (2, 2), (3, 2), (2, 3), (4, 2)]
HORIZON = 10**4
HALF = FiniteMeasure(((0.0, 0.5), (1.0, 0.5)))


def two_point_fm(rho):
    return 2 * rho / (rho + 2)


def _scenario(kind, seed):
    if kind == IID_NOISE:
        return RealityScenario(IID_NOISE, HORIZON, seed, (Target("sine", frequency=1.5),), noise=0.15,
                               name=f"iid-{seed}")
    return RealityScenario(ADVERSARIAL_SWITCH, HORIZON, seed,
                           (Target("step", threshold=0.3), Target("constant", value=1.0), Target("linear")),
                           period=41 + seed, name=f"switch-{seed}")


@pytest.fixture(scope="module")
def regret_runs():
    """The 20 deterministic scenarios of criteria 1-3, with independent audits."""
    start = time.perf_counter()
    runs = []
    seed = 0
    for g, m_max in POOL_SHAPES:
        pool = ExpertPool(STRUCTURE, PredictionGrid.uniform(g), m_max)
        rule = BenchmarkRule(1, (0.0, 1.0))
        for loss in (LossFunction.square(), LossFunction.absolute()):
            for kind in (IID_NOISE, ADVERSARIAL_SWITCH):
                seed += 1
                trace = run_deterministic(_scenario(kind, seed), pool, loss, STRUCTURE, rule)
                runs.append((f"{loss.kind}/G={g}/m_max={m_max}/{kind}", trace, audit_trace(trace, pool, loss)))
    return runs, time.perf_counter() - start


@pytest.fixture(scope="module")
def randomized_runs():
    """Criteria 6 and 7: m = 2, zero-one loss, 200 seeds, horizon twice the analytic threshold."""
    start = time.perf_counter()
    loss = LossFunction.zero_one()
    pool = ExpertPool(STRUCTURE, PredictionGrid.of_measures([0.0, 1.0], 2), 2)
    rule = BenchmarkRule(2, (lift(0.0), HALF, lift(1.0), HALF), "hedged-step")
    probe = run_randomized(RealityScenario(IID_NOISE, 10, 0), pool, loss, STRUCTURE, rule, [0])
    threshold = empirical_universality([probe.mean], [rule], pool, loss)[0].analytic
    seeds = list(range(200))
    runs = []
    for scenario in (RealityScenario(IID_NOISE, 2 * threshold, 3, (Target("step"),), noise=0.2),
                     RealityScenario(ADAPTIVE, 2 * threshold, 4)):
        runs.append((scenario.kind, run_randomized(scenario, pool, loss, STRUCTURE, rule, seeds)))
    return runs, threshold, time.perf_counter() - start


def test_criterion_1_regret_bound(regret_runs, acceptance):
    runs, elapsed = regret_runs
    worst = max(a.lemma5_max_excess for _, _, a in runs)
    engine_worst = max(-t.lemma5_slacks.min() for _, t, _ in runs)
    passed = len(runs) >= 20 and worst <= TOL and engine_worst <= TOL and elapsed < 120
    acceptance.record(1, passed, f"{len(runs)} scenarios x {HORIZON} rounds, max excess over the bound "
                      f"{worst:.3g} (audit) / {engine_worst:.3g} (engine), {elapsed:.1f}s")
    assert passed


def test_criterion_2_mixture_gap(regret_runs, acceptance):
    runs, _ = regret_runs
    worst = min(min(a.lemma9_min_gap, t.lemma9_gaps.min()) for _, t, a in runs)
    agree = all(a.matches_engine for _, _, a in runs)
    single = []
    for loss in (LossFunction.square(), LossFunction.absolute()):
        pool = ExpertPool.from_tables(STRUCTURE, PredictionGrid((0.2, 0.9)), [(2, [0, 1, 1, 0])], [1.0])
        rule = BenchmarkRule(2, (0.2, 0.9, 0.9, 0.2))
        trace = run_deterministic(_scenario(ADVERSARIAL_SWITCH, 99), pool, loss, STRUCTURE, rule)
        single.append(float(np.abs(trace.lemma9_gaps).max()))
    passed = worst >= -TOL and agree and max(single) <= TOL
    acceptance.record(2, passed, f"min gap {worst:.3g} over all rounds, audit agrees: {agree}; "
                      f"single-expert |gap| <= {max(single):.3g}")
    assert passed


def test_criterion_3_countable_convexity(regret_runs, randomized_runs, acceptance):
    runs, _ = regret_runs
    excess = max(float(t.convexity_excess().max()) for _, t, _ in runs)
    rruns, _, _ = randomized_runs
    deviation = max(float(np.abs(r.mean.convexity_excess()).max()) for _, r in rruns)
    passed = excess <= 1e-12 and deviation <= 1e-12
    acceptance.record(3, passed, f"convex losses: max(l_n - sum p l) = {excess:.3g}; "
                      f"randomized |l_n - sum p l| <= {deviation:.3g}")
    assert passed


def test_criterion_4_mean_comparison(acceptance):
    rng = np.random.default_rng(2024)
    L = 1.0
    worst = math.inf
    for _ in range(10**4):
        k = int(rng.integers(1, 30))
        q = rng.random(k) + 1e-12
        q *= rng.uniform(1e-3, 1.0) / q.sum()
        losses = rng.uniform(0, 20 * L, k)
        a = float(rng.uniform(0, 1))
        while a == 0.0:
            a = float(rng.uniform(0, 1))
        x = float(rng.uniform(0, 1))
        lhs, rhs = mean_comparison(q, losses, x, a)
        worst = min(worst, (lhs - rhs) / rhs if rhs > 0 else lhs - rhs)
    passed = worst >= -1e-12
    acceptance.record(4, passed, f"10^4 instances, min relative slack {worst:.3g}")
    assert passed


def test_criterion_5_deterministic_threshold(acceptance):
    loss = LossFunction.square()
    pool = ExpertPool(STRUCTURE, PredictionGrid.uniform(3), 1)
    rule = BenchmarkRule(1, (0.0, 1.0), "on-grid")
    scenarios = [
        RealityScenario(IID_NOISE, HORIZON, 1, (Target("step"),), noise=0.3),
        RealityScenario(IID_NOISE, HORIZON, 2, (Target("linear"),), noise=0.1, name="iid-linear"),
        RealityScenario(PIECEWISE, HORIZON, 3, (Target("sine", frequency=3),)),
        RealityScenario(ADVERSARIAL_SWITCH, HORIZON, 4, (Target("constant", value=0.0), Target("step", threshold=0.9)),
                        period=13),
        RealityScenario(ADAPTIVE, HORIZON, 5),
    ]
    details = []
    ok = True
    for sc in scenarios:
        trace = run_deterministic(sc, pool, loss, STRUCTURE, rule)
        rep = empirical_universality([trace], [rule], pool, loss, eps=0.5)[0]
        after = trace.average_regret()[rep.analytic - 1:]
        good = (rep.feasible and rep.analytic == 387 and bool(np.all(after <= 0.5))
                and rep.empirical is not None and rep.empirical <= rep.analytic)
        ok &= good
        details.append(f"{sc.name or sc.kind}: empirical {rep.empirical}")
    acceptance.record(5, ok, f"analytic threshold 387; " + ", ".join(details))
    assert ok


def test_criterion_6_randomized_guarantee(randomized_runs, acceptance):
    runs, threshold, elapsed = randomized_runs
    fractions = {name: run.fraction_within(0.25, threshold) for name, run in runs}
    passed = all(f >= 0.75 - 0.09 for f in fractions.values()) and elapsed < 300
    detail = ", ".join(f"{k} {v:.3f}" for k, v in fractions.items())
    acceptance.record(6, passed, f"200 seeds, sup over N in [{threshold}, {2 * threshold}] of average regret "
                      f"<= 1/4: {detail} (need >= 0.66), {elapsed:.1f}s")
    assert passed


def test_criterion_7_lil_envelope(randomized_runs, acceptance):
    runs, _, _ = randomized_runs
    honest = {name: check_lil_envelope(run, 1.0, 50) for name, run in runs}
    planted = {name: check_lil_envelope(run, 0.5, 50) for name, run in runs}
    passed = all(v >= 0.95 for v in honest.values()) and all(v < 0.95 for v in planted.values())
    acceptance.record(7, passed, "within envelope: " + ", ".join(f"{k} {v:.3f}" for k, v in honest.items())
                      + "; with L halved: " + ", ".join(f"{k} {v:.3f}" for k, v in planted.items()))
    assert passed


def _random_measure(rng, points):
    k = int(rng.integers(1, 5))
    chosen = rng.choice(points, size=k, replace=False)
    w = rng.random(k) + 0.01
    w /= w.sum()
    w[-1] = 1 - w[:-1].sum()
    return FiniteMeasure(tuple(zip(chosen.tolist(), w.tolist())))


def test_criterion_8_fortet_mourier(acceptance):
    rng = np.random.default_rng(8)
    L = 1.0
    oracle_err = 0.0
    for rho in rng.uniform(0, 2 * L, 100):
        rho = float(rho) or 1e-3
        # losses -L and -L + rho at the two predictions: pseudo-metric rho, bound L
        loss = LossFunction.custom([0.0, 1.0], [0.0], [[-L], [-L + rho]])
        assert loss.pseudo_metric(0.0, 1.0) == pytest.approx(rho)
        oracle_err = max(oracle_err, abs(fm_distance(lift(0.0), lift(1.0), loss) - two_point_fm(rho)))

    square = LossFunction.square()
    points = np.linspace(0, 1, 9)
    axiom = 0.0
    lipschitz = -math.inf
    for _ in range(1000):
        mu, nu, eta = (_random_measure(rng, points) for _ in range(3))
        d = fm_distance(mu, nu, square)
        axiom = max(axiom, fm_distance(mu, mu, square), abs(d - fm_distance(nu, mu, square)),
                    fm_distance(mu, eta, square) - d - fm_distance(nu, eta, square))
        if mu != nu:
            axiom = max(axiom, -d)
        y = float(rng.random())
        gap = abs(expected_loss(mu, square, y) - expected_loss(nu, square, y))
        lipschitz = max(lipschitz, gap - square.bl_norm_bound() * d)
    passed = oracle_err <= 1e-9 and axiom <= TOL and lipschitz <= TOL
    acceptance.record(8, passed, f"two-point oracle error {oracle_err:.3g}; metric-axiom violation {axiom:.3g}; "
                      f"loss-gap excess {lipschitz:.3g}")
    assert passed


def test_criterion_9_quantizer(acceptance):
    rng = np.random.default_rng(9)
    xs = np.concatenate([rng.random(500), [0.0, 1.0, 0.5]])
    ok = True
    for m in range(1, 11):
        image = STRUCTURE.image(m)
        ok &= len(set(image)) == 2**m
        ok &= all(STRUCTURE.quantize(m, p) == p for p in image)
        ok &= all(STRUCTURE.quantize(m, STRUCTURE.quantize(m, float(x))) == STRUCTURE.quantize(m, float(x))
                  for x in xs)
        ok &= STRUCTURE.half_max_cell_diameter(m) == 2.0 ** -(m + 1)
    acceptance.record(9, ok, "idempotence, 2^m image points and half-diameter 2^-(m+1) for m = 1..10")
    assert ok


def test_criterion_10_reproducibility(tmp_path, acceptance):
    cfg = {
        "name": "repro",
        "mode": "randomized",
        "horizon": 1500,
        "seeds": [0, 1, 2, 3],
        "quantizer": {"m_max": 2},
        "loss": {"kind": "zero_one"},
        "scenarios": [{"kind": "iid_noise", "seed": 5, "noise": 0.2}, {"kind": "adaptive_worst_case"}],
        "rules": [{"name": "hedge", "level": 1, "values": [[[0.0, 1.0]], [[0.0, 0.5], [1.0, 0.5]]]}],
    }
    path = tmp_path / "repro.toml"
    path.write_text(tomli_w.dumps(cfg))
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / run
        assert main(["run", "--config", str(path), "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
    passed = outputs[0] == outputs[1] and len(outputs[0]) == 4
    acceptance.record(10, passed, f"{len(outputs[0])} CSV files byte-identical across two runs")
    assert passed
