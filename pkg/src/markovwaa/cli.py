"""Command-line front end.

Subcommands:

``run``     play every (scenario, rule) pair and write traces and a summary
``verify``  run the full battery of inequality checks; exit 3 on any failure
``sweep``   tabulate analytic against empirical universality thresholds

Exit codes: 0 ok, 2 config error, 3 invariant violation, 4 resource limit.
"""

from __future__ import annotations

import argparse
import itertools
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from markovwaa import __version__
from markovwaa.config import (
    ExperimentConfig,
    build_loss,
    build_pool,
    build_rule,
    build_scenario,
    config_hash,
    load_config,
    parse_config,
    with_seed_override,
)
from markovwaa.engine import mean_comparison
from markovwaa.errors import (
    ConfigError,
    InvariantViolation,
    MarkovWaaError,
    ResourceLimitError,
)
from markovwaa.harness import (
    RandomizedRun,
    RegretTrace,
    audit_trace,
    check_lil_envelope,
    empirical_universality,
    loss_gap_bound,
    run_deterministic,
    run_randomized,
)
from markovwaa.engine import lemma5_constant
from markovwaa.measures import FiniteMeasure, expected_loss, fm_distance
from markovwaa import reporting

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_RESOURCE = 4

TOL = 1e-9


# --------------------------------------------------------------------------
# executing runs


@dataclass
class RunResult:
    scenario: str
    rule: str
    trace: RegretTrace
    randomized: RandomizedRun | None = None


def _run_task(cfg_data: dict, si: int, ri: int, m: int | None = None, grid_size: int | None = None,
              horizon: int | None = None, seeds: list | None = None) -> RunResult:
    """One (scenario, rule) game; module-level so worker processes can import it."""
    cfg = parse_config(cfg_data)
    pool = build_pool(cfg, m_max=m, grid_size=grid_size)
    loss = build_loss(cfg)
    scenario = build_scenario(cfg, cfg.scenarios[si], horizon)
    rule = build_rule(cfg.rules[ri])
    if m is not None and rule.level != m:
        rule = rule.at_level(pool.structure, m)
    if cfg.mode == "randomized":
        run = run_randomized(scenario, pool, loss, pool.structure, rule, seeds or cfg.seeds)
        return RunResult(scenario.name, rule.name, run.mean, run)
    return RunResult(scenario.name, rule.name, run_deterministic(scenario, pool, loss, pool.structure, rule))


def _map(fn: Callable, tasks: list[tuple], jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        futures = [ex.submit(fn, *t) for t in tasks]
        # ordered reduction keeps outputs independent of scheduling
        return [f.result() for f in futures]


def run_all(cfg: ExperimentConfig, jobs: int = 1) -> list[RunResult]:
    data = cfg.model_dump()
    # build once up front so config and resource errors surface before any work
    build_pool(cfg)
    tasks = [(data, si, ri) for si in range(len(cfg.scenarios)) for ri in range(len(cfg.rules))]
    return _map(_run_task, tasks, jobs)


def _universality(cfg: ExperimentConfig, results: list[RunResult], eps: float | None = None):
    pool = build_pool(cfg)
    loss = build_loss(cfg)
    rules = {r.name: build_rule(r) for r in cfg.rules}
    return [empirical_universality([r.trace], [rules[r.rule]], pool, loss, eps)[0] for r in results]


def write_outputs(cfg: ExperimentConfig, results: list[RunResult], out: Path, svg: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash(cfg)
    loss = build_loss(cfg)
    reports = _universality(cfg, results, cfg.verify.eps)
    runs = []
    for res, rep in zip(results, reports):
        stem = f"{reporting.slug(res.scenario)}__{reporting.slug(res.rule)}"
        reporting.write_trace(out / f"trace_{stem}.csv", res.trace, h)
        if svg:
            reporting.write_regret_svg(out / f"regret_{stem}.svg", res.trace, h)
        entry = res.trace.summary()
        entry["universality"] = rep.to_dict()
        if res.randomized is not None:
            n0 = min(cfg.verify.n0, res.trace.horizon)
            reporting.write_paths(out / f"paths_{stem}.csv", res.randomized, n0, loss.bound, h)
            entry["sampled"] = {
                "seeds": len(res.randomized.paths),
                "n0": n0,
                "fraction_sup_average_regret_within_eps": res.randomized.fraction_within(rep.eps, n0),
            }
        runs.append(entry)
    summary = {
        "name": cfg.name,
        "mode": cfg.mode,
        "suprema": "taken over N0 <= N <= horizon",
        "runs": runs,
    }
    reporting.write_json(out / "summary.json", summary, h)
    return summary


def first_failure(results: list[RunResult]) -> InvariantViolation | None:
    for res in results:
        for name, check in res.trace.checks().items():
            if not check["passed"]:
                value = {k: v for k, v in check.items() if k not in ("passed", "round")}
                return InvariantViolation(name, check["round"],
                                          f"{res.scenario}/{res.rule}: {value}")
    return None


# --------------------------------------------------------------------------
# verification battery


@dataclass
class Check:
    name: str
    anchor: str
    passed: bool
    detail: str
    planted: bool = False

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        extra = " [planted]" if self.planted else ""
        return f"{tag} {self.name}{extra} ({self.anchor}): {self.detail}"


def _check_traces(cfg: ExperimentConfig, results: list[RunResult], control: str) -> list[Check]:
    pool = build_pool(cfg)
    loss = build_loss(cfg)
    shrink = 1e-3 if control == "shrunken_regret_bound" else 1.0
    out = []
    for res in results:
        tag = f"{res.scenario}/{res.rule}"
        checks = res.trace.checks()
        c9 = checks["lemma9"]
        out.append(Check(f"weight_mixture_gap[{tag}]", "per-round mixture inequality", c9["passed"],
                         f"min gap {c9['min_gap']:.6g} at round {c9['round']}"))
        cc = checks["countable_convexity"]
        key = "max_abs_deviation" if res.trace.randomized else "max_excess"
        out.append(Check(f"countable_convexity[{tag}]", "learner loss vs weighted expert losses",
                         cc["passed"], f"{key} {cc[key]:.3g} at round {cc['round']}"))
        audit = audit_trace(res.trace, pool, loss)
        out.append(Check(f"audit_mixture_gap[{tag}]", "independent recomputation from raw losses",
                         audit.lemma9_min_gap >= -TOL and audit.matches_engine,
                         f"min gap {audit.lemma9_min_gap:.6g} at round {audit.lemma9_round}, "
                         f"matches engine: {audit.matches_engine}"))
        if shrink == 1.0:
            out.append(Check(f"regret_bound[{tag}]", "regret to every expert <= (L^2 e^L + ln 1/q) sqrt(N)",
                             audit.lemma5_max_excess <= TOL,
                             f"max excess {audit.lemma5_max_excess:.6g} (expert {audit.lemma5_expert}, "
                             f"round {audit.lemma5_round})"))
        else:
            out.append(_shrunken_regret_check(res, pool, loss, shrink, tag))
        if not res.trace.randomized:
            out.append(_horizon_regret_check(res, loss))
    return out


def _shrunken_regret_check(res: RunResult, pool, loss, shrink: float, tag: str) -> Check:
    from markovwaa.engine import expert_loss_rows

    L = loss.bound
    consts = (L**2 * math.exp(L) - pool.log_priors) * shrink
    cum = np.zeros(pool.size)
    learner = 0.0
    worst = (-math.inf, 0)
    for rec, row in zip(res.trace.records, expert_loss_rows(res.trace.records, pool)):
        cum += row
        learner += rec.learner_loss
        e = float(np.max(learner - cum - consts * math.sqrt(rec.n)))
        if e > worst[0]:
            worst = (e, rec.n)
    return Check(f"regret_bound[{tag}]", f"regret bound scaled by {shrink:g}", worst[0] <= TOL,
                 f"max excess {worst[0]:.6g} at round {worst[1]}", planted=True)


def _horizon_regret_check(res: RunResult, loss) -> Check:
    tr = res.trace
    m = tr.rule_level
    n = tr.horizon
    rate = lemma5_constant(loss.bound, tr.nearest_prior) / math.sqrt(n)
    limit = max(2.0**-m, rate + loss_gap_bound(loss, tr.nearest_distance, False))
    avg = float(tr.average_regret()[-1])
    return Check(f"horizon_regret[{res.scenario}/{res.rule}]", "average regret at the horizon",
                 avg <= limit + TOL, f"{avg:.6g} <= {limit:.6g}")


def _mean_comparison_check(cfg: ExperimentConfig, rng: np.random.Generator) -> Check:
    L = build_loss(cfg).bound
    worst = math.inf
    for _ in range(cfg.verify.mean_comparison_instances):
        k = int(rng.integers(1, 20))
        q = rng.random(k)
        q *= rng.random() / q.sum()
        q = np.maximum(q, 1e-300)
        losses = rng.random(k) * 20 * L
        a = float(rng.uniform(1e-6, 1 - 1e-6))
        beta = math.exp(-1.0 / math.sqrt(int(rng.integers(1, 10**4))))
        lhs, rhs = mean_comparison(q, losses, beta, a)
        worst = min(worst, (lhs - rhs) / max(abs(rhs), 1e-300))
    return Check("mean_comparison", "(sum q x^L)^a >= sum q x^(aL) for a in (0,1)", worst >= -1e-12,
                 f"min relative slack {worst:.3g} over {cfg.verify.mean_comparison_instances} instances")


def _random_measure(points: np.ndarray, rng: np.random.Generator) -> FiniteMeasure:
    k = int(rng.integers(1, len(points) + 1))
    chosen = rng.choice(points, size=k, replace=False)
    w = rng.random(k) + 1e-3
    w /= w.sum()
    w[-1] = 1.0 - w[:-1].sum()
    return FiniteMeasure(tuple(zip(chosen.tolist(), w.tolist())))


def _metric_checks(cfg: ExperimentConfig, rng: np.random.Generator) -> list[Check]:
    loss = build_loss(cfg)
    pool = build_pool(cfg)
    points = np.unique(np.concatenate([pool.grid.support, rng.random(4)]))
    ys = loss.observations or (0.0, 0.25, 0.5, 0.75, 1.0)
    bl = loss.bl_norm_bound_rho()
    axiom_worst = 0.0
    bl_worst = -math.inf
    for _ in range(cfg.verify.metric_triples):
        mu, nu, eta = (_random_measure(points, rng) for _ in range(3))
        d_mn, d_nm = fm_distance(mu, nu, loss), fm_distance(nu, mu, loss)
        d_ne, d_me = fm_distance(nu, eta, loss), fm_distance(mu, eta, loss)
        axiom_worst = max(axiom_worst, fm_distance(mu, mu, loss), abs(d_mn - d_nm), d_me - d_mn - d_ne)
        gap = max(abs(expected_loss(mu, loss, y) - expected_loss(nu, loss, y)) for y in ys)
        bl_worst = max(bl_worst, gap - bl * d_mn)
    n = cfg.verify.metric_triples
    return [
        Check("fm_metric_axioms", "identity, symmetry and triangle inequality", axiom_worst <= TOL,
              f"worst violation {axiom_worst:.3g} over {n} triples"),
        Check("fm_bounded_lipschitz", "|E_mu loss - E_nu loss| <= ||loss||_BL d(mu, nu)", bl_worst <= TOL,
              f"worst excess {bl_worst:.3g} over {n} pairs"),
    ]


def _lil_checks(cfg: ExperimentConfig, results: list[RunResult], control: str) -> list[Check]:
    loss = build_loss(cfg)
    scale = 0.25 if control == "understated_loss_bound" else 1.0
    out = []
    for res in results:
        if res.randomized is None or res.trace.horizon < max(cfg.verify.n0, 3):
            continue
        frac = check_lil_envelope(res.randomized, loss.bound * scale, cfg.verify.n0)
        label = "LIL envelope" if scale == 1.0 else f"LIL envelope with L scaled by {scale:g}"
        out.append(Check(f"lil_envelope[{res.scenario}/{res.rule}]", label,
                         frac >= cfg.verify.lil_fraction,
                         f"fraction {frac:.3f} >= {cfg.verify.lil_fraction} from N0={cfg.verify.n0}",
                         planted=scale != 1.0))
    return out


def _universality_checks(cfg: ExperimentConfig, results: list[RunResult]) -> list[Check]:
    out = []
    for res, rep in zip(results, _universality(cfg, results, cfg.verify.eps)):
        name = f"universality[{res.scenario}/{res.rule}]"
        anchor = "average regret <= eps past the proof-chain threshold"
        if not rep.feasible:
            out.append(Check(name, anchor, True,
                             f"skipped: grid too coarse for eps={rep.eps:g}, needs size {rep.required_grid}"))
            continue
        if rep.analytic > res.trace.horizon:
            out.append(Check(name, anchor, True,
                             f"skipped: horizon {res.trace.horizon} below analytic threshold {rep.analytic}"))
            continue
        if res.randomized is None:
            ok = rep.empirical is not None and rep.empirical <= rep.analytic
            out.append(Check(name, anchor, ok, f"empirical {rep.empirical} <= analytic {rep.analytic}"))
        else:
            paths = len(res.randomized.paths)
            target = 1.0 - 2.0**-rep.m
            slack = 3.0 * math.sqrt(target * (1 - target) / paths)
            frac = res.randomized.fraction_within(rep.eps, rep.analytic)
            out.append(Check(name, "fraction of seeds with sup average regret <= eps", frac >= target - slack,
                             f"{frac:.3f} >= {target:g} - {slack:.3f} over N in [{rep.analytic}, "
                             f"{res.trace.horizon}]"))
    return out


def verify_battery(cfg: ExperimentConfig, results: list[RunResult]) -> list[Check]:
    control = cfg.verify.negative_control
    if control == "understated_loss_bound" and cfg.mode != "randomized":
        raise ConfigError("verify.negative_control: understated_loss_bound needs mode = 'randomized'")
    rng = np.random.default_rng(cfg.seeds[0] if cfg.seeds else 0)
    checks = _check_traces(cfg, results, control)
    checks.append(_mean_comparison_check(cfg, rng))
    checks.extend(_metric_checks(cfg, rng))
    checks.extend(_lil_checks(cfg, results, control))
    checks.extend(_universality_checks(cfg, results))
    return checks


# --------------------------------------------------------------------------
# commands


def cmd_run(cfg: ExperimentConfig, out: Path, jobs: int = 1, svg: bool = False) -> int:
    results = run_all(cfg, jobs)
    write_outputs(cfg, results, out, svg)
    failure = first_failure(results)
    if failure is not None:
        print(f"invariant violation: {failure}", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"wrote {len(results)} trace(s) to {out}")
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Path, jobs: int = 1, svg: bool = False) -> int:
    results = run_all(cfg, jobs)
    write_outputs(cfg, results, out, svg)
    checks = verify_battery(cfg, results)
    for c in checks:
        print(c.line())
    reporting.write_json(out / "verify_report.json",
                         {"checks": [c.__dict__ for c in checks],
                          "passed": all(c.passed for c in checks)}, config_hash(cfg))
    failed = [c for c in checks if not c.passed]
    if failed:
        planted = [c for c in failed if c.planted]
        if planted:
            print(f"planted violation detected: {planted[0].name} ({planted[0].anchor})", file=sys.stderr)
        else:
            print(f"{len(failed)} check(s) failed, first: {failed[0].name}", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"all {len(checks)} checks passed")
    return EXIT_OK


SWEEP_COLUMNS = ["scenario", "rule", "m", "grid_size", "horizon", "eps", "feasible", "analytic",
                 "empirical", "analytic_ge_empirical", "required_grid", "final_average_regret"]


def _sweep_task(cfg_data: dict, si: int, ri: int, m, g, horizon, eps) -> list:
    res = _run_task(cfg_data, si, ri, m, g, horizon, seeds=cfg_data["seeds"][:1])
    cfg = parse_config(cfg_data)
    pool = build_pool(cfg, m_max=m, grid_size=g)
    rule = build_rule(cfg.rules[ri])
    if m is not None and rule.level != m:
        rule = rule.at_level(pool.structure, m)
    rep = empirical_universality([res.trace], [rule], pool, build_loss(cfg), eps)[0]
    return [res.scenario, res.rule, rule.level, pool.grid.size, res.trace.horizon, repr(rep.eps),
            int(rep.feasible), "" if rep.analytic is None else rep.analytic,
            "" if rep.empirical is None else rep.empirical,
            "" if rep.analytic_ge_empirical is None else int(rep.analytic_ge_empirical),
            "" if rep.required_grid is None else rep.required_grid,
            repr(float(res.trace.average_regret()[-1]))]


def cmd_sweep(cfg: ExperimentConfig, out: Path, jobs: int = 1, svg: bool = False) -> int:
    sw = cfg.sweep
    axes = (sw.m or [None], sw.grid_size or [None], sw.horizon or [None], sw.eps or [cfg.verify.eps])
    data = cfg.model_dump()
    for m, g, _, _ in itertools.product(*axes):
        build_pool(cfg, m_max=m, grid_size=g)
    tasks = [(data, si, ri, m, g, h, e)
             for m, g, h, e in itertools.product(*axes)
             for si in range(len(cfg.scenarios)) for ri in range(len(cfg.rules))]
    rows = _map(_sweep_task, tasks, jobs)
    out.mkdir(parents=True, exist_ok=True)
    reporting.write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows, config_hash(cfg))
    for row in rows:
        print(",".join(str(v) for v in row))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="markovwaa", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "play the configured games and write traces"),
                            ("verify", "run the inequality battery"),
                            ("sweep", "tabulate universality thresholds over the sweep axes")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="TOML experiment config")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: config output_dir)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--svg", action="store_true", help="also write SVG regret charts")
        p.add_argument("--seed-override", type=int, default=None, metavar="K",
                       help="replace scenario and sampling seeds")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = load_config(args.config)
        if args.seed_override is not None:
            cfg = with_seed_override(cfg, args.seed_override)
        out = args.out or Path(cfg.output_dir)
        return COMMANDS[args.command](cfg, out, args.jobs, args.svg)
    except ConfigError as err:
        print(f"config error:\n{err}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as err:
        print(f"resource limit: {err}", file=sys.stderr)
        return EXIT_RESOURCE
    except InvariantViolation as err:
        print(f"invariant violation: {err}", file=sys.stderr)
        return EXIT_INVARIANT
    except MarkovWaaError as err:
        # bad values inside referenced data files, e.g. a replay observation out of range
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
