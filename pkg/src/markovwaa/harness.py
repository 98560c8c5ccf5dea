"""Games between the WAA and Reality, regret traces, and their verdicts.

Reality is described by a :class:`RealityScenario`.  Oblivious scenarios
fix their moves from the seed and the round index alone; the
``adaptive_worst_case`` scenario sees the learner's prediction before
choosing the observation, as the perfect-information protocol allows.

Suprema over ``N >= N0`` are taken over the finite window
``N0 <= N <= horizon``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from markovwaa.engine import (
    RoundRecord,
    WeakAggregatingAlgorithm,
    expert_loss_rows,
    lemma5_constant,
    lemma9_gap,
)
from markovwaa.errors import ConfigError, InvalidArgumentError
from markovwaa.experts import ExpertPool, PredictionGrid, nearest_expert, nearest_on_grid
from markovwaa.losses import LossFunction
from markovwaa.measures import FiniteMeasure, expected_loss, sample_from_cdfs
from markovwaa.spaces import FINITE_SET, UNIT_CUBE, ApproximationStructure, SignalSpace

TOL = 1e-9
CONVEXITY_TOL = 1e-12

IID_NOISE = "iid_noise"
PIECEWISE = "piecewise"
ADVERSARIAL_SWITCH = "adversarial_switch"
ADAPTIVE = "adaptive_worst_case"
REPLAY = "replay"
SCENARIO_KINDS = (IID_NOISE, PIECEWISE, ADVERSARIAL_SWITCH, ADAPTIVE, REPLAY)


# --------------------------------------------------------------------------
# Reality


def scalar_feature(space: SignalSpace, x: Any) -> float:
    """Map a signal to ``[0, 1]`` so that target functions apply to every space."""
    if space.kind == UNIT_CUBE:
        return float(sum(x) / len(x))
    if space.kind == FINITE_SET:
        return space.label_position(x) / (len(space.labels) - 1)
    return float(x)


@dataclass(frozen=True)
class Target:
    """A function from signals to ``[0, 1]`` used by scenarios to place observations."""

    kind: str = "step"
    threshold: float = 0.5
    value: float = 0.5
    frequency: float = 1.0
    table: tuple[float, ...] = ()

    def __call__(self, space: SignalSpace, x: Any) -> float:
        s = scalar_feature(space, x)
        if self.kind == "step":
            return 1.0 if s >= self.threshold else 0.0
        if self.kind == "linear":
            return s
        if self.kind == "sine":
            return 0.5 + 0.5 * math.sin(2 * math.pi * self.frequency * s)
        if self.kind == "constant":
            return self.value
        if self.kind == "table":
            cells = len(self.table)
            return self.table[min(int(s * cells), cells - 1)]
        raise InvalidArgumentError(f"unknown target kind {self.kind!r}")


@dataclass(frozen=True)
class RealityScenario:
    kind: str
    horizon: int
    seed: int = 0
    targets: tuple[Target, ...] = (Target(),)
    noise: float = 0.0
    period: int = 100
    path: str | None = None
    name: str = ""
    # adaptive scenarios only: called as responder(history, x, prediction) -> y,
    # with history the list of earlier (x, prediction, y) rounds
    responder: Callable[[list, Any, Any], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ConfigError(f"unknown scenario kind {self.kind!r}")
        if self.horizon < 1:
            raise ConfigError("scenario horizon must be positive")
        if self.kind == REPLAY and not self.path:
            raise ConfigError("replay scenarios need a path")
        if self.kind != REPLAY and not self.targets:
            raise ConfigError("scenario needs at least one target")

    def start(self, space: SignalSpace, loss: LossFunction) -> "Reality":
        return Reality(self, space, loss)


def _nearest_observation(loss: LossFunction, v: float) -> float:
    obs = loss.observations
    return min(obs, key=lambda y: (abs(y - v), y))


class Reality:
    """One play-through of a scenario; deterministic given the scenario seed."""

    def __init__(self, scenario: RealityScenario, space: SignalSpace, loss: LossFunction):
        self.scenario = scenario
        self.space = space
        self.loss = loss
        self.rng = np.random.default_rng(scenario.seed)
        self.rows = None
        if scenario.kind == REPLAY:
            self.rows = read_replay(scenario.path, space)
            if not self.rows:
                raise ConfigError(f"replay file {scenario.path} has no rows")
        for _, y in self.rows or []:
            loss.check_observation(y)
        self.history: list[tuple[Any, Any, float]] = []

    @property
    def horizon(self) -> int:
        if self.rows is not None:
            return min(self.scenario.horizon, len(self.rows))
        return self.scenario.horizon

    def signal(self, n: int) -> Any:
        if self.rows is not None:
            return self.rows[n - 1][0]
        kind = self.space.kind
        if kind == UNIT_CUBE:
            return tuple(float(v) for v in self.rng.random(self.space.dim))
        if kind == FINITE_SET:
            return self.space.labels[int(self.rng.integers(len(self.space.labels)))]
        return float(self.rng.random())

    def observation(self, n: int, x: Any, prediction: Any) -> float:
        y = self._observe(n, x, prediction)
        self.history.append((x, prediction, y))
        return y

    def _observe(self, n: int, x: Any, prediction: Any) -> float:
        sc = self.scenario
        if self.rows is not None:
            return self.rows[n - 1][1]
        if sc.kind == ADAPTIVE:
            if sc.responder is not None:
                return self.loss.check_observation(sc.responder(self.history, x, prediction))
            return self._worst_case(prediction)
        target = sc.targets[0]
        if sc.kind == ADVERSARIAL_SWITCH:
            target = sc.targets[((n - 1) // sc.period) % len(sc.targets)]
        v = target(self.space, x)
        noise = sc.noise if sc.kind != PIECEWISE else 0.0
        if self.loss.observations is None:
            if noise > 0:
                v = v + noise * float(self.rng.normal())
            return float(min(1.0, max(0.0, v)))
        if noise > 0 and self.rng.random() < noise:
            return self.loss.observations[int(self.rng.integers(len(self.loss.observations)))]
        return _nearest_observation(self.loss, v)

    def _worst_case(self, prediction: Any) -> float:
        candidates = self.loss.observations if self.loss.observations is not None else (0.0, 1.0)

        def loss_of(y):
            if isinstance(prediction, FiniteMeasure):
                return expected_loss(prediction, self.loss, y)
            return self.loss.evaluate(prediction, y)

        # ties go to the first candidate so the move is deterministic
        return max(candidates, key=lambda y: (loss_of(y), -candidates.index(y)))


def read_replay(path: str | Path, space: SignalSpace) -> list[tuple[Any, float]]:
    """Rows of a replay CSV: a header, then ``x,y`` (or ``x1..xd,y`` for cubes)."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader, None)
        if header is None:
            return rows
        by_name = {str(label): label for label in space.labels}
        for raw in reader:
            if not raw:
                continue
            *xs, y = raw
            if space.kind == UNIT_CUBE:
                x = tuple(float(v) for v in xs)
            elif space.kind == FINITE_SET:
                if xs[0] not in by_name:
                    raise ConfigError(f"replay label {xs[0]!r} is not in the signal space")
                x = by_name[xs[0]]
            else:
                x = float(xs[0])
            if not space.contains(x):
                raise ConfigError(f"replay signal {x!r} is outside the signal space")
            rows.append((x, float(y)))
    return rows


def write_replay(path: str | Path, rows: Sequence[tuple[Any, float]], space: SignalSpace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if space.kind == UNIT_CUBE:
            w.writerow([f"x{i + 1}" for i in range(space.dim)] + ["y"])
            for x, y in rows:
                w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
        else:
            w.writerow(["x", "y"])
            for x, y in rows:
                w.writerow([x if space.kind == FINITE_SET else repr(float(x)), repr(float(y))])


# --------------------------------------------------------------------------
# benchmark rules


@dataclass(frozen=True)
class BenchmarkRule:
    """A prediction rule that factors through ``quantize(m, .)``."""

    level: int
    values: tuple
    name: str = ""

    def __post_init__(self):
        if len(self.values) != 2**self.level:
            raise InvalidArgumentError(
                f"level-{self.level} rule needs {2 ** self.level} values, got {len(self.values)}"
            )

    @property
    def randomized(self) -> bool:
        return isinstance(self.values[0], FiniteMeasure)

    def __call__(self, structure: ApproximationStructure, x: Any):
        return self.values[structure.cell_index(self.level, x)]

    def at_level(self, structure: ApproximationStructure, m: int) -> "BenchmarkRule":
        """The same function re-tabulated on the cells of level ``m``."""
        return BenchmarkRule(m, tuple(self(structure, p) for p in structure.image(m)), self.name)


def rule_loss(rule_value, loss: LossFunction, y: float) -> float:
    if isinstance(rule_value, FiniteMeasure):
        return expected_loss(rule_value, loss, y)
    return loss.evaluate(rule_value, y)


# --------------------------------------------------------------------------
# traces


def _repr_value(v: Any) -> str:
    if isinstance(v, FiniteMeasure):
        return str(v)
    if isinstance(v, tuple):
        return "(" + " ".join(repr(float(c)) for c in v) + ")"
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class RegretTrace:
    scenario: str
    rule_name: str
    rule_level: int
    loss_bound: float
    records: list[RoundRecord]
    rule_losses: np.ndarray
    best_expert: int
    best_expert_losses: np.ndarray
    best_expert_prior: float
    nearest: int
    nearest_distance: float
    nearest_prior: float
    nearest_losses: np.ndarray
    randomized: bool = False
    extras: dict = field(default_factory=dict)

    @property
    def horizon(self) -> int:
        return len(self.records)

    @property
    def learner_losses(self) -> np.ndarray:
        return np.array([r.learner_loss for r in self.records])

    @property
    def mixture_losses(self) -> np.ndarray:
        return np.array([r.mixture_loss for r in self.records])

    @property
    def lemma9_gaps(self) -> np.ndarray:
        return np.array([r.lemma9_gap for r in self.records])

    @property
    def lemma5_slacks(self) -> np.ndarray:
        return np.array([r.lemma5_slack for r in self.records])

    @property
    def rounds(self) -> np.ndarray:
        return np.arange(1, self.horizon + 1)

    def lemma5_bounds(self) -> np.ndarray:
        c = lemma5_constant(self.loss_bound, self.best_expert_prior)
        return c * np.sqrt(self.rounds)

    @property
    def learner_total(self) -> float:
        return math.fsum(self.learner_losses)

    @property
    def rule_total(self) -> float:
        return math.fsum(self.rule_losses)

    @property
    def best_expert_total(self) -> float:
        return math.fsum(self.best_expert_losses)

    def average_regret(self) -> np.ndarray:
        """Running ``(L_N - sum of rule losses) / N``."""
        return (np.cumsum(self.learner_losses) - np.cumsum(self.rule_losses)) / self.rounds

    def first_round_within(self, eps: float) -> int | None:
        """First ``N`` with average regret ``<= eps`` at ``N`` and all later rounds."""
        ok = self.average_regret() <= eps
        if not ok[-1]:
            return None
        bad = np.flatnonzero(~ok)
        return int(bad[-1]) + 2 if bad.size else 1

    def convexity_excess(self) -> np.ndarray:
        """``l_n - sum_k p_n^(k) l_n^(k)`` per round."""
        return self.learner_losses - self.mixture_losses

    def checks(self) -> dict[str, dict]:
        gaps = self.lemma9_gaps
        slacks = self.lemma5_slacks
        conv = self.convexity_excess()
        out = {
            "lemma9": _check(gaps.min() >= -TOL, gaps, np.argmin(gaps), "min_gap"),
            "lemma5": _check(slacks.min() >= -TOL, slacks, np.argmin(slacks), "min_slack"),
        }
        if self.randomized:
            dev = np.abs(conv)
            out["countable_convexity"] = _check(dev.max() <= CONVEXITY_TOL, dev, np.argmax(dev),
                                                "max_abs_deviation")
        else:
            out["countable_convexity"] = _check(conv.max() <= CONVEXITY_TOL, conv, np.argmax(conv),
                                                "max_excess")
        return out

    def csv_rows(self):
        best_bounds = self.lemma5_bounds()
        for i, rec in enumerate(self.records):
            yield [
                rec.n, _repr_value(rec.x), repr(float(rec.y)), _repr_value(rec.prediction),
                repr(rec.learner_loss), repr(float(self.rule_losses[i])),
                repr(float(self.best_expert_losses[i])), repr(float(best_bounds[i])),
                repr(rec.lemma9_gap),
            ]

    def summary(self, m: int | None = None) -> dict:
        m = self.rule_level if m is None else m
        return {
            "scenario": self.scenario,
            "rule": self.rule_name,
            "rule_level": self.rule_level,
            "horizon": self.horizon,
            "randomized": self.randomized,
            "learner_total": self.learner_total,
            "rule_total": self.rule_total,
            "best_expert": self.best_expert,
            "best_expert_total": self.best_expert_total,
            "nearest_expert": self.nearest,
            "nearest_distance": self.nearest_distance,
            "nearest_prior": self.nearest_prior,
            "final_average_regret": float(self.average_regret()[-1]),
            "first_round_within_2^-m": self.first_round_within(2.0**-m),
            "checks": {k: {kk: vv for kk, vv in v.items()} for k, v in self.checks().items()},
        }


CSV_COLUMNS = ["n", "x", "y", "gamma_repr", "learner_loss", "rule_loss", "best_expert_loss",
               "lemma5_bound", "lemma9_gap"]


def _check(passed, values, where, label) -> dict:
    where = int(where)
    return {"passed": bool(passed), label: float(values[where]), "round": where + 1}


def _expert_round_losses(trace_records: Sequence[RoundRecord], pool: ExpertPool, k: int) -> np.ndarray:
    block, local = pool.locate(k)
    level_pos = next(i for i, b in enumerate(pool.blocks) if b is block)
    return np.array([float(rec.value_losses[block.tables[rec.cells[level_pos], local]])
                     for rec in trace_records])


def _play(scenario: RealityScenario, pool: ExpertPool, loss: LossFunction,
          structure: ApproximationStructure, rule: BenchmarkRule) -> RegretTrace:
    if pool.structure != structure:
        raise ConfigError("expert pool and run use different approximation structures")
    if rule.level > pool.m_max:
        raise ConfigError(f"rule level {rule.level} exceeds the pool's m_max={pool.m_max}")
    try:
        near, delta = nearest_expert(pool, rule.values, loss)
    except InvalidArgumentError as err:
        raise ConfigError(f"rule {rule.name!r}: {err}") from None
    engine = WeakAggregatingAlgorithm(pool, loss)
    reality = scenario.start(structure.space, loss)
    records = []
    rule_losses = np.empty(reality.horizon)
    for n in range(1, reality.horizon + 1):
        x = reality.signal(n)
        if not structure.space.contains(x):
            raise ConfigError(f"scenario signal {x!r} is outside the pool's signal space")
        prediction = engine.predict(x)
        y = reality.observation(n, x, prediction)
        records.append(engine.update(x, prediction, y))
        rule_losses[n - 1] = rule_loss(rule(structure, x), loss, y)

    best = int(np.argmin(engine.state.cumulative_losses)) + 1
    return RegretTrace(
        scenario=scenario.name or scenario.kind,
        rule_name=rule.name,
        rule_level=rule.level,
        loss_bound=loss.bound,
        records=records,
        rule_losses=rule_losses,
        best_expert=best,
        best_expert_losses=_expert_round_losses(records, pool, best),
        best_expert_prior=pool.prior(best),
        nearest=near,
        nearest_distance=delta,
        nearest_prior=pool.prior(near),
        nearest_losses=_expert_round_losses(records, pool, near),
        randomized=engine.randomized,
    )


def run_deterministic(scenario: RealityScenario, pool: ExpertPool, loss: LossFunction,
                      structure: ApproximationStructure, rule: BenchmarkRule) -> RegretTrace:
    if pool.grid.randomized or rule.randomized:
        raise ConfigError("deterministic runs need a real-valued grid and rule")
    if not loss.is_convex:
        raise ConfigError(f"{loss.kind} loss is not convex; run the randomized game instead")
    return _play(scenario, pool, loss, structure, rule)


# --------------------------------------------------------------------------
# randomized game


@dataclass
class SampledPath:
    seed: int
    learner_losses: np.ndarray  # loss(g_n, y_n)
    rule_losses: np.ndarray  # loss(d_n, y_n)

    def average_regret(self) -> np.ndarray:
        n = np.arange(1, len(self.learner_losses) + 1)
        return (np.cumsum(self.learner_losses) - np.cumsum(self.rule_losses)) / n


@dataclass
class RandomizedRun:
    mean: RegretTrace
    paths: list[SampledPath]

    def learner_deviation(self, path: SampledPath) -> np.ndarray:
        return np.cumsum(path.learner_losses - self.mean.learner_losses)

    def rule_deviation(self, path: SampledPath) -> np.ndarray:
        return np.cumsum(path.rule_losses - self.mean.rule_losses)

    def sup_average_regret(self, n0: int) -> np.ndarray:
        """Per path, ``max_{n0 <= N <= horizon}`` of the sampled average regret."""
        if not 1 <= n0 <= self.mean.horizon:
            raise InvalidArgumentError(f"N0={n0} outside 1..{self.mean.horizon}")
        return np.array([p.average_regret()[n0 - 1:].max() for p in self.paths])

    def fraction_within(self, eps: float, n0: int) -> float:
        return float(np.mean(self.sup_average_regret(n0) <= eps))


def _cdf_rows(measures: Sequence[FiniteMeasure], points: np.ndarray) -> np.ndarray:
    rows = np.zeros((len(measures), len(points)))
    for i, mu in enumerate(measures):
        rows[i, np.searchsorted(points, mu.points)] = mu.masses
    return np.cumsum(rows, axis=1)


def run_randomized(scenario: RealityScenario, pool: ExpertPool, loss: LossFunction,
                   structure: ApproximationStructure, rule: BenchmarkRule,
                   seeds: Sequence[int]) -> RandomizedRun:
    """Play the measure-valued game once, then draw ``g_n`` and ``d_n`` per seed.

    Reality never sees the draws, so the expected-loss game is common to all
    seeds.  Each seed drives two independent generators, one for the learner
    and one for the rule.
    """
    if not seeds:
        raise InvalidArgumentError("run_randomized needs at least one seed")
    if not pool.grid.randomized:
        raise ConfigError("randomized runs need a measure-valued grid")
    if not rule.randomized:
        rule = BenchmarkRule(rule.level, tuple(FiniteMeasure(((float(v), 1.0),)) for v in rule.values),
                             rule.name)
    mean = _play(scenario, pool, loss, structure, rule)

    ys = [rec.y for rec in mean.records]
    gammas = [rec.prediction for rec in mean.records]
    ds = [rule(structure, rec.x) for rec in mean.records]
    g_points = pool.grid.support
    d_points = np.unique(np.concatenate([v.points for v in rule.values]))
    g_cdfs = _cdf_rows(gammas, g_points)
    d_cdfs = _cdf_rows(ds, d_points)
    g_loss = np.array([loss.evaluate_many(g_points, y) for y in ys])
    d_loss = np.array([loss.evaluate_many(d_points, y) for y in ys])
    rounds = np.arange(len(ys))

    paths = []
    for seed in seeds:
        g_rng, d_rng = np.random.default_rng(seed).spawn(2)
        u_g = g_rng.random((1, len(ys)))
        u_d = d_rng.random((1, len(ys)))
        g_idx = np.searchsorted(g_points, sample_from_cdfs(g_points, g_cdfs, u_g)[0])
        d_idx = np.searchsorted(d_points, sample_from_cdfs(d_points, d_cdfs, u_d)[0])
        paths.append(SampledPath(int(seed), g_loss[rounds, g_idx], d_loss[rounds, d_idx]))
    return RandomizedRun(mean, paths)


def lil_envelope(loss_bound: float, n) -> Any:
    """``sqrt(2.01 L**2 N ln ln N)``; accepts scalars or arrays of ``N >= 3``."""
    arr = np.asarray(n, dtype=float)
    if np.any(arr < 3):
        raise InvalidArgumentError("the LIL envelope needs N >= 3")
    out = np.sqrt(2.01 * loss_bound**2 * arr * np.log(np.log(arr)))
    return float(out) if out.ndim == 0 else out


def check_lil_envelope(run: RandomizedRun, loss_bound: float, n0: int | Sequence[int] = 50):
    """Fraction of sampled paths whose centred sums stay inside the envelope.

    Both the learner's and the rule's centred cumulative sums must satisfy
    ``|S_N| <= lil_envelope(L, N)`` for every ``N0 <= N <= horizon``.
    Returns a float for a single ``N0`` and a dict for a sequence.
    """
    starts = [n0] if np.isscalar(n0) else list(n0)
    horizon = run.mean.horizon
    out = {}
    for start in starts:
        if not 3 <= start <= horizon:
            raise InvalidArgumentError(f"N0={start} outside 3..{horizon}")
        env = lil_envelope(loss_bound, np.arange(start, horizon + 1))
        ok = [
            bool(np.all(np.abs(run.learner_deviation(p)[start - 1:]) <= env)
                 and np.all(np.abs(run.rule_deviation(p)[start - 1:]) <= env))
            for p in run.paths
        ]
        out[start] = float(np.mean(ok)) if ok else 1.0
    return out[starts[0]] if np.isscalar(n0) else out


# --------------------------------------------------------------------------
# universality thresholds


def deterministic_threshold(constant: float, eps: float) -> int:
    """Smallest ``N`` with ``constant / sqrt(N) <= eps / 2``."""
    n = math.ceil((2.0 * constant / eps) ** 2)
    # guard the ceiling against rounding in the square
    while n > 1 and constant / math.sqrt(n - 1) <= eps / 2:
        n -= 1
    while constant / math.sqrt(n) > eps / 2:
        n += 1
    return max(n, 1)


def randomized_threshold(constant: float, loss_bound: float, eps: float) -> int:
    """Horizon past which the randomized guarantee is derived.

    Half of ``eps`` goes to the mean path (handled as the deterministic case
    with ``eps / 2``), the other half to the two sampling deviations, each
    bounded by the LIL envelope divided by ``N``.
    """
    n_mean = deterministic_threshold(constant, eps / 2)

    def lil_ok(n):
        return 2.0 * lil_envelope(loss_bound, n) / n <= eps / 2

    lo, hi = 16, 16
    while not lil_ok(hi):
        hi *= 2
    while lo < hi:
        mid = (lo + hi) // 2
        if lil_ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return max(n_mean, lo)


@dataclass
class UniversalityReport:
    rule: str
    m: int
    eps: float
    feasible: bool
    analytic: int | None
    empirical: int | None
    delta: float
    loss_gap_bound: float
    nearest: int
    prior: float
    required_grid: int | None = None

    @property
    def analytic_ge_empirical(self) -> bool | None:
        if self.analytic is None or self.empirical is None:
            return None
        return self.analytic >= self.empirical

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["analytic_ge_empirical"] = self.analytic_ge_empirical
        return d


def loss_gap_bound(loss: LossFunction, delta: float, randomized: bool) -> float:
    """Per-round loss difference implied by distance ``delta`` to the nearest expert."""
    return loss.bl_norm_bound_rho() * delta if randomized else delta


def required_grid_size(rule: BenchmarkRule, loss: LossFunction, eps: float,
                       randomized: bool = False, start: int = 1, limit: int = 1024) -> int | None:
    """Smallest uniform grid size (or mass denominator when randomized) from ``start`` that is fine enough."""
    for size in range(start, limit + 1):
        if randomized:
            points = sorted({g for v in rule.values for g, _ in v.atoms})
            values = PredictionGrid.of_measures(points, size).values
        else:
            values = PredictionGrid.uniform(size).values
        _, delta = nearest_on_grid(values, rule.values, loss)
        if loss_gap_bound(loss, delta, randomized) <= eps / 2:
            return size
    return None


def empirical_universality(traces: Sequence[RegretTrace], rules: Sequence[BenchmarkRule],
                           pool: ExpertPool, loss: LossFunction, eps: float | None = None
                           ) -> list[UniversalityReport]:
    """Analytic versus observed threshold ``N_{D,m,eps}`` for each traced rule.

    ``eps`` defaults to ``2**-m`` per rule.
    """
    reports = []
    L = loss.bound
    for trace, rule in zip(traces, rules):
        m = rule.level
        e = 2.0**-m if eps is None else eps
        gap = loss_gap_bound(loss, trace.nearest_distance, trace.randomized)
        empirical = trace.first_round_within(e)
        base = dict(rule=rule.name, m=m, eps=e, delta=trace.nearest_distance, loss_gap_bound=gap,
                    nearest=trace.nearest, prior=trace.nearest_prior, empirical=empirical)
        if e >= 2 * L:
            reports.append(UniversalityReport(feasible=True, analytic=1, **base))
            continue
        limit = e / 4 if trace.randomized else e / 2
        if gap > limit:
            current = pool.grid.size
            if trace.randomized:
                current = round(1 / min(w for v in pool.grid.values for _, w in v.atoms))
            required = required_grid_size(rule, loss, e / 2 if trace.randomized else e,
                                          trace.randomized, start=current + 1)
            reports.append(UniversalityReport(feasible=False, analytic=None,
                                              required_grid=required, **base))
            continue
        constant = lemma5_constant(L, trace.nearest_prior)
        if trace.randomized:
            analytic = randomized_threshold(constant, L, e)
        else:
            analytic = deterministic_threshold(constant, e)
        reports.append(UniversalityReport(feasible=True, analytic=analytic, **base))
    return reports


# --------------------------------------------------------------------------
# independent audit


@dataclass
class AuditReport:
    lemma9_min_gap: float
    lemma9_round: int
    lemma5_max_excess: float
    lemma5_round: int
    lemma5_expert: int
    matches_engine: bool

    @property
    def passed(self) -> bool:
        return self.lemma9_min_gap >= -TOL and self.lemma5_max_excess <= TOL and self.matches_engine


def audit_trace(trace: RegretTrace, pool: ExpertPool, loss: LossFunction) -> AuditReport:
    """Re-derive the mixture-inequality gaps and per-expert regret excesses from raw losses."""
    gaps = lemma9_gap(trace.records, pool, loss)
    L = loss.bound
    consts = L**2 * math.exp(L) - pool.log_priors
    cum = np.zeros(pool.size)
    learner = 0.0
    worst = (-math.inf, 0, 0)
    for rec, row in zip(trace.records, expert_loss_rows(trace.records, pool)):
        cum += row
        learner += rec.learner_loss
        excess = learner - cum - consts * math.sqrt(rec.n)
        k = int(np.argmax(excess))
        if excess[k] > worst[0]:
            worst = (float(excess[k]), rec.n, k + 1)
    i = int(np.argmin(gaps))
    matches = bool(np.allclose(gaps, trace.lemma9_gaps, rtol=0, atol=1e-7))
    return AuditReport(float(gaps[i]), i + 1, worst[0], worst[1], worst[2], matches)
