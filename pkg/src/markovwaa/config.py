"""Experiment configuration: TOML on disk, validated with pydantic.

Every field error is reported with its dotted path so a bad config can be
fixed without reading code.  Builders at the bottom turn a validated
config into the library objects a run needs.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import tomli
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from markovwaa.errors import ConfigError
from markovwaa.experts import ExpertPool, PredictionGrid
from markovwaa.harness import SCENARIO_KINDS, BenchmarkRule, RealityScenario, Target
from markovwaa.losses import LossFunction
from markovwaa.measures import FiniteMeasure
from markovwaa.spaces import ApproximationStructure, SignalSpace


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SpaceSpec(_Strict):
    kind: Literal["unit_interval", "unit_cube", "finite_set"] = "unit_interval"
    dim: int = Field(1, ge=1)
    labels: list[Union[int, str]] = []


class QuantizerSpec(_Strict):
    m_max: int = Field(2, ge=1)
    # levels of the approximation structure; defaults to m_max
    levels: Optional[int] = Field(None, ge=1)


class LossSpec(_Strict):
    kind: Literal["square", "absolute", "zero_one"] = "square"
    threshold: float = 0.5
    observations: Optional[list[float]] = None


class GridSpec(_Strict):
    size: int = Field(3, ge=1, le=256)
    # randomized mode: atom locations and mass denominator of the grid measures
    points: list[float] = [0.0, 1.0]
    denominator: int = Field(2, ge=1)


class PriorSpec(_Strict):
    scheme: Literal["hierarchical", "uniform"] = "hierarchical"
    overrides: dict[str, float] = {}
    cap: int = Field(10**6, ge=1)

    @field_validator("overrides")
    @classmethod
    def _positive(cls, v):
        for k, q in v.items():
            if not k.isdigit() or int(k) < 1:
                raise ValueError(f"override key {k!r} must be a 1-based expert index")
            if not q > 0:
                raise ValueError(f"prior override for expert {k} must be positive, got {q}")
        return v


class TargetSpec(_Strict):
    kind: Literal["step", "linear", "sine", "constant", "table"] = "step"
    threshold: float = 0.5
    value: float = 0.5
    frequency: float = 1.0
    table: list[float] = []


class ScenarioSpec(_Strict):
    kind: Literal[SCENARIO_KINDS]  # type: ignore[valid-type]
    name: str = ""
    seed: int = 0
    horizon: Optional[int] = Field(None, ge=1)
    noise: float = Field(0.0, ge=0.0)
    period: int = Field(100, ge=1)
    path: Optional[str] = None
    targets: list[TargetSpec] = [TargetSpec()]

    @model_validator(mode="after")
    def _replay_path(self):
        if self.kind == "replay" and not self.path:
            raise ValueError("replay scenarios need a path")
        return self


Atom = list[float]


class RuleSpec(_Strict):
    name: str
    level: int = Field(ge=1)
    # reals in deterministic mode; lists of [point, mass] atoms in randomized mode
    values: list[Union[float, list[Atom]]]

    @model_validator(mode="after")
    def _cells(self):
        if len(self.values) != 2**self.level:
            raise ValueError(f"level-{self.level} rule needs {2 ** self.level} values, "
                             f"got {len(self.values)}")
        kinds = {isinstance(v, list) for v in self.values}
        if len(kinds) > 1:
            raise ValueError("rule mixes plain values and measures")
        return self


class VerifySpec(_Strict):
    eps: Optional[float] = Field(None, gt=0)
    n0: int = Field(50, ge=3)
    mean_comparison_instances: int = Field(1000, ge=1)
    metric_triples: int = Field(100, ge=1)
    lil_fraction: float = Field(0.95, ge=0, le=1)
    negative_control: Literal["", "understated_loss_bound", "shrunken_regret_bound"] = ""


class SweepSpec(_Strict):
    m: list[int] = []
    grid_size: list[int] = []
    horizon: list[int] = []
    eps: list[float] = []


class ExperimentConfig(_Strict):
    name: str = "experiment"
    mode: Literal["deterministic", "randomized"] = "deterministic"
    horizon: int = Field(1000, ge=1)
    seeds: list[int] = [0]
    output_dir: str = "out"
    space: SpaceSpec = SpaceSpec()
    quantizer: QuantizerSpec = QuantizerSpec()
    loss: LossSpec = LossSpec()
    grid: GridSpec = GridSpec()
    prior: PriorSpec = PriorSpec()
    scenarios: list[ScenarioSpec] = Field(min_length=1)
    rules: list[RuleSpec] = Field(min_length=1)
    verify: VerifySpec = VerifySpec()
    sweep: SweepSpec = SweepSpec()

    @model_validator(mode="after")
    def _consistent(self):
        if self.mode == "randomized" and not self.seeds:
            raise ValueError("randomized mode needs at least one seed")
        if self.mode == "deterministic" and self.loss.kind == "zero_one":
            raise ValueError("zero_one loss is not convex; use mode = 'randomized'")
        levels = self.quantizer.levels or self.quantizer.m_max
        if self.quantizer.m_max > levels:
            raise ValueError("quantizer.m_max exceeds quantizer.levels")
        for r in self.rules:
            if r.level > self.quantizer.m_max:
                raise ValueError(f"rule {r.name!r} has level {r.level} above m_max={self.quantizer.m_max}")
            randomized_values = isinstance(r.values[0], list)
            if randomized_values and self.mode == "deterministic":
                raise ValueError(f"rule {r.name!r} has measure values in deterministic mode")
        names = [s.name or s.kind for s in self.scenarios]
        if len(set(names)) != len(names):
            raise ValueError("scenario names must be unique (set 'name' when kinds repeat)")
        if len({r.name for r in self.rules}) != len(self.rules):
            raise ValueError("rule names must be unique")
        return self


def _diagnostics(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        where = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{where}: {e['msg']}")
    return "\n".join(lines)


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as err:
        raise ConfigError(_diagnostics(err)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err.strerror}") from None
    except tomli.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from None
    return parse_config(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return tomli_w.dumps(cfg.model_dump(exclude_none=True))


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def with_seed_override(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    """Replace every scenario seed by ``seed`` and the sampling seeds by ``seed, seed+1, ...``."""
    data = cfg.model_dump()
    for s in data["scenarios"]:
        s["seed"] = seed
    data["seeds"] = [seed + i for i in range(len(data["seeds"]))]
    return parse_config(data)


# --------------------------------------------------------------------------
# builders


def build_space(cfg: ExperimentConfig) -> SignalSpace:
    s = cfg.space
    try:
        if s.kind == "unit_cube":
            return SignalSpace.unit_cube(s.dim)
        if s.kind == "finite_set":
            return SignalSpace.finite_set(s.labels)
        return SignalSpace.unit_interval()
    except ValueError as err:
        raise ConfigError(f"space: {err}") from None


def build_structure(cfg: ExperimentConfig, m_max: int | None = None) -> ApproximationStructure:
    m_max = cfg.quantizer.m_max if m_max is None else m_max
    levels = max(cfg.quantizer.levels or 0, m_max)
    try:
        return ApproximationStructure(build_space(cfg), levels)
    except ValueError as err:
        raise ConfigError(f"quantizer: {err}") from None


def build_loss(cfg: ExperimentConfig) -> LossFunction:
    s = cfg.loss
    try:
        if s.kind == "zero_one":
            return LossFunction.zero_one(s.threshold, s.observations or (0.0, 1.0))
        return LossFunction(s.kind, observations=None if s.observations is None else tuple(s.observations))
    except ValueError as err:
        raise ConfigError(f"loss: {err}") from None


def build_grid(cfg: ExperimentConfig, size: int | None = None) -> PredictionGrid:
    try:
        if cfg.mode == "randomized":
            return PredictionGrid.of_measures(cfg.grid.points, cfg.grid.denominator if size is None else size)
        return PredictionGrid.uniform(cfg.grid.size if size is None else size)
    except ValueError as err:
        raise ConfigError(f"grid: {err}") from None


def build_pool(cfg: ExperimentConfig, *, m_max: int | None = None, grid_size: int | None = None) -> ExpertPool:
    m_max = cfg.quantizer.m_max if m_max is None else m_max
    structure = build_structure(cfg, m_max)
    overrides = {int(k): v for k, v in cfg.prior.overrides.items()}
    try:
        return ExpertPool(structure, build_grid(cfg, grid_size), m_max, cap=cfg.prior.cap,
                          prior_scheme=cfg.prior.scheme, prior_overrides=overrides)
    except (ValueError,) as err:
        raise ConfigError(f"prior: {err}") from None


def build_scenario(cfg: ExperimentConfig, spec: ScenarioSpec, horizon: int | None = None) -> RealityScenario:
    targets = tuple(Target(t.kind, t.threshold, t.value, t.frequency, tuple(t.table)) for t in spec.targets)
    h = horizon or spec.horizon or cfg.horizon
    return RealityScenario(spec.kind, h, spec.seed, targets, spec.noise, spec.period, spec.path,
                           spec.name or spec.kind)


def build_rule(spec: RuleSpec) -> BenchmarkRule:
    try:
        if isinstance(spec.values[0], list):
            values = tuple(FiniteMeasure(tuple((a[0], a[1]) for a in v)) for v in spec.values)
        else:
            values = tuple(float(v) for v in spec.values)
        return BenchmarkRule(spec.level, values, spec.name)
    except (ValueError, IndexError) as err:
        raise ConfigError(f"rules.{spec.name}: {err}") from None
