"""Enumeration of m-elementary experts over a finite prediction grid.

An m-elementary expert is a lookup table from the ``2**m`` quantization
cells of level ``m`` to grid values.  Level ``m`` therefore contributes
``G ** (2 ** m)`` experts.  Experts are numbered from 1, level by level,
and within a level in lexicographic order of their tables (the first
cell is the most significant digit).

Grid values are either reals (deterministic game) or
:class:`~markovwaa.measures.FiniteMeasure` instances (randomized game).
Tables are stored as small integer arrays of grid indices, transposed so
that the column of expert choices for one cell is contiguous.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from typing import Any, Mapping, Sequence

import numpy as np

from markovwaa.errors import InvalidArgumentError, ResourceLimitError
from markovwaa.losses import LossFunction
from markovwaa.measures import FiniteMeasure, fm_distance, lift
from markovwaa.spaces import ApproximationStructure

DEFAULT_POOL_CAP = 10**6


@dataclass(frozen=True)
class PredictionGrid:
    values: tuple

    def __post_init__(self):
        if not self.values:
            raise InvalidArgumentError("prediction grid must not be empty")
        if self.randomized:
            if any(not isinstance(v, FiniteMeasure) for v in self.values):
                raise InvalidArgumentError("grid mixes measures and plain predictions")
            if len(set(self.values)) != len(self.values):
                raise InvalidArgumentError("grid measures must be distinct")
        else:
            vals = tuple(float(v) for v in self.values)
            if list(vals) != sorted(set(vals)):
                raise InvalidArgumentError("grid values must be distinct and sorted")
            object.__setattr__(self, "values", vals)

    @classmethod
    def uniform(cls, size: int) -> "PredictionGrid":
        """``size`` equispaced points of ``[0, 1]``; a single point sits at 1/2."""
        if size < 1:
            raise InvalidArgumentError("grid size must be positive")
        if size == 1:
            return cls((0.5,))
        return cls(tuple(j / (size - 1) for j in range(size)))

    @classmethod
    def of_measures(cls, points: Sequence[float], denominator: int) -> "PredictionGrid":
        """All measures on ``points`` whose masses are multiples of ``1/denominator``."""
        if denominator < 1:
            raise InvalidArgumentError("mass denominator must be positive")
        points = sorted(float(p) for p in points)
        measures = []
        for counts in _compositions(denominator, len(points)):
            pairs = tuple((p, c / denominator) for p, c in zip(points, counts) if c)
            measures.append(FiniteMeasure(pairs))
        return cls(tuple(measures))

    @property
    def randomized(self) -> bool:
        return isinstance(self.values[0], FiniteMeasure)

    @property
    def size(self) -> int:
        return len(self.values)

    @property
    def support(self) -> np.ndarray:
        """Sorted union of the atom locations of all grid values."""
        if not self.randomized:
            return np.asarray(self.values, dtype=float)
        return np.unique(np.concatenate([m.points for m in self.values]))

    def mass_matrix(self) -> np.ndarray:
        """Row ``i`` is grid value ``i`` written as masses on :attr:`support`."""
        support = self.support
        if not self.randomized:
            return np.eye(len(support))
        out = np.zeros((self.size, len(support)))
        for i, mu in enumerate(self.values):
            out[i, np.searchsorted(support, mu.points)] = mu.masses
        return out

    def to_json_obj(self) -> list:
        if self.randomized:
            return [m.to_list() for m in self.values]
        return list(self.values)


def _compositions(total: int, parts: int):
    """Nonnegative integer vectors of length ``parts`` summing to ``total``, lexicographic."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True)
class LevelBlock:
    m: int
    offset: int
    count: int
    tables: np.ndarray  # shape (2**m, count), grid indices
    # every table over the grid, in lexicographic order: the block reshapes
    # to a (G,) * 2**m array whose axis c is the choice at cell c
    complete: bool = False


def hierarchical_log_priors(m_max: int, grid_size: int) -> list[float]:
    """Per-level log prior of a single expert.

    A level-m expert receives ``(2**-m / Z) / G**(2**m)`` with
    ``Z = sum_{m<=m_max} 2**-m``, so priors sum to one over the pool.
    """
    z = 1.0 - 2.0 ** (-m_max)
    return [-m * math.log(2.0) - math.log(z) - (2**m) * math.log(grid_size)
            for m in range(1, m_max + 1)]


class ExpertPool:
    """All m-elementary experts for ``m = 1..m_max`` over ``grid``."""

    def __init__(self, structure: ApproximationStructure, grid: PredictionGrid, m_max: int,
                 *, cap: int = DEFAULT_POOL_CAP, prior_scheme: str = "hierarchical",
                 prior_overrides: Mapping[int, float] | None = None):
        if m_max < 1:
            raise InvalidArgumentError("m_max must be at least 1")
        if m_max > structure.levels:
            raise InvalidArgumentError(
                f"m_max={m_max} exceeds the approximation structure's {structure.levels} levels"
            )
        self.structure = structure
        self.grid = grid
        self.m_max = m_max
        self.cap = cap
        self.prior_scheme = prior_scheme
        self.prior_overrides = dict(prior_overrides or {})

        g = grid.size
        total = 0
        for m in range(1, m_max + 1):
            total += g ** (2**m)
            if total > cap:
                raise ResourceLimitError(
                    f"level m={m} brings the pool to {total} experts, above the cap of {cap}"
                )
        self.blocks: list[LevelBlock] = []
        offset = 0
        dtype = np.uint8 if g <= 256 else np.int32
        for m in range(1, m_max + 1):
            cells = 2**m
            count = g**cells
            local = np.arange(count, dtype=np.int64)
            tables = np.empty((cells, count), dtype=dtype)
            for c in range(cells):
                tables[c] = (local // g ** (cells - 1 - c)) % g
            self.blocks.append(LevelBlock(m, offset, count, tables, complete=True))
            offset += count
        self.size = offset
        self.log_priors = self._build_log_priors()

    @classmethod
    def from_tables(cls, structure: ApproximationStructure, grid: PredictionGrid,
                    tables: Sequence[tuple[int, Sequence[int]]],
                    priors: Sequence[float]) -> "ExpertPool":
        """Pool made of explicitly listed experts.

        ``tables`` is a sequence of ``(m, [grid indices per cell])`` pairs, one
        per expert, in pool order.  Consecutive experts of equal level share a
        block.  Duplicates are allowed.
        """
        if len(tables) != len(priors) or not tables:
            raise InvalidArgumentError("need one prior per expert and at least one expert")
        pool = cls.__new__(cls)
        pool.structure = structure
        pool.grid = grid
        pool.m_max = max(m for m, _ in tables)
        pool.cap = DEFAULT_POOL_CAP
        pool.prior_scheme = "explicit"
        pool.prior_overrides = {}
        pool.blocks = []
        offset = 0
        for m, group in itertools.groupby(tables, key=lambda t: t[0]):
            rows = [list(t) for _, t in group]
            if any(len(r) != 2**m for r in rows):
                raise InvalidArgumentError(f"level-{m} tables need {2**m} entries")
            if any(not 0 <= i < grid.size for r in rows for i in r):
                raise InvalidArgumentError("table entry outside the grid")
            arr = np.asarray(rows, dtype=np.int32).T.copy()
            pool.blocks.append(LevelBlock(m, offset, len(rows), arr))
            offset += len(rows)
        pool.size = offset
        if any(not q > 0 for q in priors) or math.fsum(priors) > 1.0 + 1e-12:
            raise InvalidArgumentError("priors must be positive and sum to at most 1")
        pool.log_priors = np.log(np.asarray(priors, dtype=float))
        return pool

    # priors -----------------------------------------------------------

    def _build_log_priors(self) -> np.ndarray:
        if self.prior_scheme == "hierarchical":
            per_level = hierarchical_log_priors(self.m_max, self.grid.size)
            logq = np.concatenate([np.full(b.count, per_level[b.m - 1]) for b in self.blocks])
        elif self.prior_scheme == "uniform":
            logq = np.full(self.size, -math.log(self.size))
        else:
            raise InvalidArgumentError(f"unknown prior scheme {self.prior_scheme!r}")
        for k, q in self.prior_overrides.items():
            self._check_index(k)
            if not q > 0:
                raise InvalidArgumentError(f"prior override for expert {k} must be positive, got {q}")
            logq[k - 1] = math.log(q)
        total = float(np.exp(logq).sum())
        if total > 1.0 + 1e-12:
            raise InvalidArgumentError(f"priors sum to {total}, which exceeds 1")
        return logq

    def prior(self, k: int) -> float:
        self._check_index(k)
        return math.exp(self.log_priors[k - 1])

    # lookups ----------------------------------------------------------

    def __len__(self) -> int:
        return self.size

    def _check_index(self, k: int) -> None:
        if not 1 <= k <= self.size:
            raise InvalidArgumentError(f"expert index {k} outside 1..{self.size}")

    def locate(self, k: int) -> tuple[LevelBlock, int]:
        """Level block holding expert ``k`` and its position inside the block."""
        self._check_index(k)
        for block in self.blocks:
            if k - 1 < block.offset + block.count:
                return block, k - 1 - block.offset
        raise AssertionError("unreachable")

    def level_of(self, k: int) -> int:
        return self.locate(k)[0].m

    def table_indices(self, k: int) -> list[int]:
        block, local = self.locate(k)
        return [int(i) for i in block.tables[:, local]]

    def table(self, k: int) -> list:
        return [self.grid.values[i] for i in self.table_indices(k)]

    def predict(self, k: int, x: Any):
        block, local = self.locate(k)
        cell = self.structure.cell_index(block.m, x)
        return self.grid.values[int(block.tables[cell, local])]

    def index_of_table(self, m: int, grid_indices: Sequence[int]) -> int:
        block = self.block(m)
        g = self.grid.size
        local = 0
        for i in grid_indices:
            local = local * g + int(i)
        return block.offset + local + 1

    def block(self, m: int) -> LevelBlock:
        for b in self.blocks:
            if b.m == m:
                return b
        raise InvalidArgumentError(f"pool has no experts at level {m}")

    def grid_indices_for(self, x: Any) -> list[np.ndarray]:
        """Per level, the grid index each expert of that level plays on signal ``x``."""
        return [b.tables[self.structure.cell_index(b.m, x)] for b in self.blocks]

    def cells_for(self, x: Any) -> list[int]:
        return [self.structure.cell_index(b.m, x) for b in self.blocks]

    # serialization ----------------------------------------------------

    def to_json_obj(self) -> dict:
        digest = hashlib.sha256()
        for b in self.blocks:
            digest.update(np.ascontiguousarray(b.tables).tobytes())
        return {
            "structure": self.structure.to_dict(),
            "grid": self.grid.to_json_obj(),
            "m_max": self.m_max,
            "prior_scheme": self.prior_scheme,
            "prior_overrides": {str(k): v for k, v in sorted(self.prior_overrides.items())},
            "size": self.size,
            "levels": [{"m": b.m, "offset": b.offset, "count": b.count} for b in self.blocks],
            "tables_sha256": digest.hexdigest(),
            "log_priors_sha256": hashlib.sha256(self.log_priors.tobytes()).hexdigest(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True, separators=(",", ":"))


def enumerate_pool(structure: ApproximationStructure, grid: PredictionGrid, m_max: int,
                   **kwargs) -> ExpertPool:
    return ExpertPool(structure, grid, m_max, **kwargs)


def predict_expert(pool: ExpertPool, k: int, x: Any):
    return pool.predict(k, x)


def value_distance(loss: LossFunction, a, b) -> float:
    """Pseudo-metric for reals, Fortet-Mourier distance for measures."""
    if isinstance(a, FiniteMeasure) or isinstance(b, FiniteMeasure):
        a = a if isinstance(a, FiniteMeasure) else lift(a)
        b = b if isinstance(b, FiniteMeasure) else lift(b)
        return fm_distance(a, b, loss)
    return loss.pseudo_metric(a, b)


def nearest_on_grid(values: Sequence, rule: Sequence, loss: LossFunction) -> tuple[list[int], float]:
    """Per-cell grid choices of the minimax-nearest table, and its distance.

    Among all tables attaining the minimax distance the one with the lowest
    lexicographic index is returned.
    """
    dist = np.array([[value_distance(loss, r, v) for v in values] for r in rule])
    delta = float(np.max(np.min(dist, axis=1)))
    choice = [int(np.flatnonzero(row <= delta)[0]) for row in dist]
    return choice, delta


def nearest_expert(pool: ExpertPool, rule: Sequence, loss: LossFunction) -> tuple[int, float]:
    """Pool expert closest to a level-m rule table, with ties going to the lowest index."""
    cells = len(rule)
    m = int(round(math.log2(cells))) if cells > 0 else 0
    if cells < 2 or 2**m != cells:
        raise InvalidArgumentError(f"rule table has {cells} cells, not a power of two")
    if m > pool.m_max:
        raise InvalidArgumentError(f"pool has no experts at level {m}")
    block = pool.block(m)
    if block.complete:
        choice, delta = nearest_on_grid(pool.grid.values, rule, loss)
        return pool.index_of_table(m, choice), delta
    # explicitly listed experts: scan the block
    dist = np.array([[value_distance(loss, r, v) for v in pool.grid.values] for r in rule])
    worst = dist[np.arange(cells)[:, None], block.tables].max(axis=0)
    local = int(np.argmin(worst))
    return block.offset + local + 1, float(worst[local])

