"""Signal spaces and their approximation structures.

An approximation structure is a family of idempotent quantizers
``phi_m`` whose image at level ``m`` has exactly ``2**m`` points.  Three
concrete spaces are supported:

* the unit interval, quantized by binary truncation after ``m`` digits;
* the unit cube ``[0, 1]**d`` under the sup metric, where the ``m`` bits
  are spread over coordinates (lower-indexed coordinates take the extra
  bit when ``m`` is not a multiple of ``d``);
* a finite set of labels under the discrete metric, split into ``2**m``
  contiguous blocks of the label order.

The cube construction is one choice among many; nothing forces it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Any, Hashable, Sequence

from markovwaa.errors import DomainError, InvalidArgumentError

UNIT_INTERVAL = "unit_interval"
UNIT_CUBE = "unit_cube"
FINITE_SET = "finite_set"

# binary truncation past 52 digits is the identity on doubles
MAX_CONTINUOUS_LEVEL = 52


@dataclass(frozen=True)
class SignalSpace:
    kind: str
    dim: int = 1
    labels: tuple[Hashable, ...] = ()

    def __post_init__(self):
        if self.kind not in (UNIT_INTERVAL, UNIT_CUBE, FINITE_SET):
            raise InvalidArgumentError(f"unknown signal space kind {self.kind!r}")
        if self.kind == UNIT_CUBE and self.dim < 1:
            raise InvalidArgumentError("unit cube dimension must be positive")
        if self.kind == FINITE_SET:
            if len(self.labels) < 2:
                raise InvalidArgumentError("finite signal set needs at least two labels")
            if len(set(self.labels)) != len(self.labels):
                raise InvalidArgumentError("finite signal set labels must be distinct")

    @classmethod
    def unit_interval(cls) -> "SignalSpace":
        return cls(UNIT_INTERVAL)

    @classmethod
    def unit_cube(cls, dim: int) -> "SignalSpace":
        return cls(UNIT_CUBE, dim=dim)

    @classmethod
    def finite_set(cls, labels: Sequence[Hashable]) -> "SignalSpace":
        return cls(FINITE_SET, labels=tuple(labels))

    @property
    def max_level(self) -> int:
        if self.kind == FINITE_SET:
            return int(math.floor(math.log2(len(self.labels))))
        return MAX_CONTINUOUS_LEVEL

    def contains(self, x: Any) -> bool:
        if self.kind == UNIT_INTERVAL:
            return isinstance(x, (int, float)) and 0.0 <= x <= 1.0
        if self.kind == UNIT_CUBE:
            try:
                coords = tuple(x)
            except TypeError:
                return False
            return len(coords) == self.dim and all(0.0 <= c <= 1.0 for c in coords)
        return x in self._label_index

    def check(self, x: Any) -> Any:
        if not self.contains(x):
            raise DomainError(f"signal {x!r} is not in the {self.kind} space")
        if self.kind == UNIT_CUBE:
            return tuple(float(c) for c in x)
        if self.kind == UNIT_INTERVAL:
            return float(x)
        return x

    def distance(self, a: Any, b: Any) -> float:
        a, b = self.check(a), self.check(b)
        if self.kind == UNIT_INTERVAL:
            return abs(a - b)
        if self.kind == UNIT_CUBE:
            return max(abs(u - v) for u, v in zip(a, b))
        return 0.0 if a == b else 1.0

    def label_position(self, x: Hashable) -> int:
        return self._label_index[x]

    @property
    def _label_index(self) -> dict:
        # cached lazily; frozen dataclass so go through object.__setattr__
        try:
            return self.__dict__["_idx"]
        except KeyError:
            idx = {label: i for i, label in enumerate(self.labels)}
            object.__setattr__(self, "_idx", idx)
            return idx

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == UNIT_CUBE:
            out["dim"] = self.dim
        if self.kind == FINITE_SET:
            out["labels"] = list(self.labels)
        return out


def cube_bits(m: int, dim: int) -> list[int]:
    """Per-coordinate bit allocation for level ``m`` on a ``dim``-cube."""
    base, extra = divmod(m, dim)
    return [base + (1 if i < extra else 0) for i in range(dim)]


def _finite_block_start(block: int, n: int, m: int) -> int:
    # ceil(block * n / 2**m)
    return -((-block * n) // (1 << m))


@dataclass(frozen=True)
class ApproximationStructure:
    space: SignalSpace
    levels: int

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidArgumentError("an approximation structure needs at least one level")
        if self.levels > self.space.max_level:
            raise InvalidArgumentError(
                f"{self.space.kind} supports at most {self.space.max_level} levels, "
                f"got {self.levels}"
            )

    def _check_level(self, m: int) -> None:
        if not isinstance(m, (int,)) or isinstance(m, bool) or not 1 <= m <= self.levels:
            raise InvalidArgumentError(f"level {m!r} outside 1..{self.levels}")

    def cell_index(self, m: int, x: Any) -> int:
        """Position of ``quantize(m, x)`` within ``image(m)``."""
        self._check_level(m)
        x = self.space.check(x)
        kind = self.space.kind
        if kind == UNIT_INTERVAL:
            return min(int(math.floor(x * (1 << m))), (1 << m) - 1)
        if kind == UNIT_CUBE:
            index = 0
            for coord, bits in zip(x, cube_bits(m, self.space.dim)):
                j = min(int(math.floor(coord * (1 << bits))), (1 << bits) - 1)
                index = (index << bits) | j
            return index
        n = len(self.space.labels)
        return (self.space.label_position(x) << m) // n

    def quantize(self, m: int, x: Any) -> Any:
        return self._point(m, self.cell_index(m, x))

    def _point(self, m: int, index: int) -> Any:
        kind = self.space.kind
        if kind == UNIT_INTERVAL:
            return index / (1 << m)
        if kind == UNIT_CUBE:
            coords = []
            for bits in reversed(cube_bits(m, self.space.dim)):
                coords.append((index & ((1 << bits) - 1)) / (1 << bits))
                index >>= bits
            return tuple(reversed(coords))
        n = len(self.space.labels)
        return self.space.labels[_finite_block_start(index, n, m)]

    def image(self, m: int) -> list:
        """The ``2**m`` fixed points of ``quantize(m, .)`` in lexicographic order."""
        self._check_level(m)
        if self.space.kind == UNIT_CUBE:
            axes = [[j / (1 << b) for j in range(1 << b)] for b in cube_bits(m, self.space.dim)]
            return [tuple(p) for p in itertools.product(*axes)]
        return [self._point(m, j) for j in range(1 << m)]

    def half_max_cell_diameter(self, m: int) -> float:
        """Half the diameter of the widest quantization cell at level ``m``.

        This is an upper bound on the ``m``-th Kolmogorov diameter of the
        space, which takes the infimum over all approximation structures.
        """
        self._check_level(m)
        kind = self.space.kind
        if kind == UNIT_INTERVAL:
            return 0.5 / (1 << m)
        if kind == UNIT_CUBE:
            return 0.5 / (1 << min(cube_bits(m, self.space.dim)))
        n = len(self.space.labels)
        widest = max(
            _finite_block_start(j + 1, n, m) - _finite_block_start(j, n, m) for j in range(1 << m)
        )
        return 0.5 if widest > 1 else 0.0

    def to_dict(self) -> dict:
        return {"space": self.space.to_dict(), "levels": self.levels}
