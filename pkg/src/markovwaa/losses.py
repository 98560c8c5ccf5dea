"""Loss functions on ``Gamma x Y`` and the pseudo-metric they induce on ``Gamma``.

Built-in losses take predictions in ``[0, 1]``.  The observation space is
either the whole interval ``[0, 1]`` (``observations=None``) or a finite
tuple of reals.  ``Custom`` losses are tabulated on finite prediction and
observation sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from markovwaa.errors import DomainError, InvalidArgumentError, UnsupportedError

SQUARE = "square"
ABSOLUTE = "absolute"
ZERO_ONE = "zero_one"
CUSTOM = "custom"

CONVEX_KINDS = frozenset({SQUARE, ABSOLUTE})


@dataclass(frozen=True)
class LossFunction:
    kind: str
    observations: tuple[float, ...] | None = None
    threshold: float = 0.5
    predictions: tuple[float, ...] = ()
    table: tuple[tuple[float, ...], ...] = field(default=(), repr=False)

    def __post_init__(self):
        if self.kind not in (SQUARE, ABSOLUTE, ZERO_ONE, CUSTOM):
            raise InvalidArgumentError(f"unknown loss kind {self.kind!r}")
        if self.observations is not None:
            obs = tuple(float(y) for y in self.observations)
            if not obs:
                raise InvalidArgumentError("observation set must not be empty")
            object.__setattr__(self, "observations", obs)
        if self.kind == CUSTOM:
            if self.observations is None:
                raise UnsupportedError("custom losses need a finite observation set")
            preds = tuple(float(g) for g in self.predictions)
            if len(set(preds)) != len(preds) or not preds:
                raise InvalidArgumentError("custom loss predictions must be distinct and non-empty")
            arr = np.asarray(self.table, dtype=float)
            if arr.shape != (len(preds), len(self.observations)):
                raise InvalidArgumentError(
                    f"custom loss table must have shape {(len(preds), len(self.observations))}, "
                    f"got {arr.shape}"
                )
            object.__setattr__(self, "predictions", preds)
            object.__setattr__(self, "table", tuple(tuple(row) for row in arr.tolist()))
        elif self.kind != ZERO_ONE and self.observations is not None:
            if any(not 0.0 <= y <= 1.0 for y in self.observations):
                raise InvalidArgumentError("built-in losses need observations inside [0, 1]")

    # constructors -----------------------------------------------------

    @classmethod
    def square(cls, observations: Sequence[float] | None = None) -> "LossFunction":
        return cls(SQUARE, observations=None if observations is None else tuple(observations))

    @classmethod
    def absolute(cls, observations: Sequence[float] | None = None) -> "LossFunction":
        return cls(ABSOLUTE, observations=None if observations is None else tuple(observations))

    @classmethod
    def zero_one(cls, threshold: float = 0.5, observations: Sequence[float] = (0.0, 1.0)) -> "LossFunction":
        return cls(ZERO_ONE, observations=tuple(observations), threshold=threshold)

    @classmethod
    def custom(cls, predictions, observations, table) -> "LossFunction":
        return cls(CUSTOM, observations=tuple(observations), predictions=tuple(predictions),
                   table=tuple(tuple(r) for r in table))

    # descriptive properties --------------------------------------------

    @property
    def is_convex(self) -> bool:
        return self.kind in CONVEX_KINDS

    @property
    def finite_predictions(self) -> bool:
        return self.kind == CUSTOM

    @property
    def bound(self) -> float:
        """``L`` with ``|loss| <= L`` everywhere."""
        if self.kind == CUSTOM:
            return float(np.max(np.abs(self._table_array))) if self.table else 0.0
        return 1.0

    @property
    def lipschitz_constant(self) -> float:
        """Lipschitz constant in the prediction, w.r.t. ``|g - g'|``, uniform in y."""
        if self.kind == SQUARE:
            return 2.0
        if self.kind == ABSOLUTE:
            return 1.0
        if self.kind == ZERO_ONE:
            return math.inf
        preds = np.asarray(self.predictions)
        if preds.size < 2:
            return 0.0
        tab = self._table_array
        dg = np.abs(preds[:, None] - preds[None, :])
        dl = np.max(np.abs(tab[:, None, :] - tab[None, :, :]), axis=2)
        off = dg > 0
        return float(np.max(dl[off] / dg[off]))

    @property
    def _table_array(self) -> np.ndarray:
        try:
            return self.__dict__["_tab"]
        except KeyError:
            tab = np.asarray(self.table, dtype=float)
            object.__setattr__(self, "_tab", tab)
            return tab

    # membership -------------------------------------------------------

    def check_prediction(self, g: float) -> float:
        if self.kind == CUSTOM:
            if g not in self._pred_index:
                raise DomainError(f"prediction {g!r} not in the custom prediction set")
            return float(g)
        if not 0.0 <= g <= 1.0:
            raise DomainError(f"prediction {g!r} outside [0, 1]")
        return float(g)

    def check_observation(self, y: float) -> float:
        if self.observations is None:
            if not 0.0 <= y <= 1.0:
                raise DomainError(f"observation {y!r} outside [0, 1]")
        elif y not in self._obs_index:
            raise DomainError(f"observation {y!r} not in {self.observations}")
        return float(y)

    @property
    def _pred_index(self) -> dict:
        try:
            return self.__dict__["_pidx"]
        except KeyError:
            idx = {g: i for i, g in enumerate(self.predictions)}
            object.__setattr__(self, "_pidx", idx)
            return idx

    @property
    def _obs_index(self) -> dict:
        try:
            return self.__dict__["_oidx"]
        except KeyError:
            idx = {y: i for i, y in enumerate(self.observations or ())}
            object.__setattr__(self, "_oidx", idx)
            return idx

    # evaluation -------------------------------------------------------

    def evaluate(self, g: float, y: float) -> float:
        g = self.check_prediction(g)
        y = self.check_observation(y)
        return float(self._raw(np.asarray([g]), y)[0])

    def evaluate_many(self, gs, y: float) -> np.ndarray:
        """Vectorized :meth:`evaluate` over predictions for a single observation."""
        y = self.check_observation(y)
        gs = np.asarray(gs, dtype=float)
        if self.kind == CUSTOM:
            for g in gs.ravel():
                self.check_prediction(g)
        elif gs.size and (gs.min() < 0.0 or gs.max() > 1.0):
            raise DomainError("predictions outside [0, 1]")
        return self._raw(gs, y)

    def _raw(self, gs: np.ndarray, y: float) -> np.ndarray:
        if self.kind == SQUARE:
            return (gs - y) ** 2
        if self.kind == ABSOLUTE:
            return np.abs(gs - y)
        if self.kind == ZERO_ONE:
            return ((gs >= self.threshold) != (y >= self.threshold)).astype(float)
        col = self._obs_index[y]
        rows = [self._pred_index[float(g)] for g in gs.ravel()]
        return self._table_array[rows, col].reshape(gs.shape)

    def pseudo_metric(self, g: float, g2: float) -> float:
        """``sup_y |loss(g, y) - loss(g2, y)|``.

        Closed forms are used for built-ins over the whole interval; finite
        observation sets are scanned exhaustively.
        """
        g = self.check_prediction(g)
        g2 = self.check_prediction(g2)
        if self.observations is not None:
            return float(max(abs(self._raw(np.asarray([g]), y)[0] - self._raw(np.asarray([g2]), y)[0])
                             for y in self.observations))
        if self.kind == SQUARE:
            s = g + g2
            return abs(g - g2) * max(s, 2.0 - s)
        if self.kind == ABSOLUTE:
            return abs(g - g2)
        if self.kind == ZERO_ONE:
            return 0.0 if (g >= self.threshold) == (g2 >= self.threshold) else 1.0
        raise UnsupportedError("pseudo-metric needs a finite observation set for custom losses")

    def pseudo_metric_matrix(self, gs: Sequence[float]) -> np.ndarray:
        gs = [float(g) for g in gs]
        n = len(gs)
        out = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = self.pseudo_metric(gs[i], gs[j])
        return out

    def bl_norm_bound(self) -> float:
        """Upper bound on ``sup_y ||loss(., y)||_BL``.

        The Lipschitz part is measured against ``|g - g'|`` on the prediction
        interval, not against the pseudo-metric; see
        :meth:`bl_norm_bound_rho` for the latter.
        """
        lip = self.lipschitz_constant
        if math.isinf(lip):
            raise UnsupportedError(f"{self.kind} loss is not Lipschitz in the prediction")
        return lip + self.bound

    def bl_norm_bound_rho(self) -> float:
        # against the pseudo-metric every loss(., y) is 1-Lipschitz by construction
        return 1.0 + self.bound

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.observations is not None:
            out["observations"] = list(self.observations)
        if self.kind == ZERO_ONE:
            out["threshold"] = self.threshold
        if self.kind == CUSTOM:
            out["predictions"] = list(self.predictions)
            out["table"] = [list(r) for r in self.table]
        return out
