"""Weak Aggregating Algorithm over an :class:`~markovwaa.experts.ExpertPool`.

On round ``n`` expert ``k`` carries weight ``q_k * beta_n ** L_{n-1}^(k)``
with ``beta_n = exp(-1/sqrt(n))``.  Weights live in log space,
``ln q_k - L_{n-1}^(k) / sqrt(n)``, and are recomputed from the stored
cumulative losses every round instead of being updated multiplicatively,
since ``beta`` changes with ``n``.

The learner predicts the weight mixture of the experts' predictions: a
convex combination of reals in the deterministic game, a mixture of
measures in the randomized game.  Because an m-elementary expert's play
depends only on its table entry at the current cell, every per-round
quantity that is linear in the weights is computed on the grid (``G``
values) after pooling weights by grid value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from markovwaa.errors import (
    ContractError,
    InsufficientDataError,
    InvalidArgumentError,
    SequencingError,
)
from markovwaa.experts import ExpertPool
from markovwaa.losses import LossFunction
from markovwaa.measures import FiniteMeasure, expected_loss

# keep full per-expert loss vectors in round records only for small pools
KEEP_EXPERT_LOSSES_MAX = 4096


@dataclass
class WaaState:
    n: int
    cumulative_losses: np.ndarray
    log_weights: np.ndarray
    learner_loss: float = 0.0

    @classmethod
    def initial(cls, log_priors: np.ndarray) -> "WaaState":
        return cls(1, np.zeros_like(log_priors), log_priors.copy(), 0.0)


@dataclass
class RoundRecord:
    n: int
    x: Any
    prediction: Any
    y: float
    learner_loss: float
    mixture_loss: float
    value_losses: np.ndarray
    cells: list[int]
    expert_losses: np.ndarray | None
    lemma9_gap: float
    lemma5_slack: float
    best_expert_cumulative: float
    weight_entropy: float
    extras: dict = field(default_factory=dict)


def normalized_weights(state: WaaState) -> np.ndarray:
    _, e, total = _lse(state.log_weights)
    return e / total


def log_weights_from_scratch(log_priors: np.ndarray, cumulative_losses: np.ndarray, n: int) -> np.ndarray:
    return log_priors - cumulative_losses / math.sqrt(n)


def lemma5_bound(loss_bound: float, prior: float, rounds: int | float) -> float:
    """``(L**2 e**L + ln(1/q_K)) sqrt(N)``."""
    if not prior > 0:
        raise InvalidArgumentError(f"prior must be positive, got {prior}")
    if loss_bound < 0 or rounds < 0:
        raise InvalidArgumentError("loss bound and round count must be nonnegative")
    return lemma5_constant(loss_bound, prior) * math.sqrt(rounds)


def lemma5_constant(loss_bound: float, prior: float) -> float:
    return loss_bound**2 * math.exp(loss_bound) + math.log(1.0 / prior)


def mean_comparison(priors: np.ndarray, losses: np.ndarray, beta: float, a: float) -> tuple[float, float]:
    """Both sides of ``(sum q beta**L)**a >= sum q beta**(a L)``."""
    priors = np.asarray(priors, dtype=float)
    losses = np.asarray(losses, dtype=float)
    lhs = float(np.dot(priors, beta**losses)) ** a
    rhs = float(np.dot(priors, beta ** (a * losses)))
    return lhs, rhs


def _lse(a: np.ndarray) -> tuple[float, np.ndarray, float]:
    """``log(sum(exp(a)))`` plus the shifted exponentials and their sum."""
    top = float(a.max())
    e = np.exp(a - top)
    total = float(e.sum())
    return top + math.log(total), e, total


def _weighted_lse(a: np.ndarray, b: np.ndarray) -> float:
    """``log(sum(b * exp(a)))`` for nonnegative ``b`` with positive total."""
    top = float(a[b > 0].max())
    return top + math.log(float(np.dot(b, np.exp(a - top))))


def _cell_shape(block, grid_size: int, cell: int) -> list[int]:
    shape = [1] * (1 << block.m)
    shape[cell] = grid_size
    return shape


class WeakAggregatingAlgorithm:
    """Stateful WAA learner; one instance plays one sequential game."""

    def __init__(self, pool: ExpertPool, loss: LossFunction, *, randomized: bool | None = None,
                 keep_expert_losses: bool | None = None):
        self.pool = pool
        self.loss = loss
        self.randomized = pool.grid.randomized if randomized is None else randomized
        if self.randomized != pool.grid.randomized:
            raise ContractError("randomized play needs a measure-valued grid, and vice versa")
        if keep_expert_losses is None:
            keep_expert_losses = pool.size <= KEEP_EXPERT_LOSSES_MAX
        self.keep_expert_losses = keep_expert_losses
        self.state = WaaState.initial(pool.log_priors)
        self._lse, e, total = _lse(self.state.log_weights)
        self._p = e / total
        self._support = pool.grid.support
        self._masses = pool.grid.mass_matrix()
        self._lemma5_constants = (loss.bound**2 * math.exp(loss.bound)) - pool.log_priors
        self._mixture_total = 0.0
        self._log_term_total = 0.0
        self._pending: tuple | None = None

    # weights -----------------------------------------------------------

    @property
    def round(self) -> int:
        return self.state.n

    def normalized_weights(self) -> np.ndarray:
        return self._p.copy()

    def _grid_weights(self, cells: Sequence[int], p: np.ndarray) -> np.ndarray:
        g = self.pool.grid.size
        agg = np.zeros(g)
        for block, cell in zip(self.pool.blocks, cells):
            pb = p[block.offset:block.offset + block.count]
            if block.complete:
                cube = pb.reshape((g,) * (1 << block.m))
                axes = tuple(i for i in range(cube.ndim) if i != cell)
                agg += cube.sum(axis=axes) if axes else cube
            else:
                agg += np.bincount(block.tables[cell], weights=pb, minlength=g)
        return agg

    def _expert_losses(self, cells: Sequence[int], vloss: np.ndarray) -> np.ndarray:
        g = self.pool.grid.size
        parts = []
        for block, cell in zip(self.pool.blocks, cells):
            if block.complete:
                col = vloss.reshape(_cell_shape(block, g, cell))
                parts.append(np.broadcast_to(col, (g,) * (1 << block.m)).ravel())
            else:
                parts.append(vloss[block.tables[cell]])
        return np.concatenate(parts)

    def _accumulate(self, cells: Sequence[int], vloss: np.ndarray) -> None:
        g = self.pool.grid.size
        cum = self.state.cumulative_losses
        for block, cell in zip(self.pool.blocks, cells):
            view = cum[block.offset:block.offset + block.count]
            if block.complete:
                view.reshape((g,) * (1 << block.m))[...] += vloss.reshape(_cell_shape(block, g, cell))
            else:
                view += vloss[block.tables[cell]]

    # play --------------------------------------------------------------

    def predict(self, x: Any):
        """Prediction for the current round; a float or a :class:`FiniteMeasure`."""
        if self._pending is not None:
            raise SequencingError(f"round {self.state.n} already has a prediction; call update first")
        if not self.randomized and not self.loss.is_convex:
            raise ContractError(
                f"{self.loss.kind} loss is not convex; use a measure-valued grid (randomized play)"
            )
        cells = self.pool.cells_for(x)
        agg = self._grid_weights(cells, self._p)
        if self.randomized:
            masses = agg @ self._masses
            masses = masses / masses.sum()
            keep = masses > 0
            prediction = FiniteMeasure(tuple(zip(self._support[keep].tolist(), masses[keep].tolist())))
        else:
            prediction = float(np.clip(np.dot(agg, self._support), self._support[0], self._support[-1]))
        self._pending = (self.state.n, x, prediction, cells, agg)
        return prediction

    def value_losses(self, y: float) -> np.ndarray:
        """Loss of every grid value on observation ``y``."""
        point_losses = self.loss.evaluate_many(self._support, y)
        return self._masses @ point_losses if self.randomized else point_losses

    def update(self, x: Any, prediction, y: float) -> RoundRecord:
        if self._pending is None:
            raise SequencingError(f"update before predict on round {self.state.n}")
        n, px, pprediction, cells, agg = self._pending
        if px is not x and px != x:
            raise SequencingError(f"round {n} was predicted for signal {px!r}, not {x!r}")
        if pprediction is not prediction and pprediction != prediction:
            raise SequencingError(f"round {n}: prediction does not match the one issued")
        self._pending = None

        vloss = self.value_losses(y)
        if self.randomized:
            learner = expected_loss(prediction, self.loss, y)
        else:
            learner = self.loss.evaluate(prediction, y)

        st = self.state
        root = math.sqrt(n)
        mixture = float(np.dot(agg, vloss))
        log_term = root * _weighted_lse(-vloss / root, agg)
        self._mixture_total += mixture
        self._log_term_total += log_term
        entropy = self._lse - float(np.dot(self._p, st.log_weights))
        expert_losses = self._expert_losses(cells, vloss) if self.keep_expert_losses else None

        self._accumulate(cells, vloss)
        st.learner_loss += learner
        st.n = n + 1
        cum = st.cumulative_losses
        # last term of the mixture inequality uses beta_N with N = n
        buf = cum * (-1.0 / root)
        buf += self.pool.log_priors
        last = -root * _lse(buf)[0]
        gap = self._mixture_total + self._log_term_total + last - st.learner_loss
        np.multiply(self._lemma5_constants, root, out=buf)
        buf += cum
        slack = float(buf.min()) - st.learner_loss

        st.log_weights = log_weights_from_scratch(self.pool.log_priors, cum, st.n)
        self._lse, e, total = _lse(st.log_weights)
        self._p = e / total

        return RoundRecord(
            n=n, x=x, prediction=prediction, y=y,
            learner_loss=learner, mixture_loss=mixture,
            value_losses=vloss, cells=cells,
            expert_losses=expert_losses,
            lemma9_gap=gap, lemma5_slack=slack,
            best_expert_cumulative=float(cum.min()),
            weight_entropy=entropy,
        )

    def step(self, x: Any, y: float) -> RoundRecord:
        """Predict on ``x`` then observe ``y``; for oblivious Reality."""
        return self.update(x, self.predict(x), y)


def predict_deterministic(engine: WeakAggregatingAlgorithm, x: Any) -> float:
    if engine.randomized:
        raise ContractError("engine plays the randomized game")
    return engine.predict(x)


def predict_randomized(engine: WeakAggregatingAlgorithm, x: Any) -> FiniteMeasure:
    if not engine.randomized:
        raise ContractError("engine plays the deterministic game")
    return engine.predict(x)


def expert_loss_rows(history: Sequence[RoundRecord], pool: ExpertPool):
    """Per-round per-expert loss vectors, rebuilt from the records."""
    for rec in history:
        if rec.expert_losses is not None:
            yield rec.expert_losses
        elif rec.cells is not None and rec.value_losses is not None:
            yield np.concatenate([rec.value_losses[b.tables[c]] for b, c in zip(pool.blocks, rec.cells)])
        else:
            raise InsufficientDataError(f"round {rec.n} retains no per-expert losses")


def lemma9_gap(history: Sequence[RoundRecord], pool: ExpertPool, loss: LossFunction) -> np.ndarray:
    """Right-hand side minus ``L_N`` of the weight-mixture inequality, for every ``N``.

    Recomputed from the recorded per-round losses only, independently of the
    engine's incremental bookkeeping.
    """
    logq = pool.log_priors
    cum = np.zeros(pool.size)
    learner = 0.0
    first = 0.0
    second = 0.0
    out = np.empty(len(history))
    for i, (rec, losses) in enumerate(zip(history, expert_loss_rows(history, pool))):
        n = i + 1
        root = math.sqrt(n)
        logw = logq - cum / root
        logp = logw - _logsumexp(logw)
        first += float(np.dot(np.exp(logp), losses))
        second += root * _logsumexp(logp - losses / root)
        cum += losses
        learner += rec.learner_loss
        third = -root * _logsumexp(logq - cum / root)
        out[i] = first + second + third - learner
    return out


def _logsumexp(a: np.ndarray) -> float:
    top = float(np.max(a))
    return top + math.log(float(np.sum(np.exp(a - top))))
