"""Finite-support probability measures on the prediction space."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linprog

from markovwaa.errors import InvalidArgumentError, UnsupportedError
from markovwaa.losses import LossFunction

MERGE_TOL = 1e-12
MASS_TOL = 1e-12


def _canonical_atoms(pairs: Iterable[tuple[float, float]]) -> tuple[tuple[float, float], ...]:
    items = sorted((float(g), float(w)) for g, w in pairs)
    merged: list[list[float]] = []
    for g, w in items:
        if w < 0:
            raise InvalidArgumentError(f"negative mass {w} at {g}")
        if merged and g - merged[-1][0] <= MERGE_TOL:
            merged[-1][1] += w
        else:
            merged.append([g, w])
    return tuple((g, w) for g, w in merged if w > 0)


@dataclass(frozen=True)
class FiniteMeasure:
    """Probability measure with finitely many atoms, sorted by location."""

    atoms: tuple[tuple[float, float], ...]

    def __post_init__(self):
        atoms = _canonical_atoms(self.atoms)
        if not atoms:
            raise InvalidArgumentError("a probability measure needs at least one atom")
        total = math.fsum(w for _, w in atoms)
        if abs(total - 1.0) > MASS_TOL:
            raise InvalidArgumentError(f"masses sum to {total!r}, not 1")
        object.__setattr__(self, "atoms", atoms)

    @classmethod
    def from_masses(cls, points: Sequence[float], masses: Sequence[float]) -> "FiniteMeasure":
        return cls(tuple(zip(points, masses)))

    @property
    def points(self) -> np.ndarray:
        return np.array([g for g, _ in self.atoms])

    @property
    def masses(self) -> np.ndarray:
        return np.array([w for _, w in self.atoms])

    @property
    def is_point_mass(self) -> bool:
        return len(self.atoms) == 1

    def to_list(self) -> list[list[float]]:
        return [[g, w] for g, w in self.atoms]

    def __str__(self) -> str:
        return "{" + ", ".join(f"{g!r}:{w!r}" for g, w in self.atoms) + "}"


def lift(g: float) -> FiniteMeasure:
    """Point mass at ``g``; embeds deterministic predictions in the randomized game."""
    return FiniteMeasure(((float(g), 1.0),))


def expected_loss(mu: FiniteMeasure, loss: LossFunction, y: float) -> float:
    values = loss.evaluate_many(mu.points, y)
    return float(np.dot(mu.masses, values))


def mix(weights: Sequence[float], measures: Sequence[FiniteMeasure]) -> FiniteMeasure:
    weights = list(weights)
    if len(weights) != len(measures):
        raise InvalidArgumentError(
            f"{len(weights)} weights for {len(measures)} measures"
        )
    if any(w < 0 for w in weights) or abs(math.fsum(weights) - 1.0) > MASS_TOL:
        raise InvalidArgumentError("mixture weights must form a probability vector")
    pairs = [(g, w * m) for w, mu in zip(weights, measures) for g, m in mu.atoms]
    return FiniteMeasure(tuple(pairs))


def sample(mu: FiniteMeasure, rng: np.random.Generator) -> float:
    """Draw one atom by inverse CDF over the canonical atom order.

    ``rng`` is advanced in place, so two generators seeded alike yield
    identical draws.
    """
    cdf = np.cumsum(mu.masses)
    i = int(np.searchsorted(cdf, rng.random(), side="right"))
    return mu.atoms[min(i, len(mu.atoms) - 1)][0]


def sample_from_cdfs(points: np.ndarray, cdfs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Vectorized inverse-CDF draws.

    ``cdfs`` has one row per round over the common ``points``; ``uniforms``
    has shape ``(paths, rounds)``.  Uses the same rule as :func:`sample`.
    """
    idx = (uniforms[:, :, None] >= cdfs[None, :, :]).sum(axis=2)
    return points[np.minimum(idx, len(points) - 1)]


def fm_distance(mu: FiniteMeasure, nu: FiniteMeasure, loss: LossFunction) -> float:
    """Fortet-Mourier distance with bounded-Lipschitz norm taken over the loss pseudo-metric.

    Solved as the linear program over ``(c, s, f)``: maximise
    ``sum (mu_i - nu_i) f_i`` subject to ``|f_i| <= s``,
    ``|f_i - f_j| <= c rho(g_i, g_j)`` and ``c + s <= 1``.
    """
    if loss.observations is None and loss.kind not in ("square", "absolute", "zero_one"):
        raise UnsupportedError("pseudo-metric not computable for this loss")
    support = [g for g, _ in _canonical_atoms([(g, 1.0) for g, _ in mu.atoms + nu.atoms])]
    n = len(support)
    diff = np.zeros(n)
    for sign, measure in ((1.0, mu), (-1.0, nu)):
        for g, w in measure.atoms:
            diff[_locate(support, g)] += sign * w
    if not np.any(np.abs(diff) > 0):
        return 0.0
    rho = loss.pseudo_metric_matrix(support)
    return _fm_lp(diff, rho)


def _locate(support: list[float], g: float) -> int:
    i = int(np.searchsorted(support, g - MERGE_TOL))
    return min(i, len(support) - 1)


def _fm_lp(diff: np.ndarray, rho: np.ndarray) -> float:
    n = len(diff)
    nvar = n + 2  # c, s, f_1..f_n
    rows = []
    rhs = []
    for i in range(n):
        for sign in (1.0, -1.0):
            r = np.zeros(nvar)
            r[1] = -1.0
            r[2 + i] = sign
            rows.append(r)
            rhs.append(0.0)
    for i in range(n):
        for j in range(i + 1, n):
            for sign in (1.0, -1.0):
                r = np.zeros(nvar)
                r[0] = -rho[i, j]
                r[2 + i] = sign
                r[2 + j] = -sign
                rows.append(r)
                rhs.append(0.0)
    r = np.zeros(nvar)
    r[0] = r[1] = 1.0
    rows.append(r)
    rhs.append(1.0)
    objective = np.concatenate([[0.0, 0.0], -diff])
    bounds = [(0, None), (0, None)] + [(None, None)] * n
    res = linprog(objective, A_ub=np.array(rows), b_ub=np.array(rhs), bounds=bounds,
                  method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"Fortet-Mourier LP failed: {res.message}")
    return max(0.0, -float(res.fun))

