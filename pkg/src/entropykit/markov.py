"""First-order Markov chains over locations.

Fitting from trajectories, stationary distributions, entropy rate, a
reproducible trajectory simulator and the steady-state entropy production
rate used as an analytic reference for the neural estimator.
"""

from __future__ import annotations

import bisect
import json
import math
from dataclasses import dataclass, field
from functools import reduce
from typing import Any, Iterable, Sequence

import numpy as np

from .entropy import xlogx
from .errors import (
    InfiniteEntropyProductionError,
    InsufficientDataError,
    NoStationaryDistributionError,
    ReducibleChainError,
)
from .types import LocationAlphabet, ProbabilityDistribution, Trajectory

__all__ = [
    "TransitionMatrix",
    "StationaryResult",
    "transition_counts",
    "fit_transition_matrix",
    "stationary_distribution",
    "entropy_rate",
    "simulate_trajectory",
    "analytic_ep_rate",
    "communicating_classes",
    "is_irreducible",
]

ROW_TOLERANCE = 1e-12
STATIONARY_TOLERANCE = 1e-12
MAX_POWER_ITERATIONS = 1_000_000


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix ``probs[i, j] = P(next = j | current = i)``.

    ``counts`` holds the observed transitions the matrix was fitted from
    (all zero for hand-specified matrices). Rows without observations are
    set uniform and listed in ``flagged_rows``.
    """

    probs: np.ndarray
    counts: np.ndarray
    alphabet: LocationAlphabet
    alpha: float = 0.0
    flagged_rows: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=np.float64)
        c = np.array(self.counts, dtype=np.int64)
        n = self.alphabet.n
        if p.shape != (n, n) or c.shape != (n, n):
            raise ValueError(f"expected {n}x{n} matrices, got probs {p.shape} counts {c.shape}")
        check_row_stochastic(p)
        if np.any(c < 0):
            raise ValueError("transition counts must be non-negative")
        p.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "probs", p)
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "flagged_rows", tuple(int(i) for i in self.flagged_rows))

    @property
    def n(self) -> int:
        return self.alphabet.n

    @classmethod
    def from_counts(cls, counts: np.ndarray, alphabet: LocationAlphabet, alpha: float = 0.0) -> "TransitionMatrix":
        counts = np.asarray(counts, dtype=np.int64)
        smoothed = counts.astype(np.float64) + alpha
        row_sums = smoothed.sum(axis=1)
        n = alphabet.n
        probs = np.empty((n, n))
        flagged = []
        for i in range(n):
            if row_sums[i] > 0:
                probs[i] = smoothed[i] / row_sums[i]
            else:
                probs[i] = 1.0 / n
                flagged.append(i)
        return cls(probs, counts, alphabet, float(alpha), tuple(flagged))

    @classmethod
    def from_probs(cls, probs: Sequence[Sequence[float]] | np.ndarray, alphabet: LocationAlphabet | None = None) -> "TransitionMatrix":
        p = np.asarray(probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValueError(f"transition matrix must be square, got shape {p.shape}")
        if alphabet is None:
            alphabet = LocationAlphabet(tuple(f"s{i}" for i in range(p.shape[0])))
        return cls(p, np.zeros_like(p, dtype=np.int64), alphabet)

    def to_dict(self) -> dict[str, Any]:
        return {
            "alphabet": list(self.alphabet.symbols),
            "counts": self.counts.tolist(),
            "probs": self.probs.tolist(),
            "alpha": self.alpha,
            "flagged_rows": list(self.flagged_rows),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TransitionMatrix":
        alphabet = LocationAlphabet(tuple(data["alphabet"]))
        n = alphabet.n
        counts = data.get("counts") or [[0] * n for _ in range(n)]
        return cls(
            np.asarray(data["probs"], dtype=np.float64),
            np.asarray(counts, dtype=np.int64),
            alphabet,
            float(data.get("alpha", 0.0)),
            tuple(data.get("flagged_rows", ())),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "TransitionMatrix":
        return cls.from_dict(json.loads(text))


def check_row_stochastic(p: np.ndarray) -> None:
    """Raise ``ValueError`` naming the first row that is not a distribution."""
    for i, row in enumerate(np.asarray(p, dtype=np.float64)):
        if not np.all(np.isfinite(row)) or np.any(row < 0) or np.any(row > 1):
            raise ValueError(f"row {i}: entries must be finite and within [0, 1]")
        if abs(row.sum() - 1.0) > ROW_TOLERANCE:
            raise ValueError(f"row {i}: sums to {row.sum()!r}, not 1")


def _as_probs(T: TransitionMatrix | np.ndarray) -> np.ndarray:
    return T.probs if isinstance(T, TransitionMatrix) else np.asarray(T, dtype=np.float64)


def transition_counts(trajectories: Iterable[Trajectory], n: int) -> np.ndarray:
    """Count adjacent pairs within each trajectory, never across trajectories."""
    counts = np.zeros(n * n, dtype=np.int64)
    for traj in trajectories:
        traj.check(n)
        s = traj.states
        if s.size >= 2:
            counts += np.bincount(s[:-1] * n + s[1:], minlength=n * n)
    return counts.reshape(n, n)


def fit_transition_matrix(
    trajectories: Iterable[Trajectory],
    alphabet: LocationAlphabet,
    alpha: float = 0.0,
) -> TransitionMatrix:
    """Maximum-likelihood transition matrix from observed trajectories.

    Rows never left are set uniform and flagged. ``alpha > 0`` adds that
    pseudo-count to every cell before normalising.
    """
    if alpha < 0:
        raise ValueError("smoothing alpha must be non-negative")
    counts = transition_counts(trajectories, alphabet.n)
    if counts.sum() == 0:
        raise InsufficientDataError("no trajectory contains a transition")
    return TransitionMatrix.from_counts(counts, alphabet, alpha)


def _reachability(p: np.ndarray) -> np.ndarray:
    reach = (p > 0) | np.eye(p.shape[0], dtype=bool)
    for k in range(p.shape[0]):
        reach |= reach[:, [k]] & reach[[k], :]
    return reach


def communicating_classes(T: TransitionMatrix | np.ndarray) -> tuple[list[list[int]], list[bool]]:
    """Return the communicating classes and whether each one is closed."""
    p = _as_probs(T)
    n = p.shape[0]
    reach = _reachability(p)
    mutual = reach & reach.T
    seen: set[int] = set()
    classes: list[list[int]] = []
    for i in range(n):
        if i in seen:
            continue
        members = [int(j) for j in np.flatnonzero(mutual[i])]
        seen.update(members)
        classes.append(members)
    closed = []
    for members in classes:
        outside = np.setdiff1d(np.arange(n), members)
        closed.append(not np.any(p[np.ix_(members, outside)] > 0))
    return classes, closed


def is_irreducible(T: TransitionMatrix | np.ndarray) -> bool:
    classes, _ = communicating_classes(T)
    return len(classes) == 1


def _class_period(p: np.ndarray, members: list[int]) -> int:
    root = members[0]
    level = {root: 0}
    frontier = [root]
    while frontier:
        nxt = []
        for u in frontier:
            for v in members:
                if p[u, v] > 0 and v not in level:
                    level[v] = level[u] + 1
                    nxt.append(v)
        frontier = nxt
    g = 0
    for u in members:
        for v in members:
            if p[u, v] > 0:
                g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g) or 1


@dataclass(frozen=True)
class StationaryResult:
    """Stationary distribution plus how it was obtained.

    ``non_unique`` marks chains with several closed classes (the result then
    depends on the uniform start); ``oscillatory`` marks periodic chains whose
    plain power iterates do not converge, for which the Cesaro average of the
    iterates is returned.
    """

    distribution: ProbabilityDistribution
    iterations: int
    non_unique: bool = False
    oscillatory: bool = False

    @property
    def probs(self) -> np.ndarray:
        return self.distribution.probs

    @property
    def flagged(self) -> bool:
        return self.non_unique or self.oscillatory


def _normalise(x: np.ndarray) -> np.ndarray:
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def stationary_distribution(
    T: TransitionMatrix | np.ndarray,
    *,
    tol: float = STATIONARY_TOLERANCE,
    max_iter: int = MAX_POWER_ITERATIONS,
) -> StationaryResult:
    """Power iteration from the uniform start until the L1 step change < ``tol``.

    For a chain of period ``d > 1`` the iterates cycle, so the iteration runs
    on ``P^d`` (aperiodic on each cyclic class) and the Cesaro average over
    one cycle is returned.

    Raises
    ------
    NoStationaryDistributionError
        If ``max_iter`` iterations pass without convergence.
    """
    p = _as_probs(T)
    n = p.shape[0]
    alphabet = T.alphabet if isinstance(T, TransitionMatrix) else None
    classes, closed = communicating_classes(p)
    closed_classes = [c for c, is_closed in zip(classes, closed) if is_closed]
    period = reduce(lambda a, b: a * b // math.gcd(a, b), (_class_period(p, c) for c in closed_classes), 1)

    step = np.linalg.matrix_power(p, period) if period > 1 else p
    x = np.full(n, 1.0 / n)
    for it in range(1, max_iter + 1):
        x_new = x @ step
        change = float(np.abs(x_new - x).sum())
        x = x_new
        if change < tol:
            break
    else:
        raise NoStationaryDistributionError(f"power iteration did not converge in {max_iter} iterations")

    oscillatory = False
    if period > 1:
        cycle = [x]
        for _ in range(period - 1):
            cycle.append(cycle[-1] @ p)
        averaged = np.mean(cycle, axis=0)
        oscillatory = bool(np.abs(averaged - x).sum() >= tol)
        x = averaged
    dist = ProbabilityDistribution(_normalise(x), 1, alphabet)
    return StationaryResult(dist, it, non_unique=len(closed_classes) > 1, oscillatory=oscillatory)


def entropy_rate(T: TransitionMatrix | np.ndarray, marginal: ProbabilityDistribution | np.ndarray) -> float:
    """``-sum_i marginal_i sum_j P_ij ln P_ij`` in nats per step."""
    p = _as_probs(T)
    m = marginal.probs if isinstance(marginal, ProbabilityDistribution) else np.asarray(marginal, dtype=np.float64)
    if m.shape != (p.shape[0],):
        raise ValueError("marginal and transition matrix disagree on the number of states")
    row_entropy = -xlogx(p).sum(axis=1)
    xi = math.fsum((m * row_entropy).tolist())
    return min(max(0.0, xi), math.log(p.shape[0]))


def _sample(cdf: list[float], u: float, last: int) -> int:
    k = bisect.bisect_right(cdf, u)
    # u can exceed a rounded-down final cumulative sum
    return k if k < len(cdf) else last


def simulate_trajectory(
    T: TransitionMatrix | np.ndarray,
    start: ProbabilityDistribution | np.ndarray,
    steps: int,
    seed: int,
) -> Trajectory:
    """Draw ``steps`` states by inverse-CDF sampling.

    Uniforms come from ``numpy.random.default_rng(seed)`` (PCG64), so the
    output is bit-reproducible for a given ``(T, start, steps, seed)``.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p = _as_probs(T)
    start_p = start.probs if isinstance(start, ProbabilityDistribution) else np.asarray(start, dtype=np.float64)
    cdfs = [np.cumsum(row).tolist() for row in p]
    lasts = [int(np.flatnonzero(row > 0)[-1]) for row in p]
    start_cdf = np.cumsum(start_p).tolist()
    start_last = int(np.flatnonzero(start_p > 0)[-1])

    u = np.random.default_rng(seed).random(steps).tolist()
    states = [0] * steps
    s = _sample(start_cdf, u[0], start_last)
    states[0] = s
    for t in range(1, steps):
        s = _sample(cdfs[s], u[t], lasts[s])
        states[t] = s
    return Trajectory(states)


def analytic_ep_rate(T: TransitionMatrix | np.ndarray) -> float:
    """Steady-state entropy production per step of an irreducible chain.

    ``0.5 * sum_ij (J_ij - J_ji) ln(J_ij / J_ji)`` with probability fluxes
    ``J_ij = pi_i P_ij``; pairs with no flux either way contribute nothing.

    Raises
    ------
    ReducibleChainError
        If the chain is not irreducible.
    InfiniteEntropyProductionError
        If some transition has positive flux while its reverse has none.
    """
    p = _as_probs(T)
    if not is_irreducible(p):
        raise ReducibleChainError("entropy production needs an irreducible chain")
    pi = stationary_distribution(p).probs
    flux = pi[:, None] * p
    n = p.shape[0]
    terms = []
    for i in range(n):
        for j in range(i + 1, n):
            f, r = flux[i, j], flux[j, i]
            if f > 0 and r > 0:
                terms.append((f - r) * math.log(f / r))
            elif f > 0 or r > 0:
                raise InfiniteEntropyProductionError(f"transition {i}<->{j} is observed in one direction only")
    return max(0.0, math.fsum(terms))
