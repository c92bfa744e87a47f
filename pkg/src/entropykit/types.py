"""Core value types: location alphabets, trajectories, distributions, diagnostics."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

DEFAULT_LOCATIONS: tuple[str, ...] = ("bathroom", "bedroom", "lounge", "kitchen", "hallway")

PROBABILITY_TOLERANCE = 1e-12


@dataclass(frozen=True)
class LocationAlphabet:
    """Ordered set of distinct location names.

    ``index`` maps each symbol onto ``0..n-1`` in declaration order.
    """

    symbols: tuple[str, ...]

    def __post_init__(self) -> None:
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(symbols) < 2:
            raise ValueError("an alphabet needs at least two locations")
        if any(not isinstance(s, str) or not s for s in symbols):
            raise ValueError("location symbols must be non-empty strings")
        if len(set(symbols)) != len(symbols):
            raise ValueError(f"duplicate location symbols in {symbols!r}")
        object.__setattr__(self, "_lookup", {s: i for i, s in enumerate(symbols)})

    @classmethod
    def default(cls) -> "LocationAlphabet":
        return cls(DEFAULT_LOCATIONS)

    @property
    def n(self) -> int:
        return len(self.symbols)

    def __len__(self) -> int:
        return len(self.symbols)

    def __contains__(self, symbol: object) -> bool:
        return symbol in self._lookup  # type: ignore[attr-defined]

    def index(self, symbol: str) -> int:
        try:
            return self._lookup[symbol]  # type: ignore[attr-defined]
        except KeyError:
            raise KeyError(f"unknown location {symbol!r}") from None

    def symbol(self, index: int) -> str:
        return self.symbols[index]

    def encode(self, symbols: Iterable[str]) -> "Trajectory":
        return Trajectory([self.index(s) for s in symbols])


class Trajectory:
    """Ordered sequence of alphabet indices ``s_1..s_L`` (read-only)."""

    __slots__ = ("states",)

    def __init__(self, states: Sequence[int] | np.ndarray) -> None:
        arr = np.array(states, dtype=np.int64).reshape(-1)
        if arr.size and arr.min() < 0:
            raise ValueError("trajectory states must be non-negative indices")
        arr.setflags(write=False)
        self.states = arr

    def __len__(self) -> int:
        return int(self.states.size)

    def __iter__(self):
        return iter(self.states.tolist())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Trajectory):
            return NotImplemented
        return bool(np.array_equal(self.states, other.states))

    def __hash__(self) -> int:
        return hash(self.states.tobytes())

    def __repr__(self) -> str:
        head = self.states[:8].tolist()
        tail = ", ..." if len(self) > 8 else ""
        return f"Trajectory({head}{tail}, L={len(self)})"

    def reversed(self) -> "Trajectory":
        return Trajectory(self.states[::-1])

    def check(self, n: int) -> None:
        if len(self) and int(self.states.max()) >= n:
            raise ValueError(f"trajectory contains a state index >= {n}")


@dataclass(frozen=True)
class ProbabilityDistribution:
    """Probability vector over an alphabet, with the sample size it came from."""

    probs: np.ndarray
    support_count: int = 1
    alphabet: LocationAlphabet | None = None

    def __post_init__(self) -> None:
        p = np.array(self.probs, dtype=np.float64).reshape(-1)
        if p.size == 0:
            raise ValueError("empty distribution")
        if np.any(p < 0) or np.any(p > 1):
            raise ValueError("probabilities must lie in [0, 1]")
        if abs(p.sum() - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        if self.support_count < 1:
            raise ValueError("support_count must be >= 1")
        if self.alphabet is not None and self.alphabet.n != p.size:
            raise ValueError("distribution length does not match alphabet")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n: int, alphabet: LocationAlphabet | None = None) -> "ProbabilityDistribution":
        return cls(np.full(n, 1.0 / n), 1, alphabet)

    @classmethod
    def one_hot(cls, n: int, index: int, alphabet: LocationAlphabet | None = None) -> "ProbabilityDistribution":
        p = np.zeros(n)
        p[index] = 1.0
        return cls(p, 1, alphabet)

    @property
    def n(self) -> int:
        return int(self.probs.size)

    def __getitem__(self, key: int | str) -> float:
        if isinstance(key, str):
            if self.alphabet is None:
                raise KeyError("distribution has no alphabet attached")
            key = self.alphabet.index(key)
        return float(self.probs[key])


@dataclass(frozen=True)
class Diagnostic:
    """A non-fatal problem found while processing; serialised as one JSON line."""

    reason: str
    message: str
    context: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({"reason": self.reason, "message": self.message, **self.context}, sort_keys=True, default=str)


def write_diagnostics(diagnostics: Iterable[Diagnostic], stream=None) -> None:
    stream = stream if stream is not None else sys.stderr
    for diag in diagnostics:
        stream.write(diag.to_json() + "\n")
