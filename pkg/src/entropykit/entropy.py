"""Location-occupancy distributions and their Shannon entropy (in nats)."""

from __future__ import annotations

import math

import numpy as np

from .errors import InsufficientDataError
from .types import LocationAlphabet, ProbabilityDistribution, Trajectory

__all__ = ["estimate_distribution", "shannon_entropy", "xlogx"]


def xlogx(p: np.ndarray) -> np.ndarray:
    """Elementwise ``p * ln p`` with ``0 * ln 0 = 0``."""
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def estimate_distribution(trajectory: Trajectory, alphabet: LocationAlphabet) -> ProbabilityDistribution:
    """Plug-in estimate ``count(x_i) / L`` of the occupancy distribution.

    Raises
    ------
    InsufficientDataError
        If the trajectory is empty.
    """
    if len(trajectory) == 0:
        raise InsufficientDataError("cannot estimate a distribution from an empty trajectory")
    trajectory.check(alphabet.n)
    counts = np.bincount(trajectory.states, minlength=alphabet.n).astype(np.float64)
    return ProbabilityDistribution(counts / len(trajectory), len(trajectory), alphabet)


def shannon_entropy(dist: ProbabilityDistribution | np.ndarray) -> float:
    probs = dist.probs if isinstance(dist, ProbabilityDistribution) else np.asarray(dist, dtype=np.float64)
    # fsum is correctly rounded, hence exactly invariant to label order and zero entries
    h = -math.fsum(xlogx(probs).tolist())
    return min(max(0.0, h), math.log(probs.size))
