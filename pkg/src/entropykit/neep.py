"""Neural estimator for entropy production over discrete-state trajectories.

A state pair ``(a, b)`` is scored by ``h(a, b)``: both states are looked up
in a trainable embedding table, concatenated, and passed through a softplus
MLP with a scalar output. The antisymmetric score

    dS(a, b) = h(a, b) - h(b, a)

is trained by gradient ascent on ``J = E[dS - exp(-dS)]`` over observed
transitions; at the optimum the mean of ``dS`` along a trajectory estimates
the entropy production per step.

Because the state space is tiny, every step evaluates ``h`` on all ``n*n``
ordered pairs once and weights each pair by how often it occurs in the batch.
This gives exactly the per-sample mean gradient at a fraction of the cost.
Backpropagation is written out by hand in numpy.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import DivergedError, InsufficientDataError
from .types import LocationAlphabet, Trajectory

__all__ = [
    "TrainConfig",
    "NeepModel",
    "TrainingLog",
    "delta_s",
    "delta_s_matrix",
    "objective",
    "objective_gradient",
    "train",
    "ep_rate",
    "gradient_check",
    "transitions_of",
    "save_model",
    "load_model",
]

CHECKPOINT_FORMAT = "entropykit-neep"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    d: int = 8
    hidden: tuple[int, ...] = (64, 64)
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 200
    seed: int = 0
    optimizer: str = "sgd_momentum"
    momentum: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    holdout_fraction: float = 0.1
    min_transitions: int = 100

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.d < 1 or not self.hidden or min(self.hidden) < 1:
            raise ValueError("embedding width and hidden layer sizes must be positive")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.optimizer not in ("sgd_momentum", "adaptive_moments"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0 < self.holdout_fraction < 1:
            raise ValueError("holdout_fraction must lie in (0, 1)")

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "TrainConfig":
        return cls(**{**data, "hidden": tuple(data.get("hidden", (64, 64)))})


def _softplus(z: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, z)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class NeepModel:
    """Embedding table plus MLP weights; ``params`` lists every trainable array."""

    alphabet: LocationAlphabet
    embedding: np.ndarray  # (n, d)
    weights: list[np.ndarray]  # (2d, h1), (h1, h2), ..., (h_last, 1)
    biases: list[np.ndarray]
    config: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def init(
        cls,
        alphabet: LocationAlphabet,
        config: TrainConfig | None = None,
        *,
        rng: np.random.Generator | None = None,
        zero_final: bool = True,
    ) -> "NeepModel":
        """Embedding ~ U[-0.1, 0.1]; weights ~ N(0, 1/fan_in); zero biases.

        With ``zero_final`` the output layer starts at zero, so dS == 0 and J == -1.
        """
        config = config or TrainConfig()
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        embedding = rng.uniform(-0.1, 0.1, size=(alphabet.n, config.d))
        sizes = [2 * config.d, *config.hidden, 1]
        weights, biases = [], []
        for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            last = k == len(sizes) - 2
            if last and zero_final:
                weights.append(np.zeros((fan_in, fan_out)))
            else:
                weights.append(rng.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
            biases.append(np.zeros(fan_out))
        return cls(alphabet, embedding, weights, biases, config)

    @property
    def n(self) -> int:
        return self.alphabet.n

    @property
    def d(self) -> int:
        return int(self.embedding.shape[1])

    @property
    def params(self) -> list[np.ndarray]:
        out = [self.embedding]
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "NeepModel":
        return NeepModel(
            self.alphabet,
            self.embedding.copy(),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.config,
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def with_flat(self, vector: np.ndarray) -> "NeepModel":
        model = self.copy()
        offset = 0
        for p in model.params:
            p[...] = vector[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        return model

    def freeze(self) -> "NeepModel":
        for p in self.params:
            p.setflags(write=False)
        return self

    def _forward(self, a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, list]:
        x = np.concatenate([self.embedding[a], self.embedding[b]], axis=1)
        cache = [x]
        act = x
        last = len(self.weights) - 1
        for k, (w, bias) in enumerate(zip(self.weights, self.biases)):
            z = act @ w + bias
            if k == last:
                return z[:, 0], cache
            act = _softplus(z)
            cache.append((z, act))
        raise AssertionError("unreachable")

    def h(self, a: Sequence[int] | np.ndarray, b: Sequence[int] | np.ndarray) -> np.ndarray:
        out, _ = self._forward(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))
        return out


def _pair_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    k = np.arange(n * n)
    return k // n, k % n


def delta_s_matrix(model: NeepModel) -> np.ndarray:
    """``D[a, b] = h(a, b) - h(b, a)`` for every ordered pair; exactly antisymmetric."""
    n = model.n
    a, b = _pair_grid(n)
    H = model.h(a, b).reshape(n, n)
    return H - H.T


def delta_s(model: NeepModel, s: int, s_next: int) -> float:
    if not (0 <= s < model.n and 0 <= s_next < model.n):
        raise IndexError(f"state indices must lie in [0, {model.n})")
    h = model.h([s, s_next], [s_next, s])
    return float(h[0] - h[1])


def _pair_counts(pairs: np.ndarray, n: int) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return np.bincount(pairs[:, 0] * n + pairs[:, 1], minlength=n * n).reshape(n, n)


def _objective_from_counts(D: np.ndarray, counts: np.ndarray) -> float:
    total = counts.sum()
    return float(np.sum(counts * (D - np.exp(-D))) / total)


def objective(model: NeepModel, batch: np.ndarray | Sequence[tuple[int, int]]) -> float:
    """Mean of ``dS - exp(-dS)`` over a batch of ``(s_t, s_t+1)`` pairs."""
    counts = _pair_counts(np.asarray(batch), model.n)
    if counts.sum() == 0:
        raise ValueError("batch must be non-empty")
    return _objective_from_counts(delta_s_matrix(model), counts)


def _gradient_from_counts(model: NeepModel, counts: np.ndarray) -> tuple[float, list[np.ndarray]]:
    n, d = model.n, model.d
    a, b = _pair_grid(n)
    out, cache = model._forward(a, b)
    H = out.reshape(n, n)
    D = H - H.T
    total = counts.sum()
    expo = np.exp(-D)
    J = float(np.sum(counts * (D - expo)) / total)

    # dJ/dD_ab = c_ab (1 + e^-D_ab) / total; D_ab depends on H_ab (+) and H_ba (-)
    G = counts * (1.0 + expo) / total
    dout = (G - G.T).reshape(-1, 1)

    grads_w: list[np.ndarray] = [None] * len(model.weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(model.biases)  # type: ignore[list-item]
    last = len(model.weights) - 1
    dz = dout
    for k in range(last, -1, -1):
        prev_act = cache[k][1] if k > 0 else cache[0]
        grads_w[k] = prev_act.T @ dz
        grads_b[k] = dz.sum(axis=0)
        dact = dz @ model.weights[k].T
        if k > 0:
            z_prev = cache[k][0]
            dz = dact * _sigmoid(z_prev)
        else:
            dx = dact
    grad_e = np.zeros_like(model.embedding)
    np.add.at(grad_e, a, dx[:, :d])
    np.add.at(grad_e, b, dx[:, d:])
    grads = [grad_e]
    for gw, gb in zip(grads_w, grads_b):
        grads.extend((gw, gb))
    return J, grads


def objective_gradient(model: NeepModel, batch: np.ndarray | Sequence[tuple[int, int]]) -> tuple[float, list[np.ndarray]]:
    """Objective and its analytic gradient, one array per entry of ``model.params``."""
    counts = _pair_counts(np.asarray(batch), model.n)
    if counts.sum() == 0:
        raise ValueError("batch must be non-empty")
    return _gradient_from_counts(model, counts)


def transitions_of(trajectories: Iterable[Trajectory], n: int | None = None) -> np.ndarray:
    """Stack the consecutive ``(s_t, s_t+1)`` pairs of every trajectory, shape (m, 2)."""
    chunks = []
    for traj in trajectories:
        if n is not None:
            traj.check(n)
        s = traj.states
        if s.size >= 2:
            chunks.append(np.stack([s[:-1], s[1:]], axis=1))
    if not chunks:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate(chunks).astype(np.int64)


@dataclass
class TrainingLog:
    """Per-epoch objective values; epoch 0 is the initial model."""

    train_objective: list[float] = field(default_factory=list)
    heldout_objective: list[float] = field(default_factory=list)
    best_epoch: int = 0
    n_train: int = 0
    n_heldout: int = 0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class _SgdMomentum:
    def __init__(self, params: list[np.ndarray], config: TrainConfig) -> None:
        self.lr = config.learning_rate
        self.mu = config.momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.mu
            v += g
            p += self.lr * v


class _Adam:
    def __init__(self, params: list[np.ndarray], config: TrainConfig) -> None:
        self.lr = config.learning_rate
        self.b1, self.b2, self.eps = config.momentum, config.beta2, config.adam_eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p += self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def train(
    trajectories: Iterable[Trajectory],
    alphabet: LocationAlphabet,
    config: TrainConfig | None = None,
) -> tuple[NeepModel, TrainingLog]:
    """Fit a model by gradient ascent on J and return the best held-out epoch.

    A ``holdout_fraction`` share of transitions (chosen by ``config.seed``) is
    kept aside; the parameters from the epoch with the highest held-out J are
    returned. Initialisation, the split and batch shuffling all draw from one
    generator seeded by ``config.seed``, so runs are bit-reproducible.

    Raises
    ------
    InsufficientDataError
        Fewer than ``config.min_transitions`` transitions are available.
    DivergedError
        The objective or a gradient became non-finite.
    """
    config = config or TrainConfig()
    n = alphabet.n
    pairs = transitions_of(trajectories, n)
    total = len(pairs)
    if total < max(config.min_transitions, 2):
        raise InsufficientDataError(f"{total} transitions available, need at least {config.min_transitions}")

    rng = np.random.default_rng(config.seed)
    model = NeepModel.init(alphabet, config, rng=rng)
    pair_ids = pairs[:, 0] * n + pairs[:, 1]
    order = rng.permutation(total)
    n_hold = min(max(1, int(round(config.holdout_fraction * total))), total - 1)
    held_ids, train_ids = pair_ids[order[:n_hold]], pair_ids[order[n_hold:]]
    held_counts = np.bincount(held_ids, minlength=n * n).reshape(n, n)
    train_counts = np.bincount(train_ids, minlength=n * n).reshape(n, n)

    params = model.params
    opt = _SgdMomentum(params, config) if config.optimizer == "sgd_momentum" else _Adam(params, config)
    log = TrainingLog(n_train=len(train_ids), n_heldout=n_hold)
    D = delta_s_matrix(model)
    log.train_objective.append(_objective_from_counts(D, train_counts))
    log.heldout_objective.append(_objective_from_counts(D, held_counts))
    best = log.heldout_objective[0]
    best_params = model.flat()

    m = len(train_ids)
    bs = config.batch_size
    n_batches = -(-m // bs)
    batch_of = np.arange(m) // bs
    # overflow is caught below as divergence, so numpy's own warnings are noise
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, config.epochs + 1):
            shuffled = train_ids[rng.permutation(m)]
            batch_counts = np.bincount(batch_of * (n * n) + shuffled, minlength=n_batches * n * n)
            batch_counts = batch_counts.reshape(n_batches, n, n)
            for counts in batch_counts:
                J, grads = _gradient_from_counts(model, counts)
                if not math.isfinite(J) or not all(np.all(np.isfinite(g)) for g in grads):
                    raise DivergedError(epoch)
                opt.step(params, grads)
            D = delta_s_matrix(model)
            j_train = _objective_from_counts(D, train_counts)
            j_held = _objective_from_counts(D, held_counts)
            if not (math.isfinite(j_train) and math.isfinite(j_held)):
                raise DivergedError(epoch)
            log.train_objective.append(j_train)
            log.heldout_objective.append(j_held)
            if j_held > best:
                best = j_held
                best_params = model.flat()
                log.best_epoch = epoch
    return model.with_flat(best_params).freeze(), log


def ep_rate(model: NeepModel, trajectory: Trajectory) -> float:
    """Mean of ``dS(s_t, s_t+1)`` along the trajectory, in nats per step.

    Summed pairwise as ``sum_{a<b} (c_ab - c_ba) dS(a, b)`` with a correctly
    rounded sum, so reversing the trajectory negates the result exactly.
    """
    L = len(trajectory)
    if L < 2:
        raise InsufficientDataError("entropy production needs at least two states")
    trajectory.check(model.n)
    n = model.n
    s = trajectory.states
    counts = np.bincount(s[:-1] * n + s[1:], minlength=n * n).reshape(n, n)
    net = counts - counts.T
    D = delta_s_matrix(model)
    iu = np.triu_indices(n, k=1)
    return math.fsum((net[iu] * D[iu]).tolist()) / (L - 1)


def gradient_check(
    model: NeepModel,
    batch: np.ndarray | Sequence[tuple[int, int]],
    epsilon: float = 1e-5,
    *,
    n_samples: int = 100,
    seed: int = 0,
    gradient: Callable[[NeepModel, np.ndarray], tuple[float, list[np.ndarray]]] | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Compares at least ``n_samples`` randomly chosen parameters (all of them if
    the model is smaller). The denominator is ``max(|analytic|, |numeric|, 1e-8)``.
    ``gradient`` overrides the analytic gradient, e.g. to inject faults.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 2)
    if len(batch) == 0:
        raise ValueError("batch must be non-empty")
    gradient = gradient or objective_gradient
    _, grads = gradient(model, batch)
    analytic = np.concatenate([g.ravel() for g in grads])
    theta = model.flat()
    size = theta.size
    rng = np.random.default_rng(seed)
    idx = np.arange(size) if size <= n_samples else np.sort(rng.choice(size, size=max(n_samples, 100), replace=False))
    worst = 0.0
    for i in idx:
        plus, minus = theta.copy(), theta.copy()
        plus[i] += epsilon
        minus[i] -= epsilon
        numeric = (objective(model.with_flat(plus), batch) - objective(model.with_flat(minus), batch)) / (2 * epsilon)
        denom = max(abs(analytic[i]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[i] - numeric) / denom)
    return worst


def model_to_dict(model: NeepModel) -> dict[str, Any]:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "alphabet": list(model.alphabet.symbols),
        "d": model.d,
        "layer_sizes": [int(w.shape[1]) for w in model.weights],
        "config": model.config.to_dict(),
        "seed": model.config.seed,
        "embedding": model.embedding.tolist(),
        "weights": [w.tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
    }


def model_from_dict(data: dict[str, Any]) -> NeepModel:
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ValueError("not an entropykit NEEP checkpoint")
    if data.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {data.get('version')!r}")
    model = NeepModel(
        LocationAlphabet(tuple(data["alphabet"])),
        np.asarray(data["embedding"], dtype=np.float64),
        [np.asarray(w, dtype=np.float64) for w in data["weights"]],
        [np.asarray(b, dtype=np.float64) for b in data["biases"]],
        TrainConfig.from_dict(data["config"]),
    )
    return model.freeze()


def save_model(model: NeepModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> NeepModel:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
