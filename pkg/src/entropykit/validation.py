"""Built-in acceptance battery and synthetic fixture corpora.

Each check compares library output against an independent reference: a
closed form, a hand-evaluated constant or a brute-force recount. Checks
return a :class:`CheckResult` rather than raising, so the CLI can report
every outcome.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from typing import Callable

import numpy as np

from . import entropy, events, markov, neep, pipeline
from .types import LocationAlphabet, ProbabilityDistribution, Trajectory

RING_P = np.array([[0.0, 0.7, 0.3], [0.3, 0.0, 0.7], [0.7, 0.3, 0.0]])
RING_EP = 0.4 * math.log(7 / 3)
TWO_STATE_P = np.array([[0.9, 0.1], [0.2, 0.8]])
# (2/3) H(0.9, 0.1) + (1/3) H(0.2, 0.8), evaluated by hand
TWO_STATE_XI = 0.383523
SHANNON_QUARTER_HALF = 1.0397208


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail} ({self.seconds:.1f}s)"


def synthetic_corpus(
    weeks: int = 20,
    households: tuple[str, ...] = ("h1",),
    *,
    seed: int = 0,
    start: date = date(2021, 1, 4),
    events_per_period: tuple[int, int] = (20, 40),
) -> str:
    """CSV event stream with daytime and night activity on every day.

    Each (household, day, period) draws its event count and mixes a biased
    circulation through the rooms with a random per-day transition matrix, so
    all six weekly measures, entropy production included, vary between weeks.
    """
    alphabet = LocationAlphabet.default()
    n = alphabet.n
    rng = np.random.default_rng(seed)
    circulation = 0.7 * np.roll(np.eye(n), 1, axis=1) + 0.3 * np.roll(np.eye(n), -1, axis=1)
    lines = ["household_id,timestamp,location"]
    for household in households:
        for day_offset in range(weeks * 7):
            day = start + timedelta(days=day_offset)
            for lo, hi in ((6 * 3600, 18 * 3600), (18 * 3600, 24 * 3600), (0, 6 * 3600)):
                count = int(rng.integers(*events_per_period))
                if hi - lo < 12 * 3600:
                    count //= 2
                weight = rng.uniform(0.3, 0.9)
                P = weight * circulation + (1 - weight) * rng.dirichlet(np.full(n, 0.8), size=n)
                traj = markov.simulate_trajectory(P, np.full(n, 1.0 / n), max(count, 1), int(rng.integers(2**31)))
                stamps = np.sort(rng.choice(np.arange(lo, hi), size=len(traj), replace=False))
                for second, state in zip(stamps.tolist(), traj):
                    ts = datetime.combine(day, time()) + timedelta(seconds=second)
                    lines.append(f"{household},{ts.isoformat()},{alphabet.symbol(state)}")
    return "\n".join(lines) + "\n"


def _timed(name: str, fn: Callable[[], tuple[bool, str]]) -> CheckResult:
    t0 = _time.perf_counter()
    try:
        passed, detail = fn()
    except Exception as exc:  # a crashing check is a failing check
        passed, detail = False, f"{type(exc).__name__}: {exc}"
    return CheckResult(name, passed, detail, _time.perf_counter() - t0)


def check_shannon() -> CheckResult:
    def run():
        uniform = entropy.shannon_entropy(ProbabilityDistribution.uniform(5))
        onehot = entropy.shannon_entropy(ProbabilityDistribution.one_hot(5, 2))
        mixed = entropy.shannon_entropy(ProbabilityDistribution([0.25, 0.25, 0.5]))
        ok = abs(uniform - math.log(5)) <= 1e-12 and abs(onehot) <= 1e-12 and abs(mixed - SHANNON_QUARTER_HALF) <= 1e-6
        return ok, f"H(uniform5)={uniform:.12f} H(onehot)={onehot:g} H(.25,.25,.5)={mixed:.7f}"

    return _timed("shannon_exactness", run)


def check_entropy_rate(steps: int = 100_000, seed: int = 7) -> CheckResult:
    def run():
        T = markov.TransitionMatrix.from_probs(TWO_STATE_P)
        pi = markov.stationary_distribution(T)
        xi = markov.entropy_rate(T, pi.distribution)
        traj = markov.simulate_trajectory(T, pi.distribution, steps, seed)
        fitted = markov.fit_transition_matrix([traj], T.alphabet)
        xi_hat = markov.entropy_rate(fitted, entropy.estimate_distribution(traj, T.alphabet))
        ok = abs(xi - TWO_STATE_XI) <= 1e-6 and abs(xi_hat - xi) <= 0.01
        return ok, f"xi={xi:.6f} (expected {TWO_STATE_XI}); estimated {xi_hat:.6f} from {steps} steps"

    return _timed("entropy_rate_oracle", run)


def _neep_estimate(P: np.ndarray, steps: int, config: neep.TrainConfig, seed: int) -> tuple[float, float]:
    T = markov.TransitionMatrix.from_probs(P)
    start = ProbabilityDistribution.uniform(T.n)
    train_traj = markov.simulate_trajectory(T, start, steps + 1, seed)
    eval_traj = markov.simulate_trajectory(T, start, steps, seed + 1)
    model, _ = neep.train([train_traj], T.alphabet, config)
    return neep.ep_rate(model, eval_traj), markov.analytic_ep_rate(T)


def check_ep_nonequilibrium(steps: int = 100_000, config: neep.TrainConfig | None = None) -> CheckResult:
    def run():
        est, sigma = _neep_estimate(RING_P, steps, config or neep.TrainConfig(), seed=11)
        rel = abs(est - RING_EP) / RING_EP
        ok = rel < 0.10 and abs(sigma - RING_EP) <= 1e-12
        return ok, f"NEEP {est:.6f} vs analytic {RING_EP:.6f} nats/step (rel err {rel:.3%})"

    return _timed("ep_oracle_nonequilibrium", run)


def check_ep_equilibrium(steps: int = 100_000, config: neep.TrainConfig | None = None) -> CheckResult:
    def run():
        est, sigma = _neep_estimate(np.full((2, 2), 0.5), steps, config or neep.TrainConfig(), seed=13)
        return abs(est) < 0.05 and sigma == 0.0, f"NEEP {est:.6f} nats/step, analytic {sigma}"

    return _timed("ep_oracle_equilibrium", run)


def check_antisymmetry(draws: int = 10_000, seed: int = 3) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        alphabet = LocationAlphabet.default()
        n = alphabet.n
        worst = 0.0
        models = 100
        per_model = draws // models
        for _ in range(models):
            model = neep.NeepModel.init(alphabet, neep.TrainConfig(seed=int(rng.integers(2**31))), zero_final=False)
            D = neep.delta_s_matrix(model)
            pairs = rng.integers(0, n, size=(per_model, 2))
            for a, b in pairs.tolist():
                worst = max(worst, abs(D[a, b] + D[b, a]))
            a, b = pairs[0].tolist()
            worst = max(worst, abs(neep.delta_s(model, a, b) + neep.delta_s(model, b, a)))
        model = neep.NeepModel.init(alphabet, neep.TrainConfig(seed=5), zero_final=False)
        traj = Trajectory(rng.integers(0, n, size=1000))
        fwd, rev = neep.ep_rate(model, traj), neep.ep_rate(model, traj.reversed())
        ok = worst == 0.0 and rev == -fwd
        return ok, f"max |dS(a,b)+dS(b,a)| = {worst:g} over {draws} draws; ep fwd {fwd:.6g} rev {rev:.6g}"

    return _timed("antisymmetry", run)


def check_gradient(seed: int = 4) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        alphabet = LocationAlphabet.default()
        model = neep.NeepModel.init(alphabet, neep.TrainConfig(), rng=rng, zero_final=False)
        batch = rng.integers(0, alphabet.n, size=(256, 2))
        err = neep.gradient_check(model, batch, 1e-5, n_samples=200, seed=seed)
        return err < 1e-4, f"max relative error {err:.3g} on 200 parameters"

    return _timed("gradient_check", run)


def check_pipeline_statistics(seed: int = 5, samples: int = 100_000) -> CheckResult:
    def run():
        rng = np.random.default_rng(seed)
        rows = []
        for i in range(30):
            row = pipeline.FeatureRow("h1", date(2021, 1, 4) + timedelta(weeks=i))
            for kind in pipeline.MeasureKind:
                row.raw[kind] = float(rng.gamma(2.0, 0.5))
            rows.append(row)
        normed, _ = pipeline.normalize(rows)
        worst_mean = worst_std = 0.0
        for kind in pipeline.MeasureKind:
            z = np.array([r.normalized[kind] for r in normed])
            worst_mean = max(worst_mean, abs(z.mean()))
            worst_std = max(worst_std, abs(z.std() - 1.0))
        bands = pipeline.assign_bands(normed)

        a, b = 3.7, -12.0
        scaled = [pipeline.FeatureRow(r.household_id, r.week_start, raw={k: a * v + b for k, v in r.raw.items()}) for r in rows]
        scaled_bands = pipeline.assign_bands(pipeline.normalize(scaled)[0])
        affine_ok = all(x.band == y.band for x, y in zip(bands, scaled_bands))

        z = rng.standard_normal(samples)
        counts = {band: 0 for band in pipeline.Band}
        for value in z.tolist():
            counts[pipeline.discretize(value)] += 1
        freqs = {band.value: c / samples for band, c in counts.items()}
        freq_ok = all(abs(f - 0.25) <= 0.01 for f in freqs.values())
        ok = worst_mean <= 1e-9 and worst_std <= 1e-9 and affine_ok and freq_ok
        freq_text = " ".join(f"{k}={v:.4f}" for k, v in freqs.items())
        return ok, f"|mean z|<={worst_mean:.1e} |std-1|<={worst_std:.1e} affine-invariant={affine_ok} {freq_text}"

    return _timed("pipeline_statistics", run)


def check_windowing(seed: int = 6) -> CheckResult:
    def run():
        corpus = synthetic_corpus(weeks=3, households=("h1", "h2"), seed=seed)
        evts, diags = events.parse_events(corpus.encode(), "csv")
        windows = events.slice_windows(evts)
        total = sum(len(t) for t in windows.values())
        boundary = {
            time(5, 59, 59): events.DayPeriod.NIGHT,
            time(6, 0, 0): events.DayPeriod.DAYTIME,
            time(17, 59, 59): events.DayPeriod.DAYTIME,
            time(18, 0, 0): events.DayPeriod.NIGHT,
            time(0, 0, 0): events.DayPeriod.NIGHT,
        }
        lines = ["household_id,timestamp,location"] + [f"b,2021-03-07T{t.isoformat()},kitchen" for t in boundary]
        bevents, _ = events.parse_events("\n".join(lines), "csv")
        bwindows = events.slice_windows(bevents)
        assigned = {}
        for key, traj in bwindows.items():
            assert key.week_start == date(2021, 3, 1)
            assigned[key.period] = assigned.get(key.period, 0) + len(traj)
        boundary_ok = all(events.day_period(t) is p for t, p in boundary.items()) and assigned == {
            events.DayPeriod.NIGHT: 3,
            events.DayPeriod.DAYTIME: 2,
        }
        ok = total == len(evts) and not diags and boundary_ok
        return ok, f"{total} windowed of {len(evts)} accepted events; boundary table ok={boundary_ok}"

    return _timed("windowing_partition", run)


def _features_bytes(corpus: str, seed: int, epochs: int) -> tuple[bytes, int]:
    from .cli import RunConfig, compute_feature_table

    config = RunConfig(seed=seed, epochs=epochs)
    table, _ = compute_feature_table(config, [("corpus", corpus.encode())])
    _, rows = pipeline.parse_feature_table(table, "csv")
    return table, len(rows)


def check_determinism(seed: int = 8) -> CheckResult:
    def run():
        corpus = synthetic_corpus(weeks=18, seed=seed)
        epochs = neep.TrainConfig().epochs
        first, rows = _features_bytes(corpus, seed, epochs)
        second, _ = _features_bytes(corpus, seed, epochs)
        return first == second and rows > 0, f"{len(first)} bytes, {rows} rows, identical={first == second}"

    return _timed("end_to_end_determinism", run)


def check_baseline_protocol(seed: int = 9) -> CheckResult:
    def run():
        corpus = synthetic_corpus(weeks=20, seed=seed)
        _, rows = _features_bytes(corpus, seed, neep.TrainConfig().epochs)
        return rows == 4, f"20 weeks of data -> {rows} feature rows (expected 4)"

    return _timed("baseline_protocol", run)


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "shannon_exactness": check_shannon,
    "entropy_rate_oracle": check_entropy_rate,
    "ep_oracle_nonequilibrium": check_ep_nonequilibrium,
    "ep_oracle_equilibrium": check_ep_equilibrium,
    "antisymmetry": check_antisymmetry,
    "gradient_check": check_gradient,
    "pipeline_statistics": check_pipeline_statistics,
    "windowing_partition": check_windowing,
    "end_to_end_determinism": check_determinism,
    "baseline_protocol": check_baseline_protocol,
}


def run_battery(names: list[str] | None = None) -> list[CheckResult]:
    selected = names or list(CHECKS)
    unknown = [n for n in selected if n not in CHECKS]
    if unknown:
        raise KeyError(f"unknown checks: {unknown}")
    return [CHECKS[name]() for name in selected]
