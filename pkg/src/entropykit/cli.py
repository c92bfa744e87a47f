"""Command-line interface: ``entropykit {features,simulate,validate,fit,inspect,train}``.

Every option can also be set through an environment variable named after
the flag with an ``ENTROPYKIT_`` prefix, e.g. ``ENTROPYKIT_TZ=Europe/London``
or ``ENTROPYKIT_BASELINE_WEEKS=12``. Explicit flags win over the environment.

Exit codes: 0 success, 1 fatal error, 2 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Sequence

from . import __version__, events, markov, neep, pipeline, validation
from .errors import EntropyKitError
from .types import Diagnostic, LocationAlphabet, ProbabilityDistribution, write_diagnostics

ENV_PREFIX = "ENTROPYKIT_"


class CommandError(RuntimeError):
    """Fatal error reported to the user with exit code 1."""


@dataclass(frozen=True)
class RunConfig:
    inputs: tuple[str, ...] = ()
    format: str = "csv"
    tz: str = "UTC"
    alphabet: tuple[str, ...] = LocationAlphabet.default().symbols
    baseline_weeks: int = pipeline.DEFAULT_BASELINE_WEEKS
    seed: int = 0
    epochs: int = neep.TrainConfig().epochs
    embedding_dim: int = neep.TrainConfig().d
    hidden: tuple[int, ...] = neep.TrainConfig().hidden
    learning_rate: float = neep.TrainConfig().learning_rate
    batch_size: int = neep.TrainConfig().batch_size
    # SGD at lr 1e-3 barely moves in the few thousand steps a 16-week baseline affords
    optimizer: str = "adaptive_moments"
    output: str | None = None
    output_format: str = "csv"
    labels: str | None = None
    collapse_repeats: bool = False
    smoothing_alpha: float = 0.0
    quartile_mode: bool = False
    refit_t: bool = False
    retrain_neep_per_window: bool = False
    marginal: str = "empirical"
    max_reject_fraction: float = events.DEFAULT_MAX_REJECT_FRACTION

    def train_config(self) -> neep.TrainConfig:
        return neep.TrainConfig(
            d=self.embedding_dim,
            hidden=self.hidden,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            seed=self.seed,
            optimizer=self.optimizer,
        )

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        for key in ("inputs", "alphabet", "hidden"):
            out[key] = list(out[key])
        return out


def metadata(command: str, config: dict[str, Any], seed: int | None) -> dict[str, Any]:
    digest = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]
    return {"tool": "entropykit", "version": __version__, "command": command, "config_hash": digest, "seed": seed, "config": config}


# --------------------------------------------------------------------------
# command bodies (importable without argparse)


def compute_feature_table(
    config: RunConfig, sources: Sequence[tuple[str, bytes]]
) -> tuple[bytes, list[Diagnostic]]:
    """Run parse -> slice -> baseline -> weekly measures -> z-score -> bands -> emit."""
    alphabet = LocationAlphabet(config.alphabet)
    all_events: list[events.ActivityEvent] = []
    diagnostics: list[Diagnostic] = []
    for name, data in sources:
        try:
            evts, diags = events.parse_events(
                data, config.format, alphabet, tz=config.tz, max_reject_fraction=config.max_reject_fraction
            )
        except EntropyKitError as exc:
            raise CommandError(f"{name}: {exc}") from exc
        all_events.extend(evts)
        diagnostics.extend(Diagnostic(d.reason, d.message, {**d.context, "source": name}) for d in diags)
    if not all_events:
        raise CommandError("no events")
    all_events.sort(key=lambda e: (e.household_id, e.timestamp))

    windows = events.slice_windows(all_events, alphabet, collapse_repeats=config.collapse_repeats)
    rows, diags = pipeline.run_pipeline(
        windows,
        alphabet,
        baseline_weeks=config.baseline_weeks,
        train_config=config.train_config(),
        alpha=config.smoothing_alpha,
        marginal=config.marginal,
        refit=config.refit_t,
        retrain_per_window=config.retrain_neep_per_window,
        quartile_mode=config.quartile_mode,
    )
    diagnostics.extend(diags)
    labels = None
    if config.labels:
        labels = pipeline.parse_labels(Path(config.labels).read_bytes())
    table, diags = pipeline.emit_feature_table(
        rows,
        config.output_format,
        labels,
        metadata=metadata("features", {k: v for k, v in config.to_dict().items() if k != "output"}, config.seed),
    )
    diagnostics.extend(diags)
    return table, diagnostics


def load_transition_spec(data: dict[str, Any]) -> tuple[markov.TransitionMatrix, ProbabilityDistribution | None]:
    probs = data.get("probs")
    if probs is None:
        raise CommandError("transition spec needs a 'probs' matrix")
    n = len(probs)
    symbols = data.get("alphabet") or [f"s{i}" for i in range(n)]
    try:
        T = markov.TransitionMatrix.from_probs(probs, LocationAlphabet(tuple(symbols)))
    except ValueError as exc:
        raise CommandError(f"invalid transition spec: {exc}") from exc
    start = None
    if data.get("start") is not None:
        try:
            start = ProbabilityDistribution(data["start"], 1, T.alphabet)
        except ValueError as exc:
            raise CommandError(f"invalid start distribution: {exc}") from exc
    return T, start


def oracle_report(T: markov.TransitionMatrix) -> dict[str, Any]:
    """Analytic entropy rate (stationary marginal) and entropy production of ``T``."""
    report: dict[str, Any] = {}
    try:
        stat = markov.stationary_distribution(T)
        report["stationary"] = stat.probs.tolist()
        report["stationary_flags"] = {"non_unique": stat.non_unique, "oscillatory": stat.oscillatory}
        report["entropy_rate"] = markov.entropy_rate(T, stat.distribution)
    except EntropyKitError as exc:
        report["stationary"] = None
        report["entropy_rate"] = None
        report["stationary_error"] = str(exc)
    try:
        report["ep_rate"] = markov.analytic_ep_rate(T)
    except EntropyKitError as exc:
        report["ep_rate"] = None
        report["ep_rate_error"] = str(exc)
    return report


def simulate_events(
    T: markov.TransitionMatrix,
    start: ProbabilityDistribution | None,
    steps: int,
    seed: int,
    *,
    household: str = "sim",
    start_time: datetime = datetime(2021, 1, 4),
    spacing: float = 60.0,
) -> str:
    """Events CSV for a simulated trajectory, one event every ``spacing`` seconds."""
    start = start or ProbabilityDistribution.uniform(T.n, T.alphabet)
    traj = markov.simulate_trajectory(T, start, steps, seed)
    lines = [",".join(events.CSV_COLUMNS)]
    for k, state in enumerate(traj):
        stamp = start_time + timedelta(seconds=k * spacing)
        lines.append(f"{household},{stamp.isoformat()},{T.alphabet.symbol(state)}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# argparse wiring


def _env(name: str, default: Any, cast=str) -> Any:
    raw = os.environ.get(ENV_PREFIX + name.upper().replace("-", "_"))
    if raw is None:
        return default
    if cast is bool:
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return cast(raw)


def _csv_list(text: str) -> tuple[str, ...]:
    return tuple(s.strip() for s in text.split(",") if s.strip())


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(s) for s in _csv_list(text))


def _add_input_options(p: argparse.ArgumentParser) -> None:
    defaults = RunConfig()
    p.add_argument("--input", action="append", default=None, help="event file (repeatable; '-' for stdin)")
    p.add_argument("--format", choices=("csv", "jsonl"), default=_env("format", defaults.format))
    p.add_argument("--tz", default=_env("tz", defaults.tz), help="zone for timestamps without offset")
    p.add_argument(
        "--alphabet", type=_csv_list, default=_env("alphabet", defaults.alphabet, _csv_list), help="comma-separated locations"
    )
    p.add_argument("--collapse-repeats", action="store_true", default=_env("collapse_repeats", False, bool))
    p.add_argument(
        "--max-reject-fraction", type=float, default=_env("max_reject_fraction", defaults.max_reject_fraction, float)
    )


def _add_train_options(p: argparse.ArgumentParser, optimizer: str) -> None:
    defaults = RunConfig()
    p.add_argument("--seed", type=int, default=_env("seed", defaults.seed, int))
    p.add_argument("--epochs", type=int, default=_env("epochs", defaults.epochs, int))
    p.add_argument("--embedding-dim", type=int, default=_env("embedding_dim", defaults.embedding_dim, int))
    p.add_argument("--hidden", type=_int_list, default=_env("hidden", defaults.hidden, _int_list))
    p.add_argument("--learning-rate", type=float, default=_env("learning_rate", defaults.learning_rate, float))
    p.add_argument("--batch-size", type=int, default=_env("batch_size", defaults.batch_size, int))
    p.add_argument(
        "--optimizer", choices=("sgd_momentum", "adaptive_moments"), default=_env("optimizer", optimizer)
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="entropykit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"entropykit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="compute the weekly entropy feature table")
    _add_input_options(p)
    _add_train_options(p, RunConfig().optimizer)
    p.add_argument("--out", default=_env("out", None), help="output path (default stdout)")
    p.add_argument("--output-format", choices=("csv", "jsonl"), default=_env("output_format", "csv"))
    p.add_argument("--labels", default=_env("labels", None), help="CSV of household_id,date,event")
    p.add_argument("--baseline-weeks", type=int, default=_env("baseline_weeks", pipeline.DEFAULT_BASELINE_WEEKS, int))
    p.add_argument("--smoothing-alpha", type=float, default=_env("smoothing_alpha", 0.0, float))
    p.add_argument("--quartile-mode", action="store_true", default=_env("quartile_mode", False, bool))
    p.add_argument("--refit-t", action="store_true", default=_env("refit_t", False, bool))
    p.add_argument("--retrain-neep-per-window", action="store_true", default=_env("retrain_neep_per_window", False, bool))
    p.add_argument("--marginal", choices=("empirical", "stationary"), default=_env("marginal", "empirical"))

    p = sub.add_parser("simulate", help="simulate a Markov chain into an events file plus oracle report")
    p.add_argument("--spec", required=True, help="JSON with 'probs', optional 'alphabet' and 'start'")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, default=_env("seed", 0, int))
    p.add_argument("--out", required=True, help="events CSV path")
    p.add_argument("--report", help="oracle report path (default <out>.oracle.json)")
    p.add_argument("--spacing", type=float, default=_env("spacing", 60.0, float), help="seconds between events")
    p.add_argument("--start-time", default="2021-01-04T00:00:00")
    p.add_argument("--household", default="sim")

    p = sub.add_parser("validate", help="run the built-in acceptance battery")
    p.add_argument("--check", action="append", choices=sorted(validation.CHECKS), help="run only these checks")
    p.add_argument("--out", default=None, help="write a JSON report here")

    p = sub.add_parser("fit", help="fit a transition matrix from events")
    _add_input_options(p)
    p.add_argument("--household", required=True)
    p.add_argument("--period", choices=("day", "night", "all"), default="all")
    p.add_argument("--smoothing-alpha", type=float, default=_env("smoothing_alpha", 0.0, float))
    p.add_argument("--out", default=None)

    p = sub.add_parser("inspect", help="summarise a transition-matrix or NEEP checkpoint file")
    p.add_argument("path")

    p = sub.add_parser("train", help="train a NEEP model on one household's events")
    _add_input_options(p)
    _add_train_options(p, neep.TrainConfig().optimizer)
    p.add_argument("--household", required=True)
    p.add_argument("--period", choices=("day", "night", "all"), default="all")
    p.add_argument("--out", required=True, help="checkpoint path")
    return parser


def _read_sources(paths: Sequence[str] | None) -> list[tuple[str, bytes]]:
    if not paths:
        env_input = os.environ.get(ENV_PREFIX + "INPUT")
        paths = env_input.split(os.pathsep) if env_input else None
    if not paths:
        raise CommandError("no --input given")
    sources = []
    for path in paths:
        try:
            data = sys.stdin.buffer.read() if path == "-" else Path(path).read_bytes()
        except OSError as exc:
            raise CommandError(f"cannot read {path}: {exc}") from exc
        sources.append((path, data))
    return sources


def _write(path: str | None, data: bytes) -> None:
    if path is None or path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(path).write_bytes(data)


def _household_trajectories(args: argparse.Namespace) -> tuple[LocationAlphabet, list]:
    alphabet = LocationAlphabet(args.alphabet)
    evts: list[events.ActivityEvent] = []
    for name, data in _read_sources(args.input):
        parsed, diags = events.parse_events(
            data, args.format, alphabet, tz=args.tz, max_reject_fraction=args.max_reject_fraction
        )
        write_diagnostics(diags)
        evts.extend(e for e in parsed if e.household_id == args.household)
    if not evts:
        raise CommandError(f"no events for household {args.household!r}")
    evts.sort(key=lambda e: e.timestamp)
    windows = events.slice_windows(evts, alphabet, collapse_repeats=args.collapse_repeats)
    trajs = [t for k, t in windows.items() if args.period == "all" or k.period.value == args.period]
    return alphabet, trajs


def _cmd_features(args: argparse.Namespace) -> int:
    sources = _read_sources(args.input)
    config = RunConfig(
        inputs=tuple(name for name, _ in sources),
        format=args.format,
        tz=args.tz,
        alphabet=tuple(args.alphabet),
        baseline_weeks=args.baseline_weeks,
        seed=args.seed,
        epochs=args.epochs,
        embedding_dim=args.embedding_dim,
        hidden=tuple(args.hidden),
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        optimizer=args.optimizer,
        output=args.out,
        output_format=args.output_format,
        labels=args.labels,
        collapse_repeats=args.collapse_repeats,
        smoothing_alpha=args.smoothing_alpha,
        quartile_mode=args.quartile_mode,
        refit_t=args.refit_t,
        retrain_neep_per_window=args.retrain_neep_per_window,
        marginal=args.marginal,
        max_reject_fraction=args.max_reject_fraction,
    )
    table, diagnostics = compute_feature_table(config, sources)
    write_diagnostics(diagnostics)
    _write(args.out, table)
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    try:
        spec = json.loads(Path(args.spec).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read transition spec {args.spec}: {exc}") from exc
    if args.steps < 1:
        raise CommandError("--steps must be >= 1")
    T, start = load_transition_spec(spec)
    config = {
        "spec": spec,
        "steps": args.steps,
        "seed": args.seed,
        "spacing": args.spacing,
        "start_time": args.start_time,
        "household": args.household,
    }
    meta = metadata("simulate", config, args.seed)
    body = simulate_events(
        T,
        start,
        args.steps,
        args.seed,
        household=args.household,
        start_time=datetime.fromisoformat(args.start_time),
        spacing=args.spacing,
    )
    Path(args.out).write_text("# " + json.dumps(meta, sort_keys=True) + "\n" + body)
    report = {"metadata": meta, **oracle_report(T)}
    report_path = args.report or args.out + ".oracle.json"
    Path(report_path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    results = []
    for name in args.check or list(validation.CHECKS):
        result = validation.CHECKS[name]()
        print(result.line(), flush=True)
        results.append(result)
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if args.out:
        report = {
            "metadata": metadata("validate", {"checks": [r.name for r in results]}, None),
            "results": [asdict(r) for r in results],
        }
        Path(args.out).write_text(json.dumps(report, indent=2) + "\n")
    return 0 if not failed else 1


def _cmd_fit(args: argparse.Namespace) -> int:
    alphabet, trajs = _household_trajectories(args)
    T = markov.fit_transition_matrix(trajs, alphabet, args.smoothing_alpha)
    config = {"household": args.household, "period": args.period, "smoothing_alpha": args.smoothing_alpha, "tz": args.tz}
    doc = {"metadata": metadata("fit", config, None), **T.to_dict()}
    _write(args.out, (json.dumps(doc, indent=2) + "\n").encode())
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    alphabet, trajs = _household_trajectories(args)
    cfg = neep.TrainConfig(
        d=args.embedding_dim,
        hidden=tuple(args.hidden),
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        optimizer=args.optimizer,
    )
    model, log = neep.train(trajs, alphabet, cfg)
    doc = neep.model_to_dict(model)
    doc["metadata"] = metadata("train", {"household": args.household, "period": args.period, **cfg.to_dict()}, cfg.seed)
    doc["training_log"] = log.to_dict()
    Path(args.out).write_text(json.dumps(doc) + "\n")
    return 0


def _cmd_inspect(args: argparse.Namespace) -> int:
    try:
        data = json.loads(Path(args.path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CommandError(f"cannot read {args.path}: {exc}") from exc
    if data.get("format") == neep.CHECKPOINT_FORMAT:
        model = neep.model_from_dict(data)
        summary = {
            "kind": "neep_model",
            "alphabet": list(model.alphabet.symbols),
            "d": model.d,
            "layer_sizes": [int(w.shape[1]) for w in model.weights],
            "n_params": model.n_params,
            "delta_s": neep.delta_s_matrix(model).tolist(),
        }
    else:
        try:
            T = markov.TransitionMatrix.from_dict(data)
        except (KeyError, ValueError) as exc:
            raise CommandError(f"not a transition matrix or checkpoint: {exc}") from exc
        summary = {"kind": "transition_matrix", **T.to_dict(), **oracle_report(T)}
    print(json.dumps(summary, indent=2))
    return 0


COMMANDS = {
    "features": _cmd_features,
    "simulate": _cmd_simulate,
    "validate": _cmd_validate,
    "fit": _cmd_fit,
    "inspect": _cmd_inspect,
    "train": _cmd_train,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (CommandError, EntropyKitError, ValueError, OSError) as exc:
        print(f"entropykit {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
