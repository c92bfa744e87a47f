"""Weekly feature table: per-day measures, weekly means, z-scores and bands.

Each household's first ``baseline_weeks`` calendar weeks fit one transition
matrix and train one NEEP model per day period. Every later week gets six
raw measures (Shannon entropy, entropy rate and EP rate, each for daytime
and night), averaged over the days that have data, then z-scored within the
household and banded.
"""

from __future__ import annotations

import csv
import enum
import io
import json
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field, replace
from datetime import date, timedelta
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from . import entropy, markov, neep
from .errors import EntropyKitError, InsufficientDataError
from .events import DayPeriod, WindowKey, week_start_of
from .types import Diagnostic, LocationAlphabet, ProbabilityDistribution, Trajectory

__all__ = [
    "MeasureKind",
    "Band",
    "FeatureRow",
    "Baseline",
    "BREAKPOINTS",
    "fit_baselines",
    "weekly_measures",
    "normalize",
    "discretize",
    "assign_bands",
    "run_pipeline",
    "emit_feature_table",
    "parse_feature_table",
    "parse_labels",
    "feature_columns",
]

DEFAULT_BASELINE_WEEKS = 16
# standard-normal quartiles, rounded to four places
BREAKPOINTS: tuple[float, float, float] = (-0.6745, 0.0, 0.6745)
CONSTANT_SERIES_STD = 1e-12


class MeasureKind(str, enum.Enum):
    SHANNON_DAY = "shannon_day"
    SHANNON_NIGHT = "shannon_night"
    ENTROPY_RATE_DAY = "entropy_rate_day"
    ENTROPY_RATE_NIGHT = "entropy_rate_night"
    EP_DAY = "ep_day"
    EP_NIGHT = "ep_night"

    @property
    def period(self) -> DayPeriod:
        return DayPeriod.DAYTIME if self.value.endswith("_day") else DayPeriod.NIGHT


_KINDS_BY_PERIOD = {
    DayPeriod.DAYTIME: (MeasureKind.SHANNON_DAY, MeasureKind.ENTROPY_RATE_DAY, MeasureKind.EP_DAY),
    DayPeriod.NIGHT: (MeasureKind.SHANNON_NIGHT, MeasureKind.ENTROPY_RATE_NIGHT, MeasureKind.EP_NIGHT),
}


class Band(str, enum.Enum):
    VERY_LOW = "very_low"
    LOW = "low"
    HIGH = "high"
    VERY_HIGH = "very_high"


def _empty() -> dict[MeasureKind, Any]:
    return {kind: None for kind in MeasureKind}


@dataclass
class FeatureRow:
    household_id: str
    week_start: date
    raw: dict[MeasureKind, float | None] = field(default_factory=_empty)
    normalized: dict[MeasureKind, float | None] = field(default_factory=_empty)
    band: dict[MeasureKind, Band | None] = field(default_factory=_empty)
    days_present: dict[MeasureKind, int] = field(default_factory=lambda: {k: 0 for k in MeasureKind})
    labels: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Baseline:
    transition: markov.TransitionMatrix | None = None
    model: neep.NeepModel | None = None

    @property
    def stationary(self) -> ProbabilityDistribution | None:
        if self.transition is None:
            return None
        return markov.stationary_distribution(self.transition).distribution


# --------------------------------------------------------------------------
# baselines and weekly measures


def _by_household(windows: Mapping[WindowKey, Trajectory]) -> dict[str, dict[WindowKey, Trajectory]]:
    out: dict[str, dict[WindowKey, Trajectory]] = defaultdict(dict)
    for key in sorted(windows):
        out[key.household_id][key] = windows[key]
    return dict(out)


def _week_span(keys: Iterable[WindowKey]) -> tuple[date, int]:
    weeks = [k.week_start for k in keys]
    first, last = min(weeks), max(weeks)
    return first, (last - first).days // 7 + 1


def derive_seed(seed: int, *parts: object) -> int:
    """Stable per-task seed; independent of Python's hash randomisation."""
    tag = "|".join([str(seed), *map(str, parts)]).encode()
    return zlib.crc32(tag)


def _fit_one(
    trajectories: list[Trajectory],
    alphabet: LocationAlphabet,
    train_config: neep.TrainConfig | None,
    alpha: float,
    seed_parts: tuple,
    context: dict[str, Any],
    diagnostics: list[Diagnostic],
) -> Baseline:
    transition = model = None
    try:
        transition = markov.fit_transition_matrix(trajectories, alphabet, alpha)
    except InsufficientDataError as exc:
        diagnostics.append(Diagnostic("baseline transition matrix", str(exc), context))
    if train_config is not None:
        cfg = replace(train_config, seed=derive_seed(train_config.seed, *seed_parts))
        try:
            model, _ = neep.train(trajectories, alphabet, cfg)
        except EntropyKitError as exc:
            diagnostics.append(Diagnostic("baseline neep model", str(exc), context))
    return Baseline(transition, model)


def fit_baselines(
    windows: Mapping[WindowKey, Trajectory],
    alphabet: LocationAlphabet,
    *,
    baseline_weeks: int = DEFAULT_BASELINE_WEEKS,
    train_config: neep.TrainConfig | None = None,
    alpha: float = 0.0,
    refit: bool = False,
) -> tuple[dict[tuple, Baseline], list[Diagnostic]]:
    """Fit a transition matrix and NEEP model per (household, period).

    Keys are ``(household_id, period)``. With ``refit`` a baseline is fitted for
    every evaluation week from the ``baseline_weeks`` weeks before it, keyed
    ``(household_id, period, week_start)``. ``train_config=None`` skips NEEP.
    """
    baselines: dict[tuple, Baseline] = {}
    diagnostics: list[Diagnostic] = []
    for household, hh_windows in _by_household(windows).items():
        first, span = _week_span(hh_windows)
        if span < baseline_weeks:
            continue  # reported by weekly_measures
        cutoff = first + timedelta(weeks=baseline_weeks)
        if refit:
            spans = [
                (w, w - timedelta(weeks=baseline_weeks), w)
                for w in sorted({k.week_start for k in hh_windows if k.week_start >= cutoff})
            ]
        else:
            spans = [(None, first, cutoff)]
        for week, lo, hi in spans:
            for period in DayPeriod:
                trajs = [t for k, t in hh_windows.items() if k.period is period and lo <= k.week_start < hi]
                key = (household, period) if week is None else (household, period, week)
                context = {"household_id": household, "period": period.value}
                if week is not None:
                    context["week_start"] = week.isoformat()
                baselines[key] = _fit_one(
                    trajs, alphabet, train_config, alpha, (household, period.value, week), context, diagnostics
                )
    return baselines, diagnostics


def _lookup(baselines: Mapping[tuple, Baseline], household: str, period: DayPeriod, week: date) -> Baseline | None:
    return baselines.get((household, period, week)) or baselines.get((household, period))


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None


def weekly_measures(
    windows: Mapping[WindowKey, Trajectory],
    baselines: Mapping[tuple, Baseline],
    alphabet: LocationAlphabet,
    *,
    baseline_weeks: int = DEFAULT_BASELINE_WEEKS,
    marginal: str = "empirical",
    include_baseline_weeks: bool = False,
    retrain_config: neep.TrainConfig | None = None,
) -> tuple[list[FeatureRow], list[Diagnostic]]:
    """Average per-day measures into one raw row per (household, week).

    The entropy rate uses the baseline matrix with either the day's empirical
    location distribution (``marginal="empirical"``) or the baseline's
    stationary distribution (``"stationary"``). ``retrain_config`` trains a
    fresh NEEP model on every day-period window instead of using the baseline
    model; windows with too few transitions then yield no EP value.
    """
    if marginal not in ("empirical", "stationary"):
        raise ValueError(f"unknown marginal {marginal!r}")
    rows: list[FeatureRow] = []
    diagnostics: list[Diagnostic] = []
    stationary_cache: dict[int, ProbabilityDistribution] = {}

    for household, hh_windows in _by_household(windows).items():
        first, span = _week_span(hh_windows)
        if span < baseline_weeks:
            diagnostics.append(
                Diagnostic(
                    "insufficient baseline",
                    f"{span} weeks of data, {baseline_weeks} needed for the baseline",
                    {"household_id": household},
                )
            )
            continue
        cutoff = first + timedelta(weeks=baseline_weeks)
        by_week: dict[date, list[tuple[WindowKey, Trajectory]]] = defaultdict(list)
        for key, traj in hh_windows.items():
            if include_baseline_weeks or key.week_start >= cutoff:
                by_week[key.week_start].append((key, traj))

        for week in sorted(by_week):
            values: dict[MeasureKind, list[float]] = {k: [] for k in MeasureKind}
            for key, traj in by_week[week]:
                shannon_kind, rate_kind, ep_kind = _KINDS_BY_PERIOD[key.period]
                dist = entropy.estimate_distribution(traj, alphabet)
                values[shannon_kind].append(entropy.shannon_entropy(dist))

                base = _lookup(baselines, household, key.period, week)
                if base is not None and base.transition is not None:
                    if marginal == "empirical":
                        weights = dist
                    else:
                        cache_key = id(base.transition)
                        if cache_key not in stationary_cache:
                            stationary_cache[cache_key] = markov.stationary_distribution(base.transition).distribution
                        weights = stationary_cache[cache_key]
                    values[rate_kind].append(markov.entropy_rate(base.transition, weights))

                if len(traj) < 2:
                    continue
                model = base.model if base is not None else None
                if retrain_config is not None:
                    cfg = replace(retrain_config, seed=derive_seed(retrain_config.seed, household, key.day, key.period.value))
                    try:
                        model, _ = neep.train([traj], alphabet, cfg)
                    except EntropyKitError:
                        model = None
                if model is not None:
                    values[ep_kind].append(neep.ep_rate(model, traj))

            row = FeatureRow(household, week)
            for kind in MeasureKind:
                row.raw[kind] = _mean(values[kind])
                row.days_present[kind] = len(values[kind])
            rows.append(row)
    return rows, diagnostics


# --------------------------------------------------------------------------
# normalisation and bands


def normalize(rows: Sequence[FeatureRow]) -> tuple[list[FeatureRow], list[Diagnostic]]:
    """Z-score each household's weekly series per kind (population std).

    Kinds with fewer than two non-missing weeks, or a standard deviation below
    1e-12, get no z-values.
    """
    out = [replace(r, normalized=_empty(), band=_empty()) for r in rows]
    diagnostics: list[Diagnostic] = []
    groups: dict[str, list[FeatureRow]] = defaultdict(list)
    for row in out:
        groups[row.household_id].append(row)
    for household, hh_rows in groups.items():
        for kind in MeasureKind:
            present = [r for r in hh_rows if r.raw[kind] is not None]
            if len(present) < 2:
                continue
            x = np.array([r.raw[kind] for r in present], dtype=np.float64)
            std = float(x.std())
            if std < CONSTANT_SERIES_STD:
                diagnostics.append(
                    Diagnostic("constant series", f"{kind.value} does not vary", {"household_id": household, "kind": kind.value})
                )
                continue
            z = (x - x.mean()) / std
            for r, value in zip(present, z.tolist()):
                r.normalized[kind] = value
    return out, diagnostics


def discretize(z: float, breakpoints: Sequence[float] | None = None) -> Band:
    """Band of a z-value; each interval is closed on the left."""
    if not math.isfinite(z):
        raise ValueError(f"cannot discretize non-finite value {z!r}")
    lo, mid, hi = BREAKPOINTS if breakpoints is None else breakpoints
    if z < lo:
        return Band.VERY_LOW
    if z < mid:
        return Band.LOW
    if z < hi:
        return Band.HIGH
    return Band.VERY_HIGH


def assign_bands(rows: Sequence[FeatureRow], *, quartile_mode: bool = False) -> list[FeatureRow]:
    """Fill ``band`` from ``normalized``.

    Default breakpoints are the standard-normal quartiles. ``quartile_mode``
    uses the empirical quartiles of each household's z-series instead.
    """
    out = [replace(r, band=_empty()) for r in rows]
    groups: dict[str, list[FeatureRow]] = defaultdict(list)
    for row in out:
        groups[row.household_id].append(row)
    for hh_rows in groups.values():
        for kind in MeasureKind:
            present = [r for r in hh_rows if r.normalized[kind] is not None]
            if not present:
                continue
            if quartile_mode:
                z = np.array([r.normalized[kind] for r in present])
                breakpoints = tuple(float(q) for q in np.quantile(z, [0.25, 0.5, 0.75]))
            else:
                breakpoints = None
            for r in present:
                r.band[kind] = discretize(r.normalized[kind], breakpoints)
    return out


def run_pipeline(
    windows: Mapping[WindowKey, Trajectory],
    alphabet: LocationAlphabet,
    *,
    baseline_weeks: int = DEFAULT_BASELINE_WEEKS,
    train_config: neep.TrainConfig | None = None,
    alpha: float = 0.0,
    marginal: str = "empirical",
    refit: bool = False,
    retrain_per_window: bool = False,
    quartile_mode: bool = False,
) -> tuple[list[FeatureRow], list[Diagnostic]]:
    """Baselines, weekly measures, z-scores and bands in one call."""
    train_config = train_config or neep.TrainConfig()
    baselines, diagnostics = fit_baselines(
        windows,
        alphabet,
        baseline_weeks=baseline_weeks,
        train_config=None if retrain_per_window else train_config,
        alpha=alpha,
        refit=refit,
    )
    rows, diags = weekly_measures(
        windows,
        baselines,
        alphabet,
        baseline_weeks=baseline_weeks,
        marginal=marginal,
        retrain_config=train_config if retrain_per_window else None,
    )
    diagnostics += diags
    rows, diags = normalize(rows)
    diagnostics += diags
    return assign_bands(rows, quartile_mode=quartile_mode), diagnostics


# --------------------------------------------------------------------------
# feature table I/O


def feature_columns() -> list[str]:
    cols = ["household_id", "week_start"]
    for kind in MeasureKind:
        cols += [f"{kind.value}_raw", f"{kind.value}_z", f"{kind.value}_band", f"{kind.value}_days"]
    cols.append("labels")
    return cols


def parse_labels(source: bytes | str) -> list[tuple[str, date, str]]:
    """Read ``household_id,date,event`` CSV rows (``week_start`` accepted for ``date``)."""
    text = source.decode("utf-8-sig") if isinstance(source, bytes) else source
    reader = csv.DictReader(io.StringIO(text))
    date_col = "date" if reader.fieldnames and "date" in reader.fieldnames else "week_start"
    labels = []
    for rec in reader:
        labels.append((rec["household_id"].strip(), date.fromisoformat(rec[date_col].strip()), rec["event"].strip()))
    return labels


def _join_labels(
    rows: list[FeatureRow], labels: Iterable[tuple[str, date, str]] | None
) -> tuple[dict[tuple[str, date], list[str]], list[Diagnostic]]:
    joined: dict[tuple[str, date], list[str]] = defaultdict(list)
    diagnostics: list[Diagnostic] = []
    if not labels:
        return joined, diagnostics
    households = {r.household_id for r in rows}
    weeks = {(r.household_id, r.week_start) for r in rows}
    for household, when, name in labels:
        key = (household, week_start_of(when))
        context = {"household_id": household, "date": when.isoformat(), "event": name}
        if household not in households:
            diagnostics.append(Diagnostic("unknown household", "label references a household absent from the table", context))
        elif key not in weeks:
            diagnostics.append(Diagnostic("unmatched label", "label week has no feature row", context))
        else:
            joined[key].append(name)
    return joined, diagnostics


def _row_record(row: FeatureRow, labels: list[str]) -> dict[str, Any]:
    rec: dict[str, Any] = {"household_id": row.household_id, "week_start": row.week_start.isoformat()}
    for kind in MeasureKind:
        band = row.band[kind]
        rec[f"{kind.value}_raw"] = row.raw[kind]
        rec[f"{kind.value}_z"] = row.normalized[kind]
        rec[f"{kind.value}_band"] = band.value if band is not None else None
        rec[f"{kind.value}_days"] = row.days_present[kind]
    rec["labels"] = labels
    return rec


def emit_feature_table(
    rows: Sequence[FeatureRow],
    fmt: str = "csv",
    labels: Iterable[tuple[str, date, str]] | None = None,
    *,
    metadata: Mapping[str, Any] | None = None,
) -> tuple[bytes, list[Diagnostic]]:
    """Serialise rows ordered by (household, week).

    CSV writes missing values as empty fields, floats in shortest round-trip
    form and labels joined by ``;``; a ``metadata`` mapping goes on a leading
    ``#`` comment line. JSONL writes nulls, a label list, and metadata as a
    first ``{"metadata": ...}`` line.
    """
    ordered = sorted(rows, key=lambda r: (r.household_id, r.week_start))
    joined, diagnostics = _join_labels(ordered, labels)
    columns = feature_columns()
    buf = io.StringIO()
    if fmt == "csv":
        if metadata is not None:
            buf.write("# " + json.dumps(metadata, sort_keys=True) + "\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in ordered:
            rec = _row_record(row, row.labels + joined.get((row.household_id, row.week_start), []))
            cells = []
            for col in columns:
                value = rec[col]
                if value is None:
                    cells.append("")
                elif col == "labels":
                    cells.append(";".join(value))
                elif isinstance(value, float):
                    cells.append(repr(value))
                else:
                    cells.append(str(value))
            writer.writerow(cells)
    elif fmt == "jsonl":
        if metadata is not None:
            buf.write(json.dumps({"metadata": metadata}, sort_keys=True) + "\n")
        for row in ordered:
            rec = _row_record(row, row.labels + joined.get((row.household_id, row.week_start), []))
            buf.write(json.dumps({col: rec[col] for col in columns}) + "\n")
    else:
        raise ValueError(f"unsupported format {fmt!r}")
    return buf.getvalue().encode("utf-8"), diagnostics


def _row_from_record(rec: Mapping[str, Any]) -> tuple[FeatureRow, list[str]]:
    row = FeatureRow(str(rec["household_id"]), date.fromisoformat(str(rec["week_start"])))
    for kind in MeasureKind:
        raw, z, band = rec[f"{kind.value}_raw"], rec[f"{kind.value}_z"], rec[f"{kind.value}_band"]
        row.raw[kind] = None if raw in (None, "") else float(raw)
        row.normalized[kind] = None if z in (None, "") else float(z)
        row.band[kind] = None if band in (None, "") else Band(band)
        row.days_present[kind] = int(rec[f"{kind.value}_days"])
    labels = rec.get("labels") or []
    if isinstance(labels, str):
        labels = labels.split(";") if labels else []
    row.labels = list(labels)
    return row, row.labels


def parse_feature_table(data: bytes | str, fmt: str = "csv") -> tuple[dict[str, Any] | None, list[FeatureRow]]:
    """Inverse of :func:`emit_feature_table`; returns ``(metadata, rows)``."""
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    metadata = None
    rows = []
    if fmt == "csv":
        lines = text.splitlines()
        if lines and lines[0].startswith("# "):
            metadata = json.loads(lines[0][2:])
            lines = lines[1:]
        for rec in csv.DictReader(lines):
            rows.append(_row_from_record(rec)[0])
    elif fmt == "jsonl":
        for line in text.splitlines():
            if not line.strip():
                continue
            obj = json.loads(line)
            if "metadata" in obj and len(obj) == 1:
                metadata = obj["metadata"]
                continue
            rows.append(_row_from_record(obj)[0])
    else:
        raise ValueError(f"unsupported format {fmt!r}")
    return metadata, rows
