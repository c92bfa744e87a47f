"""Ingestion of location-event streams and slicing into day/period windows.

Input schema (CSV needs the header; JSONL uses the same keys per object)::

    household_id,timestamp,location
    h1,2021-03-01T07:15:02,kitchen

Timestamps without an offset are civil times in the configured zone. Ambiguous
civil times inside a DST fold resolve to their first occurrence.
"""

from __future__ import annotations

import csv
import enum
import io
import json
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta, timezone, tzinfo
from typing import BinaryIO, Iterable, Iterator, Mapping
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from .errors import CorruptInputError, InputError
from .types import Diagnostic, LocationAlphabet, Trajectory

__all__ = [
    "ActivityEvent",
    "DayPeriod",
    "WindowKey",
    "parse_events",
    "slice_windows",
    "day_period",
    "week_start_of",
    "resolve_zone",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("household_id", "timestamp", "location")
DAYTIME_START = time(6, 0, 0)
DAYTIME_END = time(18, 0, 0)
DEFAULT_MAX_REJECT_FRACTION = 0.5


class DayPeriod(str, enum.Enum):
    DAYTIME = "day"
    NIGHT = "night"


@dataclass(frozen=True)
class ActivityEvent:
    household_id: str
    timestamp: datetime  # aware, UTC
    civil: datetime  # naive civil time in the configured zone
    location: str
    line: int = 0


@dataclass(frozen=True, order=True)
class WindowKey:
    household_id: str
    week_start: date
    day: date
    period: DayPeriod

    def __post_init__(self) -> None:
        if self.week_start.weekday() != 0:
            raise ValueError(f"week_start {self.week_start} is not a Monday")
        if not self.week_start <= self.day < self.week_start + timedelta(days=7):
            raise ValueError(f"day {self.day} outside week starting {self.week_start}")


def resolve_zone(name: str | tzinfo | None) -> tzinfo:
    if name is None:
        return timezone.utc
    if isinstance(name, tzinfo):
        return name
    if name.upper() in ("UTC", "Z"):
        return timezone.utc
    try:
        return ZoneInfo(name)
    except (ZoneInfoNotFoundError, ValueError) as exc:
        raise ValueError(f"unknown time zone {name!r}") from exc


def day_period(civil: datetime | time) -> DayPeriod:
    """Daytime is the half-open interval [06:00, 18:00); everything else is night."""
    t = civil.time() if isinstance(civil, datetime) else civil
    return DayPeriod.DAYTIME if DAYTIME_START <= t < DAYTIME_END else DayPeriod.NIGHT


def week_start_of(day: date) -> date:
    """ISO week origin: the Monday on or before ``day``."""
    return day - timedelta(days=day.weekday())


def _parse_timestamp(raw: str, zone: tzinfo) -> tuple[datetime, datetime]:
    text = raw.strip()
    if not text:
        raise ValueError("empty timestamp")
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    stamp = datetime.fromisoformat(text).replace(microsecond=0)
    if stamp.tzinfo is None:
        aware = stamp.replace(tzinfo=zone, fold=0)
    else:
        aware = stamp
    instant = aware.astimezone(timezone.utc)
    civil = instant.astimezone(zone).replace(tzinfo=None)
    return instant, civil


def _records(text: str, fmt: str) -> Iterator[tuple[int, Mapping[str, object] | None, str]]:
    """Yield ``(line_number, record_or_None, error_reason)`` for each data line."""
    if fmt == "csv":
        lines = text.splitlines()
        # leading "#" lines carry metadata written by this package
        skipped = 0
        while skipped < len(lines) and lines[skipped].startswith("#"):
            skipped += 1
        lines = lines[skipped:]
        if not lines:
            return
        header = [h.strip() for h in next(csv.reader([lines[0]]))]
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise CorruptInputError(f"CSV header lacks required columns {missing}; got {header}")
        for lineno, row in enumerate(csv.reader(lines[1:]), start=skipped + 2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                yield lineno, None, f"expected {len(header)} fields, got {len(row)}"
                continue
            yield lineno, dict(zip(header, row)), ""
    elif fmt == "jsonl":
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                yield lineno, None, f"invalid JSON: {exc.msg}"
                continue
            if not isinstance(obj, dict):
                yield lineno, None, "record is not a JSON object"
                continue
            yield lineno, obj, ""
    else:
        raise ValueError(f"unsupported format {fmt!r}")


def parse_events(
    source: bytes | str | BinaryIO,
    fmt: str = "csv",
    alphabet: LocationAlphabet | None = None,
    *,
    tz: str | tzinfo | None = None,
    max_reject_fraction: float = DEFAULT_MAX_REJECT_FRACTION,
) -> tuple[list[ActivityEvent], list[Diagnostic]]:
    """Parse an event stream into validated events plus rejection diagnostics.

    Events come back sorted by ``(household_id, timestamp, input order)``.
    Every rejected record yields exactly one diagnostic carrying its line number.

    Raises
    ------
    InputError
        The source cannot be read or is not UTF-8.
    CorruptInputError
        More than ``max_reject_fraction`` of the records were rejected, or the
        CSV header is missing a required column.
    """
    alphabet = alphabet or LocationAlphabet.default()
    zone = resolve_zone(tz)
    if isinstance(source, str):
        text = source
    else:
        try:
            raw = source if isinstance(source, (bytes, bytearray)) else source.read()
            text = bytes(raw).decode("utf-8-sig")
        except (OSError, UnicodeDecodeError) as exc:
            raise InputError(f"unreadable input: {exc}") from exc

    events: list[ActivityEvent] = []
    diagnostics: list[Diagnostic] = []
    total = 0
    for lineno, record, error in _records(text, fmt):
        total += 1
        if record is None:
            diagnostics.append(Diagnostic("malformed record", error, {"line": lineno}))
            continue
        problem = None
        values = {}
        for key in CSV_COLUMNS:
            value = record.get(key)
            if not isinstance(value, str) or not value.strip():
                problem = f"missing or empty field {key!r}"
                break
            values[key] = value.strip()
        if problem:
            diagnostics.append(Diagnostic("malformed record", problem, {"line": lineno}))
            continue
        if values["location"] not in alphabet:
            diagnostics.append(
                Diagnostic("unknown location", f"location {values['location']!r} not in alphabet", {"line": lineno})
            )
            continue
        try:
            instant, civil = _parse_timestamp(values["timestamp"], zone)
        except ValueError as exc:
            diagnostics.append(Diagnostic("bad timestamp", str(exc), {"line": lineno}))
            continue
        events.append(ActivityEvent(values["household_id"], instant, civil, values["location"], lineno))

    if total and len(diagnostics) / total > max_reject_fraction:
        raise CorruptInputError(
            f"corrupt input: {len(diagnostics)} of {total} records rejected "
            f"(threshold {max_reject_fraction:.0%})"
        )
    # sort is stable, so equal timestamps keep their input order
    events.sort(key=lambda e: (e.household_id, e.timestamp))
    return events, diagnostics


def slice_windows(
    events: Iterable[ActivityEvent],
    alphabet: LocationAlphabet | None = None,
    *,
    week_origin_policy: str = "iso_monday",
    collapse_repeats: bool = False,
) -> dict[WindowKey, Trajectory]:
    """Assign each event to its (household, week, day, period) window.

    Night belongs to the civil date it falls on, so 01:00 on day D joins
    day D's night. With ``collapse_repeats`` consecutive duplicate locations
    inside a window are merged.
    """
    if week_origin_policy != "iso_monday":
        raise ValueError(f"unsupported week origin policy {week_origin_policy!r}")
    alphabet = alphabet or LocationAlphabet.default()
    buckets: dict[WindowKey, list[int]] = {}
    for event in events:
        day = event.civil.date()
        key = WindowKey(event.household_id, week_start_of(day), day, day_period(event.civil))
        states = buckets.setdefault(key, [])
        idx = alphabet.index(event.location)
        if collapse_repeats and states and states[-1] == idx:
            continue
        states.append(idx)
    return {key: Trajectory(buckets[key]) for key in sorted(buckets)}


def events_to_csv(events: Iterable[ActivityEvent]) -> str:
    """Serialise events back to the ingestion CSV schema (UTC offsets kept)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for e in events:
        writer.writerow([e.household_id, e.timestamp.isoformat(), e.location])
    return buf.getvalue()
