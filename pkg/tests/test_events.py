import io
import json
from datetime import date, datetime, time, timedelta, timezone

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entropykit.errors import CorruptInputError, InputError
from entropykit.events import (
    DayPeriod,
    WindowKey,
    day_period,
    parse_events,
    slice_windows,
    week_start_of,
)
from entropykit.types import LocationAlphabet

HEADER = "household_id,timestamp,location\n"


def test_csv_line_maps_fields(rooms):
    evts, diags = parse_events((HEADER + "h1,2021-03-01T07:15:02,kitchen\n").encode(), "csv", rooms)
    assert diags == []
    (e,) = evts
    assert e.household_id == "h1"
    assert e.civil == datetime(2021, 3, 1, 7, 15, 2)
    assert e.timestamp == datetime(2021, 3, 1, 7, 15, 2, tzinfo=timezone.utc)
    assert e.location == "kitchen"


def test_unknown_location_is_diagnosed_not_dropped(rooms):
    text = HEADER + "h1,2021-03-01T07:15:02,garage\nh1,2021-03-01T07:16:00,kitchen\n"
    evts, diags = parse_events(text.encode(), "csv", rooms)
    assert len(evts) == 1
    assert len(diags) == 1
    assert diags[0].reason == "unknown location"
    assert diags[0].context["line"] == 2


def test_identical_timestamps_keep_input_order(rooms):
    text = HEADER + "h1,2021-03-01T07:15:02,kitchen\nh1,2021-03-01T07:15:02,lounge\nh1,2021-03-01T07:15:01,bedroom\n"
    evts, _ = parse_events(text.encode(), "csv", rooms)
    assert [e.location for e in evts] == ["bedroom", "kitchen", "lounge"]


def test_events_sorted_by_household_then_time(rooms):
    text = HEADER + "h2,2021-03-01T07:00:00,kitchen\nh1,2021-03-02T07:00:00,lounge\nh1,2021-03-01T07:00:00,bedroom\n"
    evts, _ = parse_events(text.encode(), "csv", rooms)
    assert [(e.household_id, e.location) for e in evts] == [("h1", "bedroom"), ("h1", "lounge"), ("h2", "kitchen")]


def test_jsonl_matches_csv(rooms):
    lines = [
        {"household_id": "h1", "timestamp": "2021-03-01T07:15:02", "location": "kitchen"},
        {"household_id": "h1", "timestamp": "2021-03-01T19:00:00", "location": "bedroom"},
    ]
    jsonl = "\n".join(json.dumps(x) for x in lines)
    csv_text = HEADER + "".join(f"{x['household_id']},{x['timestamp']},{x['location']}\n" for x in lines)
    a, _ = parse_events(jsonl.encode(), "jsonl", rooms)
    b, _ = parse_events(csv_text.encode(), "csv", rooms)
    assert [(e.household_id, e.timestamp, e.location) for e in a] == [(e.household_id, e.timestamp, e.location) for e in b]


def test_malformed_records_each_get_a_line_number(rooms):
    text = (
        HEADER
        + "h1,2021-03-01T07:15:02,kitchen\n"
        + "h1,not-a-time,kitchen\n"
        + "h1,2021-03-01T08:00:00\n"
        + ",2021-03-01T09:00:00,kitchen\n"
        + "h1,2021-03-01T10:00:00,kitchen\n"
        + "h1,2021-03-01T11:00:00,kitchen\n"
    )
    evts, diags = parse_events(text.encode(), "csv", rooms)
    assert len(evts) == 3
    assert sorted(d.context["line"] for d in diags) == [3, 4, 5]


def test_jsonl_bad_lines(rooms):
    text = '{"household_id": "h1", "timestamp": "2021-03-01T07:15:02", "location": "kitchen"}\n[1, 2]\n{oops\n'
    text += '{"household_id": "h1", "timestamp": "2021-03-01T07:16:02", "location": "lounge"}\n'
    evts, diags = parse_events(text.encode(), "jsonl", rooms)
    assert len(evts) == 2
    assert [d.context["line"] for d in diags] == [2, 3]


def test_corrupt_input_threshold(rooms):
    text = HEADER + "h1,2021-03-01T07:15:02,garage\nh1,2021-03-01T07:15:03,attic\nh1,2021-03-01T07:15:04,kitchen\n"
    with pytest.raises(CorruptInputError):
        parse_events(text.encode(), "csv", rooms)
    evts, diags = parse_events(text.encode(), "csv", rooms, max_reject_fraction=0.9)
    assert len(evts) == 1 and len(diags) == 2


def test_missing_header_column_is_fatal(rooms):
    with pytest.raises(CorruptInputError):
        parse_events(b"household_id,when,location\nh1,2021-03-01T07:15:02,kitchen\n", "csv", rooms)


def test_non_utf8_is_unreadable(rooms):
    with pytest.raises(InputError):
        parse_events(b"\xff\xfe\x00garbage", "csv", rooms)


def test_file_like_source(rooms):
    evts, _ = parse_events(io.BytesIO((HEADER + "h1,2021-03-01T07:15:02,kitchen\n").encode()), "csv", rooms)
    assert len(evts) == 1


def test_offsets_and_time_zones(rooms):
    text = HEADER + "h1,2021-03-01T07:00:00+02:00,kitchen\nh1,2021-03-01T05:30:00Z,lounge\n"
    evts, _ = parse_events(text.encode(), "csv", rooms)
    assert [e.civil.time() for e in evts] == [time(5, 0), time(5, 30)]
    london, _ = parse_events((HEADER + "h1,2021-07-01T05:30:00Z,kitchen\n").encode(), "csv", rooms, tz="Europe/London")
    assert london[0].civil == datetime(2021, 7, 1, 6, 30)
    assert day_period(london[0].civil) is DayPeriod.DAYTIME


def test_dst_fold_ordered_by_instant(rooms):
    # 01:30 happens twice in London on 2021-10-31; explicit offsets disambiguate
    text = HEADER + "h1,2021-10-31T01:30:00+00:00,kitchen\nh1,2021-10-31T01:30:00+01:00,lounge\n"
    evts, _ = parse_events(text.encode(), "csv", rooms, tz="Europe/London")
    assert [e.location for e in evts] == ["lounge", "kitchen"]
    assert evts[0].civil == evts[1].civil == datetime(2021, 10, 31, 1, 30)


def test_metadata_comment_lines_are_skipped(rooms):
    text = '# {"tool": "entropykit"}\n' + HEADER + "h1,2021-03-01T07:15:02,kitchen\nh1,2021-03-01T07:15:03,garage\n"
    evts, diags = parse_events(text.encode(), "csv", rooms)
    assert len(evts) == 1
    assert diags[0].context["line"] == 4


@pytest.mark.parametrize(
    "clock, period",
    [
        (time(5, 59, 59), DayPeriod.NIGHT),
        (time(6, 0, 0), DayPeriod.DAYTIME),
        (time(17, 59, 59), DayPeriod.DAYTIME),
        (time(18, 0, 0), DayPeriod.NIGHT),
        (time(0, 0, 0), DayPeriod.NIGHT),
    ],
)
def test_boundary_table(clock, period):
    assert day_period(clock) is period
    assert day_period(datetime.combine(date(2021, 3, 3), clock)) is period


def test_sunday_belongs_to_preceding_monday():
    assert week_start_of(date(2021, 3, 7)) == date(2021, 3, 1)
    assert week_start_of(date(2021, 3, 1)) == date(2021, 3, 1)
    assert week_start_of(date(2021, 3, 8)) == date(2021, 3, 8)


def test_window_key_invariants():
    with pytest.raises(ValueError):
        WindowKey("h1", date(2021, 3, 2), date(2021, 3, 2), DayPeriod.NIGHT)
    with pytest.raises(ValueError):
        WindowKey("h1", date(2021, 3, 1), date(2021, 3, 8), DayPeriod.NIGHT)


def test_slice_windows_assignment(rooms):
    text = HEADER + "".join(
        f"h1,{stamp},{loc}\n"
        for stamp, loc in [
            ("2021-03-07T01:00:00", "bedroom"),  # Sunday night, early hours
            ("2021-03-07T06:00:00", "kitchen"),
            ("2021-03-07T12:00:00", "lounge"),
            ("2021-03-07T18:00:00", "lounge"),
            ("2021-03-07T23:00:00", "bedroom"),
            ("2021-03-08T00:30:00", "bathroom"),
        ]
    )
    evts, _ = parse_events(text.encode(), "csv", rooms)
    windows = slice_windows(evts, rooms)
    sun = date(2021, 3, 7)
    assert windows[WindowKey("h1", date(2021, 3, 1), sun, DayPeriod.NIGHT)] == rooms.encode(["bedroom", "lounge", "bedroom"])
    assert windows[WindowKey("h1", date(2021, 3, 1), sun, DayPeriod.DAYTIME)] == rooms.encode(["kitchen", "lounge"])
    assert windows[WindowKey("h1", date(2021, 3, 8), date(2021, 3, 8), DayPeriod.NIGHT)] == rooms.encode(["bathroom"])
    assert len(windows) == 3


def test_collapse_repeats(rooms):
    text = HEADER + "".join(f"h1,2021-03-01T07:0{i}:00,{loc}\n" for i, loc in enumerate(["kitchen", "kitchen", "lounge", "kitchen"]))
    evts, _ = parse_events(text.encode(), "csv", rooms)
    (kept,) = slice_windows(evts, rooms).values()
    (collapsed,) = slice_windows(evts, rooms, collapse_repeats=True).values()
    assert len(kept) == 4
    assert collapsed == rooms.encode(["kitchen", "lounge", "kitchen"])


def test_empty_input_gives_empty_map(rooms):
    assert slice_windows([], rooms) == {}
    assert parse_events(HEADER.encode(), "csv", rooms) == ([], [])


_stamps = st.datetimes(min_value=datetime(2020, 1, 1), max_value=datetime(2022, 12, 31)).map(lambda d: d.replace(microsecond=0))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["h1", "h2", "h3"]), _stamps, st.sampled_from(LocationAlphabet.default().symbols)), max_size=80))
def test_partition_and_determinism(records):
    rooms = LocationAlphabet.default()
    text = HEADER + "".join(f"{h},{t.isoformat()},{loc}\n" for h, t, loc in records)
    evts, diags = parse_events(text.encode(), "csv", rooms)
    windows = slice_windows(evts, rooms)
    assert not diags
    assert sum(len(t) for t in windows.values()) == len(evts) == len(records)
    assert all(len(t) > 0 for t in windows.values())
    for key in windows:
        assert key.week_start.weekday() == 0
        assert key.week_start <= key.day < key.week_start + timedelta(days=7)
    again = slice_windows(parse_events(text.encode(), "csv", rooms)[0], rooms)
    assert list(again.items()) == list(windows.items())
