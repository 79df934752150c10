import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tempoaudio.bank import builtin_classes
from tempoaudio.captions import (CaptionError, CaptionSyntaxError, EventSchedule, FrequencySpec, TimestampMatrix,
                                 format_number, freq_to_schedule, matrix_to_schedule, parse_frequency_caption,
                                 parse_timestamp_caption, schedule_to_matrix, serialize_frequency_caption,
                                 serialize_timestamp_caption)

NAMES = [c.name for c in builtin_classes()]


@st.composite
def schedules(draw, grid=0.01, clip=10.0):
    """Random valid schedules whose endpoints sit on ``grid``."""
    cells = int(round(clip / grid))
    events = draw(st.lists(st.sampled_from(NAMES), unique=True, max_size=4))
    entries = {}
    for name in events:
        # 2k distinct cut points, paired up; a spacer keeps intervals from touching
        k = draw(st.integers(1, 4))
        cuts = sorted(draw(st.lists(st.integers(0, cells), min_size=2 * k, max_size=2 * k, unique=True)))
        ivs = []
        for a, b in zip(cuts[::2], cuts[1::2]):
            if ivs and a <= ivs[-1][1]:
                continue
            ivs.append((a, b))
        entries[name] = [(round(a * grid, 2), round(b * grid, 2)) for a, b in ivs]
    return EventSchedule(clip, entries)


def test_single_interval_caption():
    s = parse_timestamp_caption("dog barking at 2-3")
    assert s.entries == {"dog barking": [(2.0, 3.0)]}


def test_two_events():
    s = parse_timestamp_caption("door knocking at 1-4 and door slamming at 6-8")
    assert s.entries == {"door knocking": [(1.0, 4.0)], "door slamming": [(6.0, 8.0)]}


@pytest.mark.parametrize("text", ["dog barking at 3-2", "dog barking at 2-2"])
def test_offset_must_exceed_onset(text):
    with pytest.raises(CaptionError, match="exceed"):
        parse_timestamp_caption(text)


@pytest.mark.parametrize("text", ["dog barking at 1-3, 2-4", "dog barking at 1-2, 2-3"])
def test_overlapping_or_touching(text):
    with pytest.raises(CaptionError, match="overlap"):
        parse_timestamp_caption(text)


def test_beyond_clip():
    with pytest.raises(CaptionError, match="outside clip"):
        parse_timestamp_caption("dog barking at 9-11")


@pytest.mark.parametrize("text,pos", [("dog barking at 2 3", 17), ("dog barking at 2-", 17),
                                      ("dog barking at 2-3 and", 18)])
def test_syntax_error_position(text, pos):
    with pytest.raises(CaptionSyntaxError) as err:
        parse_timestamp_caption(text)
    assert err.value.position == pos


def test_unknown_event():
    with pytest.raises(CaptionError):
        parse_timestamp_caption("theremin at 1-2")
    s = parse_timestamp_caption("theremin at 1-2", permissive=True)
    assert s.entries == {"theremin": [(1.0, 2.0)]}


def test_duplicate_event_clause():
    with pytest.raises(CaptionError):
        parse_timestamp_caption("gunshot at 1-2 and gunshot at 4-5")


def test_serialize_example():
    s = EventSchedule(10.0, {"dog barking": [(1, 2), (3, 4), (7, 9)]})
    assert serialize_timestamp_caption(s) == "dog barking at 1-2, 3-4, 7-9"


def test_serialize_empty():
    assert serialize_timestamp_caption(EventSchedule()) == ""
    assert parse_timestamp_caption("") == EventSchedule()


@pytest.mark.parametrize("x,text", [(2.0, "2"), (2.5, "2.5"), (0.95, "0.95"), (10, "10"), (0.1 + 0.2, "0.3")])
def test_format_number(x, text):
    assert format_number(round(x, 2)) == text


@settings(max_examples=300, deadline=None)
@given(schedules())
def test_timestamp_roundtrip(s):
    assert parse_timestamp_caption(serialize_timestamp_caption(s)) == s


def test_frequency_examples():
    assert parse_frequency_caption("dog barking 3 times").counts == {"dog barking": 3}
    spec = parse_frequency_caption("dog barking 2 times and gunshot 1 times")
    assert spec.counts == {"dog barking": 2, "gunshot": 1}
    assert parse_frequency_caption("gunshot once and dog barking twice").counts == {"gunshot": 1, "dog barking": 2}


def test_frequency_zero_count():
    with pytest.raises(CaptionError):
        parse_frequency_caption("dog barking 0 times")


@pytest.mark.parametrize("text", ["dog barking three times", "dog barking 3", "3 times", "dog barking 3 times and"])
def test_frequency_syntax(text):
    with pytest.raises(CaptionError):
        parse_frequency_caption(text)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(NAMES), st.integers(1, 9), min_size=1, max_size=5))
def test_frequency_roundtrip(counts):
    spec = FrequencySpec(counts)
    assert parse_frequency_caption(serialize_frequency_caption(spec)) == spec


def test_matrix_example():
    m = schedule_to_matrix(parse_timestamp_caption("dog barking at 2-3"), NAMES)
    assert m.data.shape == (18, 250)
    row = m.data[NAMES.index("dog barking")]
    assert np.flatnonzero(row).tolist() == list(range(50, 75))
    assert m.data.sum() == 25


def test_matrix_empty():
    m = schedule_to_matrix(EventSchedule(), NAMES)
    assert m.data.shape == (18, 250) and not m.data.any()
    assert not matrix_to_schedule(m)


def test_matrix_overlapping_events():
    s = parse_timestamp_caption("dog barking at 1-3 and gunshot at 2-4")
    m = schedule_to_matrix(s, NAMES)
    a, b = m.data[NAMES.index("dog barking")], m.data[NAMES.index("gunshot")]
    assert np.all(a[50:75] == 1) and np.all(b[50:75] == 1)


def test_matrix_unknown_event():
    with pytest.raises(CaptionError):
        schedule_to_matrix(EventSchedule(10.0, {"theremin": [(1, 2)]}), NAMES)


def test_matrix_inverse_example():
    data = np.zeros((18, 250), dtype=np.uint8)
    data[0, 50:75] = 1
    s = matrix_to_schedule(TimestampMatrix(data, 0.04, NAMES, 10.0))
    assert s.entries == {NAMES[0]: [(2.0, 3.0)]}


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matrix_roundtrip(seed):
    rng = np.random.default_rng(seed)
    data = (rng.random((18, 250)) < rng.uniform(0.05, 0.9)).astype(np.uint8)
    m = TimestampMatrix(data, 0.04, NAMES, 10.0)
    assert schedule_to_matrix(matrix_to_schedule(m), NAMES) == m


@settings(max_examples=200, deadline=None)
@given(schedules(grid=0.04))
def test_schedule_matrix_roundtrip_on_grid(s):
    assert matrix_to_schedule(schedule_to_matrix(s, NAMES)) == s


def test_freq_to_schedule_example():
    s = freq_to_schedule(FrequencySpec({"dog barking": 3}), {"dog barking": 1.0}, 10.0, seed=0)
    ivs = s.entries["dog barking"]
    assert len(ivs) == 3
    assert all(abs((b - a) - 1.0) < 1e-9 for a, b in ivs)
    assert all(a1 - b0 >= 0.3 for (_, b0), (a1, _) in zip(ivs, ivs[1:]))


def test_freq_to_schedule_single():
    s = freq_to_schedule(FrequencySpec({"gunshot": 1}), {"gunshot": 0.42}, 10.0)
    (a, b), = s.entries["gunshot"]
    assert b - a == pytest.approx(0.42)


def test_freq_to_schedule_infeasible():
    with pytest.raises(CaptionError, match="infeasible"):
        freq_to_schedule(FrequencySpec({"dog barking": 12}), {"dog barking": 1.0}, 10.0)


def test_freq_to_schedule_missing_stats():
    with pytest.raises(CaptionError, match="bank"):
        freq_to_schedule(FrequencySpec({"gunshot": 1}), {"dog barking": 1.0})


def test_freq_to_schedule_deterministic():
    spec = FrequencySpec({"dog barking": 2, "gunshot": 3})
    stats = {"dog barking": 0.95, "gunshot": 0.42}
    assert freq_to_schedule(spec, stats, seed=5) == freq_to_schedule(spec, stats, seed=5)


@settings(max_examples=200, deadline=None)
@given(st.dictionaries(st.sampled_from(NAMES), st.integers(1, 4), min_size=1, max_size=3),
       st.integers(0, 10**6))
def test_freq_to_schedule_counts_and_gaps(counts, seed):
    stats = {c.name: c.nominal_duration for c in builtin_classes()}
    s = freq_to_schedule(FrequencySpec(counts), stats, 10.0, seed)
    assert s.counts() == counts
    for ivs in s.entries.values():
        assert all(a1 - b0 >= 0.5 - 1e-9 for (_, b0), (a1, _) in zip(ivs, ivs[1:]))
