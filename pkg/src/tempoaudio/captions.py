"""Timestamp/frequency captions, event schedules, and the one-hot timestamp matrix.

Canonical forms::

    dog barking at 1-2, 3-4.5 and gunshot at 6-6.4     # timestamp caption
    dog barking 2 times and gunshot 1 times             # frequency caption

The full grammar lives in ``docs/caption_grammar.ebnf``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import dsp

DEFAULT_CLIP_LENGTH = 10.0
DEFAULT_RESOLUTION = dsp.FRAME_SECONDS
# minimum silence between two occurrences of one event when we place them;
# larger than the 0.3 s burst-merge gap so detection keeps them apart
PLACEMENT_GAP = 0.5


class CaptionError(ValueError):
    pass


class CaptionSyntaxError(CaptionError):
    def __init__(self, message: str, text: str, position: int):
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position}: {text[:position]}<HERE>{text[position:]}")


@dataclass
class EventSchedule:
    """Event name -> sorted, non-overlapping ``(onset, offset)`` intervals in seconds.

    Intervals of one event may not overlap or touch; touching intervals would
    be indistinguishable from a single longer one.
    """

    clip_length: float = DEFAULT_CLIP_LENGTH
    entries: dict[str, list[tuple[float, float]]] = field(default_factory=dict)

    def __post_init__(self):
        clean = {}
        for name, intervals in self.entries.items():
            ivs = sorted((float(a), float(b)) for a, b in intervals)
            for a, b in ivs:
                if not b > a:
                    raise CaptionError(f"{name!r}: offset {b} must exceed onset {a}")
                if a < 0 or b > self.clip_length + 1e-9:
                    raise CaptionError(f"{name!r}: interval {a}-{b} outside clip of {self.clip_length} s")
            for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
                if a1 <= b0:
                    raise CaptionError(f"{name!r}: overlapping intervals")
            clean[name] = ivs
        self.entries = clean

    @property
    def events(self) -> list[str]:
        return list(self.entries)

    def counts(self) -> dict[str, int]:
        return {k: len(v) for k, v in self.entries.items()}

    def __bool__(self) -> bool:
        return bool(self.entries)


@dataclass
class FrequencySpec:
    counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        for name, k in self.counts.items():
            if int(k) < 1:
                raise CaptionError(f"{name!r}: count must be >= 1, got {k}")
        self.counts = {k: int(v) for k, v in self.counts.items()}


@dataclass
class TimestampMatrix:
    data: np.ndarray
    resolution: float
    class_names: list[str]
    clip_length: float | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 2 or self.data.shape[0] != len(self.class_names):
            raise CaptionError("matrix rows must match class_names")
        if np.any(self.data > 1):
            raise CaptionError("matrix entries must be 0 or 1")
        if self.clip_length is None:
            self.clip_length = self.data.shape[1] * self.resolution

    def __eq__(self, other):
        if not isinstance(other, TimestampMatrix):
            return NotImplemented
        return (np.array_equal(self.data, other.data) and self.resolution == other.resolution
                and self.class_names == other.class_names)


# --- number formatting -----------------------------------------------------

def format_number(x: float) -> str:
    """Integers without a decimal point, otherwise the shortest exact decimal."""
    x = float(x)
    if x.is_integer():
        return str(int(x))
    return np.format_float_positional(x, trim="-")


# --- timestamp captions ----------------------------------------------------

_WS = re.compile(r"\s*")
_NUMBER = re.compile(r"\d+(?:\.\d+)?")
_EVENT_BEFORE_AT = re.compile(r"[a-z][a-z'\-]*(?: [a-z][a-z'\-]*)*?(?= at \d)")
_AND = re.compile(r" and (?=[a-z])")


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str):
        raise CaptionSyntaxError(message, self.text, self.pos)

    def match(self, pattern: re.Pattern, what: str) -> str:
        m = pattern.match(self.text, self.pos)
        if not m:
            self.fail(f"expected {what}")
        self.pos = m.end()
        return m.group(0)

    def try_literal(self, lit: str) -> bool:
        if self.text.startswith(lit, self.pos):
            self.pos += len(lit)
            return True
        return False

    def skip_ws(self):
        self.pos = _WS.match(self.text, self.pos).end()

    def done(self) -> bool:
        return self.pos >= len(self.text)


def _check_names(names: Iterable[str], class_names: Sequence[str] | None, permissive: bool):
    if class_names is None or permissive:
        return
    known = set(class_names)
    for n in names:
        if n not in known:
            raise CaptionError(f"unknown event {n!r}")


def _known_names(class_names):
    if class_names is None:
        from .bank import builtin_classes
        return [c.name for c in builtin_classes()]
    return list(class_names)


def parse_timestamp_caption(text: str, clip_length: float = DEFAULT_CLIP_LENGTH,
                            class_names: Sequence[str] | None = None,
                            permissive: bool = False) -> EventSchedule:
    """Parse ``event at a-b, c-d and event at e-f`` into a schedule.

    ``class_names`` defaults to the built-in classes; ``permissive=True``
    accepts any event name.
    """
    s = _Scanner(text.strip().lower())
    entries: dict[str, list[tuple[float, float]]] = {}
    if s.done():
        return EventSchedule(clip_length, {})
    while True:
        start = s.pos
        name = s.match(_EVENT_BEFORE_AT, "event name followed by ' at <interval>'")
        if name in entries:
            s.pos = start
            s.fail(f"duplicate event {name!r}")
        s.try_literal(" at ")
        intervals = []
        while True:
            on = float(s.match(_NUMBER, "onset number"))
            s.skip_ws()
            if not s.try_literal("-"):
                s.fail("expected '-'")
            s.skip_ws()
            off = float(s.match(_NUMBER, "offset number"))
            intervals.append((on, off))
            if s.try_literal(","):
                s.skip_ws()
                continue
            break
        entries[name] = intervals
        if s.done():
            break
        m = _AND.match(s.text, s.pos)
        if not m:
            s.fail("expected ' and ' or end of caption")
        s.pos = m.end()
    _check_names(entries, _known_names(class_names), permissive)
    return EventSchedule(clip_length, entries)


def serialize_timestamp_caption(schedule: EventSchedule) -> str:
    clauses = []
    for name, intervals in schedule.entries.items():
        spans = ", ".join(f"{format_number(a)}-{format_number(b)}" for a, b in intervals)
        clauses.append(f"{name} at {spans}")
    return " and ".join(clauses)


# --- frequency captions ----------------------------------------------------

_FREQ_CLAUSE = re.compile(
    r"(?P<name>[a-z][a-z'\-]*(?: [a-z][a-z'\-]*)*?) (?:(?P<n>\d+) times?|(?P<word>once|twice))"
    r"(?= and [a-z]|$)"
)


def parse_frequency_caption(text: str, class_names: Sequence[str] | None = None,
                            permissive: bool = False) -> FrequencySpec:
    s = _Scanner(text.strip().lower())
    counts: dict[str, int] = {}
    if s.done():
        return FrequencySpec({})
    while True:
        m = _FREQ_CLAUSE.match(s.text, s.pos)
        if not m:
            s.fail("expected '<event> <count> times'")
        name = m.group("name")
        if name in counts:
            s.fail(f"duplicate event {name!r}")
        k = int(m.group("n")) if m.group("n") else {"once": 1, "twice": 2}[m.group("word")]
        if k == 0:
            raise CaptionError(f"{name!r}: count must be >= 1, got 0")
        counts[name] = k
        s.pos = m.end()
        if s.done():
            break
        s.pos += len(" and ")
    _check_names(counts, _known_names(class_names), permissive)
    return FrequencySpec(counts)


def serialize_frequency_caption(spec: FrequencySpec | EventSchedule) -> str:
    counts = spec.counts() if isinstance(spec, EventSchedule) else spec.counts
    return " and ".join(f"{name} {k} times" for name, k in counts.items())


# --- matrix conversion -----------------------------------------------------

def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + 1e-9))


def num_columns(clip_length: float, resolution: float) -> int:
    return int(math.ceil(clip_length / resolution - 1e-9))


def schedule_to_matrix(schedule: EventSchedule, class_names: Sequence[str],
                       resolution: float = DEFAULT_RESOLUTION) -> TimestampMatrix:
    """One row per class; an interval sets columns ``[round(on/res), round(off/res))``."""
    class_names = list(class_names)
    row_of = {n: i for i, n in enumerate(class_names)}
    for name in schedule.entries:
        if name not in row_of:
            raise CaptionError(f"unknown event {name!r}")
    T = num_columns(schedule.clip_length, resolution)
    data = np.zeros((len(class_names), T), dtype=np.uint8)
    for name, intervals in schedule.entries.items():
        for a, b in intervals:
            data[row_of[name], _round_half_up(a / resolution):min(_round_half_up(b / resolution), T)] = 1
    return TimestampMatrix(data, resolution, class_names, schedule.clip_length)


def matrix_to_schedule(matrix: TimestampMatrix) -> EventSchedule:
    from .bank import _runs

    res = matrix.resolution
    entries = {}
    for name, row in zip(matrix.class_names, matrix.data):
        runs = _runs(row > 0)
        if runs:
            entries[name] = [(round(a * res, 9), round(min(b * res, matrix.clip_length), 9)) for a, b in runs]
    return EventSchedule(matrix.clip_length, entries)


# --- frequency -> timestamps -----------------------------------------------

def _place(k: int, d: float, clip_length: float, gap: float, rng: np.random.Generator) -> list[float] | None:
    for margin in (0.5, 0.0):
        lo, hi = margin, clip_length - d - margin
        if hi < lo:
            continue
        if k == 1:
            bases, spacing = [0.5 * (lo + hi)], hi - lo
            jitter = 0.2 * spacing
        else:
            spacing = (hi - lo) / (k - 1)
            if spacing < d + gap + 0.02:
                continue
            bases = [lo + i * spacing for i in range(k)]
            jitter = min(0.2 * spacing, 0.5 * (spacing - d - gap - 0.02))
        u = rng.uniform(-1.0, 1.0, size=k)
        return [min(max(b + jitter * ui, lo), hi) for b, ui in zip(bases, u)]
    return None


def freq_to_schedule(spec: FrequencySpec, bank_stats: Mapping[str, float],
                     clip_length: float = DEFAULT_CLIP_LENGTH, seed: int = 0,
                     gap: float = PLACEMENT_GAP) -> EventSchedule:
    """Turn occurrence counts into timestamps using the bank's median durations.

    Onsets are evenly spread over ``[0.5, clip - d - 0.5]`` with seeded jitter
    (at most 20% of the spacing) and rounded to 10 ms.
    """
    entries = {}
    for j, (name, k) in enumerate(spec.counts.items()):
        if name not in bank_stats:
            raise CaptionError(f"event {name!r} absent from bank statistics")
        d = max(round(float(bank_stats[name]), 2), 0.01)
        if k * d > 0.8 * clip_length:
            raise CaptionError(f"infeasible packing: {k} x {d} s of {name!r} in {clip_length} s")
        rng = np.random.default_rng([int(seed), j])
        onsets = _place(k, d, clip_length, gap, rng)
        if onsets is None:
            raise CaptionError(f"infeasible packing: {k} x {d} s of {name!r} with {gap} s gaps")
        entries[name] = [(round(o, 2), min(round(o + d, 2), clip_length)) for o in onsets]
    return EventSchedule(clip_length, entries)

