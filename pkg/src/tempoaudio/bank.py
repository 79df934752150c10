"""One-occurrence segment database.

Audio sources are either parametric synthesis specs or local WAV files. Each
source is cut into single occurrences with the grounding scores, scored for
in-band purity, and the survivors are persisted as::

    bank/index.json
    bank/segments/<class_dir>/<segment_id>.wav
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import dsp

log = logging.getLogger(__name__)

INDEX_VERSION = 1
BURST_MERGE_GAP = 0.3
MIN_DURATION = 0.2
MAX_DURATION = 3.0
ENVELOPES = ("attack-decay", "burst-train", "sustained")
SYNTH_PEAK = 0.8


class BankError(ValueError):
    pass


@dataclass(frozen=True)
class EventClass:
    id: int
    name: str
    band_center: float
    band_width: float
    envelope: str
    nominal_duration: float

    @property
    def band(self) -> tuple[float, float]:
        half = self.band_width / 2
        return (self.band_center - half, self.band_center + half)

    @property
    def carrier_band(self) -> tuple[float, float]:
        # synthesized content sits in the central 80% so window leakage stays in band
        half = 0.4 * self.band_width
        return (self.band_center - half, self.band_center + half)

    @property
    def slug(self) -> str:
        return self.name.replace(" ", "_")


_BUILTIN_TABLE = [
    ("dog barking", "burst-train", 1.0),
    ("door knocking", "burst-train", 1.2),
    ("door slamming", "attack-decay", 0.5),
    ("gunshot", "attack-decay", 0.4),
    ("cow mooing", "sustained", 2.0),
    ("keyboard typing", "burst-train", 2.0),
    ("bird chirping", "burst-train", 1.5),
    ("cat meowing", "sustained", 1.0),
    ("car horn", "sustained", 1.2),
    ("church bell", "attack-decay", 2.0),
    ("clapping", "burst-train", 1.5),
    ("coughing", "attack-decay", 0.6),
    ("duck quacking", "burst-train", 1.0),
    ("explosion", "attack-decay", 1.5),
    ("glass breaking", "attack-decay", 0.8),
    ("phone ringing", "sustained", 2.0),
    ("rooster crowing", "sustained", 1.8),
    ("whistling", "sustained", 1.5),
]


def builtin_classes() -> list[EventClass]:
    """The 18 built-in classes: 240 Hz bands on a 400 Hz grid from 400 Hz up."""
    return [
        EventClass(i, name, 400.0 + 400.0 * i, 240.0, env, dur)
        for i, (name, env, dur) in enumerate(_BUILTIN_TABLE)
    ]


def validate_classes(classes: Sequence[EventClass]) -> None:
    names = [c.name for c in classes]
    if len(set(names)) != len(names):
        raise BankError("class names must be unique")
    if [c.id for c in classes] != list(range(len(classes))):
        raise BankError("class ids must be contiguous from 0")
    bands = sorted(c.band for c in classes)
    for (_, hi), (lo, _) in zip(bands, bands[1:]):
        if lo <= hi:
            raise BankError("class bands overlap")
    for c in classes:
        if c.envelope not in ENVELOPES:
            raise BankError(f"unknown envelope {c.envelope!r}")
        if not MIN_DURATION <= c.nominal_duration <= MAX_DURATION:
            raise BankError(f"nominal duration of {c.name!r} out of range")


@dataclass(frozen=True, eq=False)
class OneOccurrenceSegment:
    event_id: int
    samples: np.ndarray
    sample_rate: int
    quality: float = 0.0
    segment_id: str = ""
    source: str = ""

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, OneOccurrenceSegment):
            return NotImplemented
        return (
            self.event_id == other.event_id
            and self.sample_rate == other.sample_rate
            and self.quality == other.quality
            and self.segment_id == other.segment_id
            and self.source == other.source
            and np.array_equal(self.samples, other.samples)
        )


@dataclass(frozen=True)
class Bank:
    classes: tuple[EventClass, ...]
    segments: tuple[OneOccurrenceSegment, ...]
    sample_rate: int = dsp.SAMPLE_RATE
    stats: dict[str, float] = field(init=False, compare=True)

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "segments", tuple(self.segments))
        validate_classes(self.classes)
        for c in self.classes:
            if not any(s.event_id == c.id for s in self.segments):
                raise BankError(f"class {c.name!r} has no segments")
        object.__setattr__(self, "stats", self._median_durations())

    def _median_durations(self) -> dict[str, float]:
        out = {}
        for c in self.classes:
            durs = [s.duration for s in self.segments if s.event_id == c.id]
            out[c.name] = float(np.median(durs))
        return out

    def by_class(self, event_id: int) -> list[OneOccurrenceSegment]:
        return [s for s in self.segments if s.event_id == event_id]

    def class_named(self, name: str) -> EventClass:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def with_segments(self, segments: Iterable[OneOccurrenceSegment]) -> "Bank":
        return Bank(self.classes, tuple(segments), self.sample_rate)


# --- synthesis -------------------------------------------------------------

def _attack_decay(n: int, sr: int, end_level: float = 0.35) -> np.ndarray:
    t = np.arange(n) / sr
    attack = min(int(0.015 * sr), n // 4)
    env = np.exp(np.log(end_level) * t / max(t[-1], 1e-9))
    env[:attack] *= np.sin(0.5 * np.pi * np.arange(attack) / attack) ** 2
    return env


def _release(env: np.ndarray, sr: int, seconds: float = 0.01) -> np.ndarray:
    r = min(int(seconds * sr), len(env) // 4)
    if r > 0:
        env[-r:] *= np.cos(0.5 * np.pi * np.arange(1, r + 1) / r) ** 2
    return env


def _envelope(kind: str, n: int, sr: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "attack-decay":
        return _release(_attack_decay(n, sr), sr)
    if kind == "sustained":
        env = np.ones(n)
        ramp = min(int(0.03 * sr), n // 4)
        env[:ramp] = np.sin(0.5 * np.pi * np.arange(ramp) / ramp) ** 2
        return _release(env, sr, 0.03)
    # burst-train: pulses of 0.08-0.18 s separated by 0.05-0.15 s gaps,
    # first pulse at 0 and last pulse ending exactly at n
    env = np.zeros(n)
    pos = 0
    while pos < n:
        plen = int(rng.uniform(0.08, 0.18) * sr)
        gap = int(rng.uniform(0.05, 0.15) * sr)
        if n - (pos + plen) < int(0.08 * sr) + gap:
            plen = n - pos
        env[pos : pos + plen] = _release(_attack_decay(plen, sr, 0.4), sr)
        pos += plen + gap
    return env


def synth_event(cls: EventClass, seed: int, duration: float,
                sample_rate: int = dsp.SAMPLE_RATE) -> OneOccurrenceSegment:
    """Deterministic single occurrence of ``cls``: band-limited noise under the class envelope."""
    if not MIN_DURATION <= duration <= MAX_DURATION:
        raise BankError(f"duration {duration} outside [{MIN_DURATION}, {MAX_DURATION}]")
    rng = np.random.default_rng([cls.id, int(seed)])
    n = int(round(duration * sample_rate))
    lo, hi = cls.carrier_band
    carrier = dsp.bandlimited_noise(n, lo, hi, rng, sample_rate)
    x = carrier * _envelope(cls.envelope, n, sample_rate, rng)
    x *= SYNTH_PEAK / np.max(np.abs(x))
    return OneOccurrenceSegment(cls.id, dsp.quantize(x), sample_rate, source=f"synth:{cls.id}:{seed}:{duration}")


# --- segmentation & filtering ---------------------------------------------

def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as half-open ``(start, stop)`` frame pairs."""
    padded = np.concatenate([[False], mask.astype(bool), [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b)) for a, b in zip(edges[::2], edges[1::2])]


def merge_runs(runs: list[tuple[int, int]], max_gap: int) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for a, b in runs:
        if out and a - out[-1][1] < max_gap:
            out[-1] = (out[-1][0], b)
        else:
            out.append((a, b))
    return out


def segment_clip(audio: np.ndarray, cls: EventClass, threshold: float = 0.5,
                 sample_rate: int = dsp.SAMPLE_RATE, bank_rate: int = dsp.SAMPLE_RATE,
                 classes: Sequence[EventClass] | None = None) -> list[OneOccurrenceSegment]:
    from .grounding import frame_scores

    if audio is None or len(audio) == 0:
        raise BankError("empty audio")
    if sample_rate != bank_rate:
        raise BankError(f"sample rate {sample_rate} does not match bank rate {bank_rate}")
    if classes is not None and cls not in classes:
        raise BankError(f"unknown class {cls.name!r}")
    hop = dsp.frame_hop(sample_rate)
    scores = frame_scores(audio, cls, sample_rate)
    gap_frames = int(round(BURST_MERGE_GAP * sample_rate / hop))
    runs = merge_runs(_runs(scores >= threshold), gap_frames)
    segments = []
    for a, b in runs:
        s0, s1 = a * hop, min(b * hop, len(audio))
        piece = np.asarray(audio[s0:s1], dtype=np.float64)
        if s1 - s0 < int(MIN_DURATION * sample_rate) or not np.any(piece):
            continue
        segments.append(OneOccurrenceSegment(cls.id, piece, sample_rate, source=f"{s0 / sample_rate:.2f}"))
    return segments


def segment_quality(segment: OneOccurrenceSegment, cls: EventClass) -> float:
    hop = dsp.frame_hop(segment.sample_rate)
    power = dsp.power_frames(segment.samples, hop)
    total = float(power.sum())
    if total <= 0.0:
        return 0.0
    freqs = dsp.fft_freqs(hop, segment.sample_rate)
    inband = float(power[:, dsp.band_mask(freqs, *cls.band)].sum())
    return float(np.clip(inband / total, 0.0, 1.0))


def filter_segment(segment: OneOccurrenceSegment, cls: EventClass,
                   threshold: float = 0.3) -> tuple[bool, float]:
    """Accept/reject by in-band energy share; returns ``(accepted, quality)``."""
    q = segment_quality(segment, cls)
    return q >= threshold, q


# --- building & persistence ------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    event: str
    seed: int
    duration: float


@dataclass(frozen=True)
class FileSpec:
    path: str
    event: str


@dataclass
class BankConfig:
    segment_threshold: float = 0.5
    filter_threshold: float = 0.3
    jobs: int = 1


def default_synth_specs(classes: Sequence[EventClass], per_class: int = 5, seed: int = 0) -> list[SynthSpec]:
    """``per_class`` specs per class with durations at nominal x [0.8, 1.2], 10 ms grid."""
    specs = []
    for c in classes:
        rng = np.random.default_rng([int(seed), c.id, 7919])
        for k in range(per_class):
            d = round(float(c.nominal_duration * rng.uniform(0.8, 1.2)), 2)
            d = min(max(d, MIN_DURATION), MAX_DURATION)
            specs.append(SynthSpec(c.name, int(dsp.derive_seed(seed, c.id, k) % (2**31)), d))
    return specs


def _process_source(src, classes_by_name, cfg: BankConfig) -> list[OneOccurrenceSegment]:
    if isinstance(src, SynthSpec):
        cls = classes_by_name[src.event]
        candidates = [synth_event(cls, src.seed, src.duration)]
    elif isinstance(src, FileSpec):
        if src.event not in classes_by_name:
            raise BankError(f"unknown class {src.event!r} for {src.path}")
        cls = classes_by_name[src.event]
        try:
            audio, sr = dsp.read_wav(src.path)
        except (OSError, ValueError) as exc:
            raise BankError(f"unreadable file {src.path}: {exc}") from exc
        candidates = segment_clip(audio, cls, cfg.segment_threshold, sample_rate=sr)
        candidates = [
            OneOccurrenceSegment(s.event_id, dsp.quantize(s.samples), s.sample_rate,
                                 source=f"{Path(src.path).name}@{s.source}")
            for s in candidates
        ]
    else:
        raise BankError(f"unresolvable source {src!r}")
    kept = []
    for seg in candidates:
        ok, q = filter_segment(seg, cls, cfg.filter_threshold)
        if ok:
            kept.append(OneOccurrenceSegment(seg.event_id, seg.samples, seg.sample_rate, q, source=seg.source))
        else:
            log.info("rejected segment from %s (quality %.3f)", seg.source, q)
    return kept


def build_bank(sources: Sequence[SynthSpec | FileSpec], classes: Sequence[EventClass] | None = None,
               config: BankConfig | None = None) -> Bank:
    cfg = config or BankConfig()
    classes = list(classes or builtin_classes())
    if not sources:
        raise BankError("empty bank")
    by_name = {c.name: c for c in classes}
    for src in sources:
        if src.event not in by_name:
            raise BankError(f"unknown class {src.event!r}")
    with ThreadPoolExecutor(max_workers=max(1, cfg.jobs)) as pool:
        results = list(pool.map(lambda s: _process_source(s, by_name, cfg), sources))
    segments = []
    counters = {c.id: 0 for c in classes}
    for group in results:
        for seg in group:
            sid = f"{seg.event_id:02d}_{counters[seg.event_id]:04d}"
            counters[seg.event_id] += 1
            segments.append(OneOccurrenceSegment(seg.event_id, seg.samples, seg.sample_rate,
                                                 seg.quality, sid, seg.source))
    empty = [c.name for c in classes if counters[c.id] == 0]
    if empty:
        raise BankError(f"classes with zero surviving segments: {', '.join(empty)}")
    return Bank(tuple(classes), tuple(segments))


def _index_dict(bank: Bank) -> dict:
    return {
        "index_version": INDEX_VERSION,
        "sample_rate": bank.sample_rate,
        "classes": [
            {"id": c.id, "name": c.name, "band_center": c.band_center, "band_width": c.band_width,
             "envelope": c.envelope, "nominal_duration": c.nominal_duration}
            for c in bank.classes
        ],
        "segments": [
            {"id": s.segment_id, "event_id": s.event_id,
             "path": f"segments/{bank.classes[s.event_id].slug}/{s.segment_id}.wav",
             "num_samples": len(s.samples), "duration": s.duration, "quality": s.quality,
             "source": s.source}
            for s in bank.segments
        ],
        "stats": {"median_duration": bank.stats},
    }


def save_bank(bank: Bank, root: str | Path) -> Path:
    root = Path(root)
    (root / "segments").mkdir(parents=True, exist_ok=True)
    index = _index_dict(bank)
    for seg, meta in zip(bank.segments, index["segments"]):
        dsp.write_wav(root / meta["path"], seg.samples, seg.sample_rate)
    path = root / "index.json"
    path.write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")
    return path


def load_bank(root: str | Path) -> Bank:
    root = Path(root)
    index = json.loads((root / "index.json").read_text())
    if index.get("index_version") != INDEX_VERSION:
        raise BankError(f"unsupported bank index version {index.get('index_version')!r}")
    classes = tuple(EventClass(**c) for c in index["classes"])
    segments = []
    for meta in index["segments"]:
        audio, sr = dsp.read_wav(root / meta["path"])
        segments.append(OneOccurrenceSegment(meta["event_id"], audio, sr, meta["quality"],
                                             meta["id"], meta["source"]))
    return Bank(classes, tuple(segments), index["sample_rate"])
