"""Simulated audio/caption pairs with exact timestamp annotation.

Every clip's seed is derived from ``master_seed`` with :func:`dsp.derive_seed`
(``derive_seed(master_seed, split_index, clip_index)``), so clips can be made
in any order and manifests are still byte-identical.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .bank import Bank
from .captions import (PLACEMENT_GAP, EventSchedule, serialize_frequency_caption,
                       serialize_timestamp_caption)

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "test_single", "test_multi")
MAX_ATTEMPTS = 100


class SimulationError(RuntimeError):
    def __init__(self, message: str, seed: int):
        self.seed = seed
        super().__init__(f"{message} (seed {seed})")


@dataclass
class SimConfig:
    clip_length: float = 10.0
    sample_rate: int = dsp.SAMPLE_RATE
    events_per_clip: dict[str, tuple[int, int]] = field(
        default_factory=lambda: {"train": (1, 3), "test_single": (1, 1), "test_multi": (2, 3)})
    occurrence_weights: tuple[float, float, float] = (2.0, 2.0, 1.0)
    split_sizes: tuple[int, int, int] = (500, 40, 20)
    master_seed: int = 0
    allow_cross_overlap: bool = True
    min_gap: float = PLACEMENT_GAP
    peak: float = 0.95

    def __post_init__(self):
        self.events_per_clip = {k: tuple(v) for k, v in self.events_per_clip.items()}
        self.occurrence_weights = tuple(float(w) for w in self.occurrence_weights)
        self.split_sizes = tuple(int(s) for s in self.split_sizes)
        if any(w <= 0 for w in self.occurrence_weights):
            raise ValueError("occurrence weights must be positive")
        if any(s < 0 for s in self.split_sizes):
            raise ValueError("split sizes must be >= 0")
        if self.clip_length < 4.0:
            raise ValueError("clip_length must be at least 4 s")
        for split in SPLITS:
            lo, hi = self.events_per_clip.get(split, (1, 1))
            if not 1 <= lo <= hi:
                raise ValueError(f"bad events_per_clip for {split}")


@dataclass
class ScenePair:
    audio: np.ndarray
    schedule: EventSchedule
    timestamp_caption: str
    frequency_caption: str
    seed: int
    gain: float = 1.0
    # (event name, segment id, onset sample)
    placements: list[tuple[str, str, int]] = field(default_factory=list)


def annotate(schedule: EventSchedule) -> tuple[str, str]:
    return serialize_timestamp_caption(schedule), serialize_frequency_caption(schedule)


def _draw_layout(durations: list[float], clip_length: float, gap: float, rng: np.random.Generator):
    """Uniformly random non-overlapping onsets for ``durations`` (in random order), or None."""
    k = len(durations)
    eff_gap = gap + 0.01  # absorbs rounding onsets to 10 ms
    slack = clip_length - sum(durations) - (k - 1) * eff_gap
    if slack < 0:
        return None
    order = rng.permutation(k)
    cuts = np.sort(rng.uniform(0.0, slack, size=k))
    spare = np.diff(np.concatenate([[0.0], cuts]))
    onsets = [0.0] * k
    pos = 0.0
    for j, i in enumerate(order):
        pos += spare[j]
        onsets[i] = min(round(pos, 2), round(clip_length - durations[i], 2))
        pos += durations[i] + eff_gap
    return onsets


def simulate_scene(bank: Bank, config: SimConfig, seed: int,
                   events_range: tuple[int, int] = (1, 1)) -> ScenePair:
    """One clip: pick events, occurrence counts and segments, place them, mix."""
    if not bank.segments:
        raise SimulationError("empty bank", seed)
    rng = np.random.default_rng(seed)
    sr = config.sample_rate
    n_samples = int(round(config.clip_length * sr))
    lo, hi = events_range
    n_events = int(rng.integers(lo, hi + 1))
    if n_events > len(bank.classes):
        raise SimulationError("more events requested than classes", seed)
    events = [bank.classes[i] for i in rng.choice(len(bank.classes), size=n_events, replace=False)]
    weights = np.asarray(config.occurrence_weights) / np.sum(config.occurrence_weights)
    counts = [int(rng.choice(len(weights), p=weights)) + 1 for _ in events]

    for _ in range(MAX_ATTEMPTS):
        picks = []
        for cls, k in zip(events, counts):
            pool = bank.by_class(cls.id)
            picks.append([pool[int(rng.integers(len(pool)))] for _ in range(k)])
        if config.allow_cross_overlap:
            layouts = [_draw_layout([s.duration for s in segs], config.clip_length, config.min_gap, rng)
                       for segs in picks]
            if any(lay is None for lay in layouts):
                continue
        else:
            flat = [s.duration for segs in picks for s in segs]
            joint = _draw_layout(flat, config.clip_length, config.min_gap, rng)
            if joint is None:
                continue
            layouts, pos = [], 0
            for segs in picks:
                layouts.append(joint[pos:pos + len(segs)])
                pos += len(segs)
        break
    else:
        raise SimulationError("packing infeasible after 100 attempts", seed)

    mix = np.zeros(n_samples)
    entries: dict[str, list[tuple[float, float]]] = {}
    placements = []
    for cls, segs, onsets in zip(events, picks, layouts):
        ivs = []
        for seg, onset in sorted(zip(segs, onsets), key=lambda p: p[1]):
            start = int(round(onset * sr))
            stop = min(start + len(seg.samples), n_samples)
            mix[start:stop] += seg.samples[: stop - start]
            ivs.append((onset, min(round(onset + seg.duration, 2), config.clip_length)))
            placements.append((cls.name, seg.segment_id, start))
        entries[cls.name] = ivs
    peak = float(np.max(np.abs(mix)))
    gain = config.peak / peak if peak > config.peak else 1.0
    audio = dsp.quantize(mix * gain)
    schedule = EventSchedule(config.clip_length, entries)
    ts, fq = annotate(schedule)
    return ScenePair(audio, schedule, ts, fq, int(seed), gain, placements)


def schedule_record(schedule: EventSchedule) -> dict:
    return {
        "clip_length": schedule.clip_length,
        # a list keeps caption order under sort_keys serialization
        "events": [{"event": name, "onsets": [a for a, _ in ivs], "offsets": [b for _, b in ivs]}
                   for name, ivs in schedule.entries.items()],
    }


def schedule_from_record(rec: dict) -> EventSchedule:
    return EventSchedule(rec["clip_length"], {
        ev["event"]: list(zip(ev["onsets"], ev["offsets"])) for ev in rec["events"]})


def read_manifest(path: str | Path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_manifest(path: str | Path, records: list[dict]) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def simulate_dataset(bank: Bank, config: SimConfig, out_dir: str | Path, jobs: int = 1) -> dict:
    """Write ``<split>.jsonl`` manifests, ``wavs/<split>/*.wav`` and ``summary.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"manifest_version": MANIFEST_VERSION, "splits": {}, "skipped": [],
               "config": _config_record(config)}
    for split_index, (split, size) in enumerate(zip(SPLITS, config.split_sizes)):
        rng_range = config.events_per_clip[split]

        def make(i, split_index=split_index, rng_range=rng_range):
            seed = dsp.derive_seed(config.master_seed, split_index, i)
            try:
                return i, seed, simulate_scene(bank, config, seed, rng_range)
            except SimulationError as exc:
                log.warning("skipping %s clip %d: %s", split, i, exc)
                return i, seed, None

        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            results = list(pool.map(make, range(size)))
        records = []
        for i, seed, pair in results:
            if pair is None:
                summary["skipped"].append({"split": split, "index": i, "seed": seed})
                continue
            rel = f"wavs/{split}/{split}_{i:05d}.wav"
            dsp.write_wav(out / rel, pair.audio, config.sample_rate)
            records.append({
                "manifest_version": MANIFEST_VERSION,
                "id": f"{split}_{i:05d}",
                "split": split,
                "wav": rel,
                "timestamp_caption": pair.timestamp_caption,
                "frequency_caption": pair.frequency_caption,
                "schedule": schedule_record(pair.schedule),
                "seed": seed,
            })
        write_manifest(out / f"{split}.jsonl", records)
        summary["splits"][split] = len(records)
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def _config_record(config: SimConfig) -> dict:
    rec = asdict(config)
    rec["events_per_clip"] = {k: list(v) for k, v in config.events_per_clip.items()}
    rec["occurrence_weights"] = list(config.occurrence_weights)
    rec["split_sizes"] = list(config.split_sizes)
    return rec
