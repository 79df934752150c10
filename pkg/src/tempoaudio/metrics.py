"""Objective controllability and quality metrics.

* segment-based F1 (fixed-length segments, micro-averaged over classes),
* L1 occurrence-count error averaged over clips and classes,
* Frechet distance between Gaussian statistics of spectral features.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import dsp
from .bank import EventClass, builtin_classes
from .captions import CaptionError, EventSchedule, FrequencySpec, parse_frequency_caption
from .grounding import DetectionResult, DetectorParams, detect_events

log = logging.getLogger(__name__)

FEATURE_VERSION = 1
LOG_FLOOR = 1e-10


class MetricError(ValueError):
    pass


# --- segment F1 ------------------------------------------------------------

@dataclass(frozen=True)
class SegmentScore:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    segment_length: float = 1.0

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def __add__(self, other: "SegmentScore") -> "SegmentScore":
        return SegmentScore(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.segment_length)


def _as_intervals(obj, name: str) -> list[tuple[float, float]]:
    if isinstance(obj, DetectionResult):
        return obj.intervals(name)
    return list(obj.entries.get(name, []))


def _names(obj) -> list[str]:
    return list(obj.events) if isinstance(obj, DetectionResult) else list(obj.entries)


def _clip_length(obj) -> float:
    return obj.clip_length


def segment_activity(intervals: Sequence[tuple[float, float]], n_segments: int, segment_length: float) -> np.ndarray:
    active = np.zeros(n_segments, dtype=bool)
    for a, b in intervals:
        first = int(math.floor(a / segment_length + 1e-9))
        last = int(math.ceil(b / segment_length - 1e-9)) - 1
        active[max(first, 0):min(last, n_segments - 1) + 1] = True
    return active


def segment_f1(ref: EventSchedule, hyp: DetectionResult | EventSchedule, segment_length: float = 1.0,
               class_names: Sequence[str] | None = None) -> SegmentScore:
    """Segment-based TP/FP/FN; a segment is active for a class if any interval overlaps it."""
    if abs(_clip_length(ref) - _clip_length(hyp)) > 1e-6:
        raise MetricError(f"clip lengths differ: {_clip_length(ref)} vs {_clip_length(hyp)}")
    names = list(class_names) if class_names is not None else sorted(set(_names(ref)) | set(_names(hyp)))
    n_seg = int(math.ceil(ref.clip_length / segment_length - 1e-9))
    tp = fp = fn = 0
    for name in names:
        r = segment_activity(_as_intervals(ref, name), n_seg, segment_length)
        h = segment_activity(_as_intervals(hyp, name), n_seg, segment_length)
        tp += int(np.sum(r & h))
        fp += int(np.sum(h & ~r))
        fn += int(np.sum(r & ~h))
    return SegmentScore(tp, fp, fn, segment_length)


# --- L1 frequency error ----------------------------------------------------

def _counts(obj) -> Mapping[str, int]:
    if isinstance(obj, FrequencySpec):
        return obj.counts
    if isinstance(obj, DetectionResult):
        return {k: len(v) for k, v in obj.events.items()}
    if isinstance(obj, EventSchedule):
        return obj.counts()
    return obj


def freq_l1(specs: Sequence, detections: Sequence, class_names: Sequence[str] | None = None) -> float:
    """Mean |specified - detected| over clips and the full class universe.

    Classes absent from a caption count as specified 0.
    """
    if len(specs) != len(detections):
        raise MetricError(f"misaligned lists: {len(specs)} specs vs {len(detections)} detections")
    if not specs:
        raise MetricError("no samples")
    names = list(class_names) if class_names is not None else [c.name for c in builtin_classes()]
    total = 0
    for spec, det in zip(specs, detections):
        s, d = _counts(spec), _counts(det)
        total += sum(abs(s.get(c, 0) - d.get(c, 0)) for c in names)
    return total / (len(specs) * len(names))


# --- features & Frechet distance -------------------------------------------

def extract_features(audio: np.ndarray, classes: Sequence[EventClass] | None = None,
                     sample_rate: int = dsp.SAMPLE_RATE) -> np.ndarray:
    """Per 1 s window: log10 band energy per class, spectral centroid / Nyquist, flatness.

    Returns ``(floor(duration), len(classes) + 2)``.
    """
    classes = list(classes or builtin_classes())
    audio = np.asarray(audio, dtype=np.float64)
    n_win = len(audio) // sample_rate
    if n_win < 1:
        raise MetricError("audio shorter than one 1 s window")
    frames = audio[: n_win * sample_rate].reshape(n_win, sample_rate)
    window = np.hanning(sample_rate + 1)[:-1]
    power = np.abs(np.fft.rfft(frames * window, axis=1)) ** 2
    power[:, 1:-1] *= 2.0
    power /= sample_rate * np.sum(window**2)
    freqs = np.fft.rfftfreq(sample_rate, 1.0 / sample_rate)
    bands = dsp.band_energies(power, freqs, [c.band for c in classes])
    total = power.sum(axis=1)
    safe = np.where(total > 0, total, 1.0)
    centroid = np.where(total > 0, (power @ freqs) / safe / (sample_rate / 2), 0.0)
    geo = np.exp(np.mean(np.log(power + 1e-30), axis=1))
    flatness = np.where(total > 0, geo / (safe / power.shape[1]), 0.0)
    return np.column_stack([np.log10(bands + LOG_FLOOR), centroid, flatness])


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    covariance: np.ndarray
    count: int

    @classmethod
    def from_features(cls, features: np.ndarray) -> "GaussianStats":
        return StatsAccumulator.of(features).finalize()


@dataclass
class StatsAccumulator:
    """(count, sum, outer-product sum) partials; merging is associative."""

    count: int = 0
    total: np.ndarray | None = None
    outer: np.ndarray | None = None

    @classmethod
    def of(cls, features: np.ndarray) -> "StatsAccumulator":
        x = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return cls(x.shape[0], x.sum(axis=0), x.T @ x)

    def merge(self, other: "StatsAccumulator") -> "StatsAccumulator":
        if self.total is None:
            return StatsAccumulator(other.count, other.total, other.outer)
        if other.total is None:
            return StatsAccumulator(self.count, self.total, self.outer)
        return StatsAccumulator(self.count + other.count, self.total + other.total, self.outer + other.outer)

    def finalize(self) -> GaussianStats:
        if self.total is None or self.count < 2:
            raise MetricError("need at least 2 samples for covariance")
        mu = self.total / self.count
        cov = (self.outer - self.count * np.outer(mu, mu)) / (self.count - 1)
        cov = 0.5 * (cov + cov.T)
        w, v = np.linalg.eigh(cov)
        if w.min() < 0:
            cov = (v * np.clip(w, 0.0, None)) @ v.T
            cov = 0.5 * (cov + cov.T)
        return GaussianStats(mu, cov, self.count)


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared Frechet distance between two Gaussians.

    The cross term uses the eigenvalues of ``sqrt(Sa) Sb sqrt(Sa)``, which is
    symmetric PSD and has the same trace-sqrt as ``Sa Sb``.
    """
    d = a.mean.shape[0]
    if b.mean.shape[0] != d:
        raise MetricError(f"dimension mismatch: {d} vs {b.mean.shape[0]}")
    for s in (a, b):
        if s.count < d + 1:
            raise MetricError(f"need at least {d + 1} samples, got {s.count}")
    root_a = _psd_sqrt(a.covariance)
    inner = root_a @ b.covariance @ root_a
    eig = np.clip(np.linalg.eigvalsh(0.5 * (inner + inner.T)), 0.0, None)
    diff = a.mean - b.mean
    d2 = float(diff @ diff + np.trace(a.covariance) + np.trace(b.covariance) - 2.0 * np.sum(np.sqrt(eig)))
    return max(d2, 0.0)


# --- system evaluation -----------------------------------------------------

REPORT_FIELDS = ["system", "task", "split", "n_clips", "f1_segment", "l1_freq", "frechet", "missing"]


@dataclass
class EvalRow:
    system: str
    task: str
    split: str
    n_clips: int
    f1_segment: float | None
    l1_freq: float | None
    frechet: float | None
    missing: int = 0


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)
    details: list[dict] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)

    @property
    def partial(self) -> bool:
        return bool(self.missing)

    def has_nan(self) -> bool:
        for r in self.rows:
            for v in (r.f1_segment, r.l1_freq, r.frechet):
                if v is not None and not math.isfinite(v):
                    return True
        return False

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(REPORT_FIELDS)
            for r in self.rows:
                w.writerow([r.system, r.task, r.split, r.n_clips, _fmt(r.f1_segment),
                            _fmt(r.l1_freq), _fmt(r.frechet), r.missing])

    def write_details(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps({"clips": self.details, "missing": self.missing},
                                         indent=1, sort_keys=True) + "\n")


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.6f}"


def read_report_csv(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def evaluate_system(manifest: str | Path, audio_dir: str | Path, classes: Sequence[EventClass] | None = None,
                    params: DetectorParams | None = None, segment_length: float = 1.0,
                    system: str = "system", task: str = "timestamp", jobs: int = 1) -> EvalReport:
    """Score generated clips ``<audio_dir>/<record id>.wav`` against a manifest.

    The Frechet reference set is the audio referenced by the manifest itself;
    it is skipped (left empty) when that audio is absent or too short.
    """
    from .simulate import read_manifest, schedule_from_record

    classes = list(classes or builtin_classes())
    names = [c.name for c in classes]
    manifest = Path(manifest)
    records = read_manifest(manifest)
    report = EvalReport()

    def score(rec):
        path = Path(audio_dir) / f"{rec['id']}.wav"
        if not path.exists():
            return rec, None, None, None
        audio, sr = dsp.read_wav(path)
        det = detect_events(audio, classes, params, sr)
        feats = extract_features(audio, classes, sr) if len(audio) >= sr else None
        ref_path = manifest.parent / rec["wav"] if rec.get("wav") else None
        ref_feats = None
        if ref_path is not None and ref_path.exists():
            ref_audio, rsr = dsp.read_wav(ref_path)
            if len(ref_audio) >= rsr:
                ref_feats = extract_features(ref_audio, classes, rsr)
        return rec, det, feats, ref_feats

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        scored = list(pool.map(score, records))

    by_split: dict[str, list] = {}
    for rec, det, feats, ref_feats in scored:
        if det is None:
            report.missing.append(f"{rec['id']}.wav")
        by_split.setdefault(rec.get("split", "all"), []).append((rec, det, feats, ref_feats))

    for split, items in by_split.items():
        present = [it for it in items if it[1] is not None]
        seg = SegmentScore(segment_length=segment_length)
        specs, dets = [], []
        gen_acc, ref_acc = StatsAccumulator(), StatsAccumulator()
        ref_complete = True
        for rec, det, feats, ref_feats in present:
            sched = schedule_from_record(rec["schedule"])
            clip_score = segment_f1(sched, DetectionResult(det.events, det.frame_resolution, sched.clip_length),
                                    segment_length, names)
            seg = seg + clip_score
            try:
                spec = parse_frequency_caption(rec["frequency_caption"], names) if rec.get("frequency_caption") \
                    else FrequencySpec(sched.counts())
            except CaptionError:
                spec = FrequencySpec(sched.counts())
            specs.append(spec)
            dets.append(det)
            if feats is not None:
                gen_acc = gen_acc.merge(StatsAccumulator.of(feats))
            if ref_feats is None:
                ref_complete = False
            else:
                ref_acc = ref_acc.merge(StatsAccumulator.of(ref_feats))
            report.details.append({
                "id": rec["id"], "split": split, "detections": det.to_dict(),
                "f1_segment": clip_score.f1, "tp": clip_score.tp, "fp": clip_score.fp, "fn": clip_score.fn,
            })
        frechet = None
        if present and ref_complete:
            try:
                frechet = frechet_distance(gen_acc.finalize(), ref_acc.finalize())
            except MetricError as exc:
                log.info("Frechet score skipped for %s: %s", split, exc)
        report.rows.append(EvalRow(
            system, task, split, len(present),
            seg.f1 if present else None,
            freq_l1(specs, dets, names) if present else None,
            frechet, len(items) - len(present),
        ))
    return report
