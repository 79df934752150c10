"""Band-energy event detector used for segmentation and for scoring generated audio.

Per class, the in-band energy of every 40 ms frame is compared with a
threshold built only from ratios of the clip's own energies, so detections do
not change when the whole clip is rescaled.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.ndimage import median_filter

from . import dsp
from .bank import EventClass, _runs, merge_runs


class DetectionError(ValueError):
    pass


@dataclass(frozen=True)
class DetectorParams:
    frame: float = dsp.FRAME_SECONDS
    threshold_factor: float = 4.0
    median_smooth: int = 3
    merge_gap: float = 0.3
    min_region: float = 0.08
    # noise floor = this percentile of the class's frame energies
    noise_percentile: float = 20.0
    # never threshold below this fraction of the loudest full-band frame
    global_floor: float = 10 ** (-30 / 10)
    # never threshold above this fraction of the class's own loudest frame
    class_ceiling: float = 10 ** (-25 / 10)

    def __post_init__(self):
        for name in ("frame", "threshold_factor", "median_smooth", "merge_gap", "min_region",
                     "noise_percentile", "global_floor", "class_ceiling"):
            if not getattr(self, name) > 0:
                raise ValueError(f"detector parameter {name} must be positive")


@dataclass
class DetectionResult:
    """Per-event ``(onset, offset, confidence)`` triples, sorted by onset."""

    events: dict[str, list[tuple[float, float, float]]] = field(default_factory=dict)
    frame_resolution: float = dsp.FRAME_SECONDS
    clip_length: float = 0.0

    def count(self, name: str) -> int:
        return len(self.events.get(name, []))

    def intervals(self, name: str) -> list[tuple[float, float]]:
        return [(a, b) for a, b, _ in self.events.get(name, [])]

    def to_dict(self) -> dict:
        return {
            "frame_resolution": self.frame_resolution,
            "clip_length": self.clip_length,
            "events": {k: [list(t) for t in v] for k, v in self.events.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def _class_energies(audio: np.ndarray, classes: Sequence[EventClass], sample_rate: int, hop: int):
    power = dsp.power_frames(audio, hop)
    freqs = dsp.fft_freqs(hop, sample_rate)
    return power, dsp.band_energies(power, freqs, [c.band for c in classes])


def frame_scores(audio: np.ndarray, cls: EventClass, sample_rate: int = dsp.SAMPLE_RATE,
                 frame: float = dsp.FRAME_SECONDS) -> np.ndarray:
    """In-band share of each frame's energy, in ``[0, 1]``.

    Frames far below the clip's loudest frame (around -60 dB) are pulled
    towards 0 so that dither and quantisation noise never score high.
    """
    audio = np.asarray(audio, dtype=np.float64)
    hop = dsp.frame_hop(sample_rate, frame)
    if len(audio) < hop:
        raise DetectionError("audio shorter than one frame")
    power, inband = _class_energies(audio, [cls], sample_rate, hop)
    total = power.sum(axis=1)
    eps = 1e-6 * float(total.max()) + 1e-20
    return np.clip(inband[:, 0] / (total + eps), 0.0, 1.0)


def _class_threshold(energy: np.ndarray, loudest_total: float, params: DetectorParams) -> float:
    floor = params.threshold_factor * float(np.percentile(energy, params.noise_percentile))
    capped = min(floor, params.class_ceiling * float(energy.max()))
    return max(capped, params.global_floor * loudest_total)


def detect_events(audio: np.ndarray, classes: Sequence[EventClass], params: DetectorParams | None = None,
                  sample_rate: int = dsp.SAMPLE_RATE) -> DetectionResult:
    params = params or DetectorParams()
    audio = np.asarray(audio, dtype=np.float64)
    hop = dsp.frame_hop(sample_rate, params.frame)
    if len(audio) < hop:
        raise DetectionError("audio shorter than one frame")
    power, energies = _class_energies(audio, classes, sample_rate, hop)
    total = power.sum(axis=1)
    loudest = float(total.max())
    clip_length = len(audio) / sample_rate
    result = DetectionResult({}, params.frame, clip_length)
    if loudest <= 0.0:
        return result
    ratio = energies / (total[:, None] + 1e-6 * loudest + 1e-20)
    gap = int(round(params.merge_gap / params.frame))
    min_len = params.min_region / params.frame - 1e-9
    for j, cls in enumerate(classes):
        e = energies[:, j]
        active = e > _class_threshold(e, loudest, params)
        if params.median_smooth > 1:
            active = median_filter(active.astype(np.uint8), size=params.median_smooth, mode="constant") > 0
        regions = [(a, b) for a, b in merge_runs(_runs(active), gap) if b - a >= min_len]
        if regions:
            result.events[cls.name] = [
                (round(a * params.frame, 6), round(min(b * params.frame, clip_length), 6),
                 float(np.mean(ratio[a:b, j])))
                for a, b in regions
            ]
    return result
