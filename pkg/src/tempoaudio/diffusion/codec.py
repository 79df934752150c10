"""Analytic audio <-> latent codec.

Latent frame layout (40 ms frames): one channel per class holding the scaled
log in-band energy, followed by two broadband channels (log total energy and
log energy outside every class band). Decoding drives one band-limited noise
carrier per class with the per-frame envelope; broadband channels are not
rendered.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .. import dsp
from ..bank import EventClass, validate_classes

ENERGY_FLOOR = 1e-7
LOG_OFFSET = 4.5
LOG_SCALE = 2.5
CARRIER_SEED = 12345


@dataclass
class LatentSequence:
    data: np.ndarray  # (frames, channels)
    frame_resolution: float = dsp.FRAME_SECONDS

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError("latent must be 2-D (frames, channels)")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent has non-finite entries")

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


def energy_to_latent(e: np.ndarray) -> np.ndarray:
    return (np.log10(e + ENERGY_FLOOR) + LOG_OFFSET) / LOG_SCALE


def latent_to_energy(z: np.ndarray) -> np.ndarray:
    return np.maximum(10.0 ** (LOG_SCALE * z - LOG_OFFSET) - ENERGY_FLOOR, 0.0)


LOG_FLOOR_LATENT = float(energy_to_latent(np.array(0.0)))


def toy_encode(audio: np.ndarray, classes: Sequence[EventClass], sample_rate: int = dsp.SAMPLE_RATE,
               frame: float = dsp.FRAME_SECONDS) -> LatentSequence:
    validate_classes(classes)
    hop = dsp.frame_hop(sample_rate, frame)
    power = dsp.power_frames(audio, hop)
    freqs = dsp.fft_freqs(hop, sample_rate)
    bands = dsp.band_energies(power, freqs, [c.band for c in classes])
    total = power.sum(axis=1)
    residual = np.maximum(total - bands.sum(axis=1), 0.0)
    e = np.column_stack([bands, total, residual])
    return LatentSequence(energy_to_latent(e), frame)


def toy_decode(latent: LatentSequence, classes: Sequence[EventClass], sample_rate: int = dsp.SAMPLE_RATE,
               n_samples: int | None = None) -> np.ndarray:
    validate_classes(classes)
    hop = dsp.frame_hop(sample_rate, latent.frame_resolution)
    T = latent.frames
    n = n_samples if n_samples is not None else T * hop
    centers = (np.arange(T) + 0.5) * hop
    t = np.arange(n)
    out = np.zeros(n)
    for j, cls in enumerate(classes):
        amp = np.sqrt(latent_to_energy(latent.data[:, j]))
        if not np.any(amp > 0):
            continue
        env = np.interp(t, centers, amp)
        rng = np.random.default_rng([CARRIER_SEED, cls.id])
        out += env * dsp.bandlimited_noise(n, *cls.carrier_band, rng, sample_rate)
    peak = float(np.max(np.abs(out))) if n else 0.0
    if peak > 0.99:
        out *= 0.99 / peak
    return out


def align_matrix(onehot: np.ndarray, frames: int) -> np.ndarray:
    """Max-pool a ``(C, T)`` timestamp matrix onto ``frames`` latent frames (identity when equal)."""
    C, T = onehot.shape
    if T == frames:
        return onehot.astype(np.float64)
    if frames > T:
        raise ValueError("latent has more frames than the timestamp matrix")
    edges = np.linspace(0, T, frames + 1)
    out = np.zeros((C, frames))
    for k in range(frames):
        a, b = int(np.floor(edges[k])), int(np.ceil(edges[k + 1]))
        out[:, k] = onehot[:, a:max(b, a + 1)].max(axis=1)
    return out
