"""Shared signal-processing helpers.

Framing convention used everywhere in the package: frame ``t`` covers samples
``[t * hop, (t + 1) * hop)`` and is analysed with a Hann window of length
``2 * hop`` centred on the frame centre, so a clip of ``n`` samples yields
``ceil(n / hop)`` frames.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.io import wavfile

SAMPLE_RATE = 16000
FRAME_SECONDS = 0.04
PCM_SCALE = 32767.0

_MASK64 = (1 << 64) - 1


def frame_hop(sample_rate: int = SAMPLE_RATE, frame: float = FRAME_SECONDS) -> int:
    return int(round(sample_rate * frame))


def num_frames(n_samples: int, hop: int) -> int:
    return int(math.ceil(n_samples / hop))


def power_frames(audio: np.ndarray, hop: int) -> np.ndarray:
    """Per-frame one-sided power spectra, shape ``(frames, 2 * hop // 2 + 1)``.

    Powers are scaled so that summing a frame over all bins gives the
    window-compensated mean square of the signal around that frame.
    """
    audio = np.asarray(audio, dtype=np.float64)
    n_fft = 2 * hop
    n = num_frames(len(audio), hop)
    padded = np.zeros(n * hop + n_fft, dtype=np.float64)
    padded[hop // 2 : hop // 2 + len(audio)] = audio
    # frame t window starts at t*hop - hop/2 in original coordinates
    idx = np.arange(n)[:, None] * hop + np.arange(n_fft)[None, :]
    window = np.hanning(n_fft + 1)[:-1]
    spec = np.fft.rfft(padded[idx] * window, axis=1)
    power = np.abs(spec) ** 2
    power[:, 1:-1] *= 2.0
    return power / (n_fft * np.sum(window**2))


def fft_freqs(hop: int, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    return np.fft.rfftfreq(2 * hop, d=1.0 / sample_rate)


def band_mask(freqs: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return (freqs >= lo) & (freqs <= hi)


def band_energies(power: np.ndarray, freqs: np.ndarray, bands: Sequence[tuple[float, float]]) -> np.ndarray:
    """Sum power inside each ``(lo, hi)`` band. Returns ``(frames, len(bands))``."""
    masks = np.stack([band_mask(freqs, lo, hi) for lo, hi in bands], axis=1).astype(np.float64)
    return power @ masks


def bandlimited_noise(n: int, lo: float, hi: float, rng: np.random.Generator,
                      sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Unit-RMS Gaussian noise with all spectral content inside ``[lo, hi]`` Hz."""
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    mask = (freqs >= lo) & (freqs <= hi)
    spec = np.zeros(len(freqs), dtype=np.complex128)
    k = int(mask.sum())
    spec[mask] = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    x = np.fft.irfft(spec, n=n)
    rms = np.sqrt(np.mean(x**2))
    return x / rms if rms > 0 else x


def quantize(x: np.ndarray) -> np.ndarray:
    """Snap to the 16-bit PCM grid so WAV round-trips are exact."""
    return np.round(np.clip(x, -1.0, 1.0) * PCM_SCALE) / PCM_SCALE


def write_wav(path: str | Path, audio: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.round(np.clip(audio, -1.0, 1.0) * PCM_SCALE).astype(np.int16)
    wavfile.write(str(path), sample_rate, pcm)


def read_wav(path: str | Path) -> tuple[np.ndarray, int]:
    sr, data = wavfile.read(str(path))
    if data.ndim > 1:
        data = data.mean(axis=1)
    if data.dtype == np.int16:
        audio = data.astype(np.float64) / PCM_SCALE
    elif np.issubdtype(data.dtype, np.integer):
        audio = data.astype(np.float64) / float(np.iinfo(data.dtype).max)
    else:
        audio = data.astype(np.float64)
    return audio, int(sr)


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(master: int, *path: int) -> int:
    """Child seed from a master seed and an integer path, via chained splitmix64.

    ``derive_seed(m, split, index)`` is what each simulated clip uses, so clips
    can be generated in any order or in parallel with identical results.
    """
    s = splitmix64(int(master) & _MASK64)
    for p in path:
        s = splitmix64(s ^ (int(p) & _MASK64))
    return s >> 1  # keep it a non-negative int63 for numpy
