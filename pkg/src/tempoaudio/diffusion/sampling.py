"""Classifier-free guided ancestral sampling."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import dsp
from ..bank import EventClass
from ..captions import EventSchedule, schedule_to_matrix
from .codec import LatentSequence, align_matrix, toy_decode
from .denoiser import Denoiser, DenoiserParams
from .schedule import NoiseSchedule, reverse_step


class UntrainedModelError(RuntimeError):
    pass


def guided_noise(eps_cond: np.ndarray, eps_uncond: np.ndarray, scale: float) -> np.ndarray:
    return eps_uncond + scale * (eps_cond - eps_uncond)


def sample_batch(onehots: np.ndarray, class_sets: Sequence[Sequence[int]], params: DenoiserParams,
                 schedule: NoiseSchedule, guidance_scale: float = 3.0, seeds: Sequence[int] = (0,),
                 allow_untrained: bool = False) -> list[LatentSequence]:
    """Sample one latent per clip; clip ``b`` draws all its noise from ``seeds[b]``.

    ``onehots`` is ``(B, T, C)``. A model trained without the timestamp matrix
    ignores it here as well.
    """
    if not params.trained and not allow_untrained:
        raise UntrainedModelError("parameters are untrained; pass allow_untrained=True to sample anyway")
    onehots = np.asarray(onehots, dtype=np.float64)
    B, T, C = onehots.shape
    if len(seeds) != B or len(class_sets) != B:
        raise ValueError("need one seed and one class set per clip")
    if not params.meta.get("use_timestamp", True):
        onehots = np.zeros_like(onehots)
    net = Denoiser(params)
    rngs = [np.random.default_rng([int(s), 2]) for s in seeds]
    D = params.latent_dim
    x = np.stack([r.standard_normal((T, D)) for r in rngs])
    empty = [()] * B
    zeros = np.zeros_like(onehots)
    for n in range(schedule.steps, 0, -1):
        steps = np.full(B, n)
        eps_c = net.forward(x, onehots, class_sets, steps)
        if guidance_scale != 1.0:
            eps_u = net.forward(x, zeros, empty, steps)
            eps_hat = guided_noise(eps_c, eps_u, guidance_scale)
        else:
            eps_hat = eps_c
        draws = np.stack([r.standard_normal((T, D)) for r in rngs]) if n > 1 else None
        x = reverse_step(x, n, eps_hat, schedule, draws)
    return [LatentSequence(x[b]) for b in range(B)]


def sample(onehot: np.ndarray, class_ids: Sequence[int], params: DenoiserParams, schedule: NoiseSchedule,
           guidance_scale: float = 3.0, seed: int = 0, allow_untrained: bool = False) -> LatentSequence:
    """Sample a single latent from a ``(C, T)`` timestamp matrix."""
    return sample_batch(np.asarray(onehot, dtype=np.float64).T[None], [tuple(class_ids)], params, schedule,
                        guidance_scale, [seed], allow_untrained)[0]


def render_schedules(schedules: Sequence[EventSchedule], params: DenoiserParams, classes: Sequence[EventClass],
                     guidance_scale: float = 3.0, seeds: Sequence[int] = (0,),
                     sample_rate: int = dsp.SAMPLE_RATE, batch: int = 64) -> list[np.ndarray]:
    """Schedules -> timestamp matrices -> guided samples -> decoded waveforms."""
    names = params.meta.get("class_names") or [c.name for c in classes]
    schedule = NoiseSchedule.from_dict(params.meta["schedule"])
    onehots, sets = [], []
    for sched in schedules:
        mat = schedule_to_matrix(sched, names)
        onehots.append(align_matrix(mat.data, mat.data.shape[1]).T)
        sets.append(tuple(sorted(names.index(e) for e in sched.entries)))
    out = []
    for i in range(0, len(onehots), batch):
        lats = sample_batch(np.stack(onehots[i:i + batch]), sets[i:i + batch], params, schedule,
                            guidance_scale, list(seeds[i:i + batch]))
        for sched, lat in zip(schedules[i:i + batch], lats):
            out.append(toy_decode(lat, classes, sample_rate, int(round(sched.clip_length * sample_rate))))
    return out
