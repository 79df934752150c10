"""Desk-scale conditional diffusion over toy-codec latents."""

from .codec import LatentSequence, align_matrix, toy_decode, toy_encode
from .denoiser import Denoiser, DenoiserParams
from .sampling import render_schedules, sample, sample_batch
from .schedule import NoiseSchedule, forward_marginal, make_schedule, reverse_step
from .training import EncodedDataset, TrainConfig, diffusion_loss, encode_records, train

__all__ = [
    "Denoiser", "DenoiserParams", "EncodedDataset", "LatentSequence", "NoiseSchedule", "TrainConfig",
    "align_matrix", "diffusion_loss", "encode_records", "forward_marginal", "make_schedule",
    "render_schedules", "reverse_step", "sample", "sample_batch", "toy_decode", "toy_encode", "train",
]
