"""SNR-weighted noise-prediction loss and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import dsp
from ..bank import EventClass
from ..captions import schedule_to_matrix
from .codec import align_matrix, toy_encode
from .denoiser import Denoiser, DenoiserParams
from .schedule import MIN_SNR_GAMMA, NoiseSchedule, forward_marginal, make_schedule

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, message: str, last_good: DenoiserParams):
        self.last_good = last_good
        super().__init__(message)


@dataclass
class TrainConfig:
    steps: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.2
    epochs: int = 40
    batch_size: int = 16
    # raised from the full-scale 3e-5: the toy network is tiny and trained for few steps
    lr: float = 2e-3
    weight_decay: float = 1e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    cond_dropout: float = 0.1
    use_timestamp: bool = True
    snr_gamma: float = MIN_SNR_GAMMA
    hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = 16
    seed: int = 0
    keep_checkpoints: int = 2

    def schedule(self) -> NoiseSchedule:
        return make_schedule(self.steps, self.beta_start, self.beta_end)


@dataclass
class EncodedDataset:
    latents: np.ndarray  # (M, T, D)
    onehots: np.ndarray  # (M, T, C)
    class_sets: list[tuple[int, ...]]

    def __len__(self):
        return len(self.class_sets)


def encode_records(records: Sequence[dict], base_dir: str | Path, classes: Sequence[EventClass],
                   resolution: float = dsp.FRAME_SECONDS) -> EncodedDataset:
    from ..simulate import schedule_from_record

    names = [c.name for c in classes]
    latents, onehots, sets = [], [], []
    for rec in records:
        audio, sr = dsp.read_wav(Path(base_dir) / rec["wav"])
        lat = toy_encode(audio, classes, sr, resolution)
        sched = schedule_from_record(rec["schedule"])
        mat = schedule_to_matrix(sched, names, resolution)
        latents.append(lat.data)
        onehots.append(align_matrix(mat.data, lat.frames).T)
        sets.append(tuple(sorted(names.index(e) for e in sched.entries)))
    if not latents:
        raise TrainingError("empty dataset")
    return EncodedDataset(np.stack(latents), np.stack(onehots), sets)


def diffusion_loss(p0: np.ndarray, onehot: np.ndarray, class_sets: Sequence[Sequence[int]],
                   params: DenoiserParams | None, schedule: NoiseSchedule, rng: np.random.Generator,
                   gamma: float = MIN_SNR_GAMMA, predictor: Callable | None = None,
                   n: np.ndarray | None = None, eps: np.ndarray | None = None):
    """Min-SNR weighted mean squared noise error over a batch ``(B, T, D)``.

    Per clip the loss is ``w_n * mean((eps - eps_hat)**2)`` with
    ``w_n = min(SNR_n, gamma) / SNR_n``; the batch loss is the mean over clips.
    Returns ``(loss, grads)``; ``grads`` is None when ``predictor`` replaces the
    network.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    B = p0.shape[0]
    if onehot.shape[:2] != p0.shape[:2]:
        raise TrainingError(f"shape mismatch: latent {p0.shape} vs timestamp {onehot.shape}")
    if n is None:
        n = rng.integers(1, schedule.steps + 1, size=B)
    if eps is None:
        eps = rng.standard_normal(p0.shape)
    p_n = np.stack([forward_marginal(p0[b], int(n[b]), eps[b], schedule) for b in range(B)])
    weight = schedule.loss_weight(gamma)[np.asarray(n) - 1]
    if predictor is not None:
        eps_hat = predictor(p_n, onehot, class_sets, n)
        cache = None
    else:
        eps_hat, cache = Denoiser(params).forward(p_n, onehot, class_sets, n, keep_cache=True)
    err = eps - eps_hat
    per_clip = np.mean(err**2, axis=(1, 2))
    loss = float(np.mean(weight * per_clip))
    if not math.isfinite(loss):
        raise TrainingError("non-finite loss")
    if cache is None:
        return loss, None
    d_out = -2.0 * err * (weight[:, None, None] / (B * err.shape[1] * err.shape[2]))
    return loss, Denoiser(params).backward(d_out, cache)


def _adamw(params: DenoiserParams, grads, state, lr, cfg: TrainConfig):
    b1, b2 = cfg.adam_betas
    state["t"] += 1
    t = state["t"]
    for k, g in grads.items():
        m = state["m"].setdefault(k, np.zeros_like(g))
        v = state["v"].setdefault(k, np.zeros_like(g))
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        w = params.weights[k]
        w -= lr * (mhat / (np.sqrt(vhat) + 1e-8) + cfg.weight_decay * w)


def train(data: EncodedDataset, config: TrainConfig, checkpoint_dir: str | Path | None = None,
          class_names: Sequence[str] = ()) -> tuple[DenoiserParams, list[dict]]:
    """Train a denoiser; returns ``(params, log rows)``.

    Deterministic given ``config.seed``. With ``checkpoint_dir`` a checkpoint
    is written after every epoch (older ones pruned) plus ``train_log.csv``.
    """
    if len(data) == 0:
        raise TrainingError("empty dataset")
    schedule = config.schedule()
    M, T, D = data.latents.shape
    C = data.onehots.shape[2]
    params = DenoiserParams.init(D, C, config.hidden, config.embed_dim, config.steps, seed=config.seed)
    params.meta = {
        "use_timestamp": config.use_timestamp,
        "schedule": schedule.to_dict(),
        "class_names": list(class_names),
        "frame_resolution": dsp.FRAME_SECONDS,
        "train_config": _config_record(config),
    }
    rows: list[dict] = []
    if config.epochs == 0:
        return params, rows
    rng = np.random.default_rng([config.seed, 1])
    per_epoch = int(math.ceil(M / config.batch_size))
    total = config.epochs * per_epoch
    state = {"t": 0, "m": {}, "v": {}}
    ckpt = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt:
        ckpt.mkdir(parents=True, exist_ok=True)
    last_good = params.copy()
    step = 0
    for epoch in range(1, config.epochs + 1):
        perm = rng.permutation(M)
        losses = []
        for start in range(0, M, config.batch_size):
            idx = perm[start:start + config.batch_size]
            onehot = data.onehots[idx].copy() if config.use_timestamp else np.zeros((len(idx), T, C))
            sets = [data.class_sets[i] for i in idx]
            drop = rng.random(len(idx)) < config.cond_dropout
            onehot[drop] = 0.0
            sets = [() if d else s for d, s in zip(drop, sets)]
            lr = config.lr * (1.0 - step / total)
            try:
                loss, grads = diffusion_loss(data.latents[idx], onehot, sets, params, schedule, rng,
                                             config.snr_gamma)
            except TrainingError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", last_good) from exc
            _adamw(params, grads, state, lr, config)
            if not all(np.all(np.isfinite(w)) for w in params.weights.values()):
                raise TrainingDiverged(f"epoch {epoch}: non-finite weights", last_good)
            losses.append(loss)
            step += 1
        params.trained_steps = step
        last_good = params.copy()
        rows.append({"epoch": epoch, "loss": float(np.mean(losses)), "lr": config.lr * (1.0 - step / total)})
        log.info("epoch %d loss %.5f", epoch, rows[-1]["loss"])
        if ckpt:
            params.save(ckpt / f"epoch_{epoch:03d}.json")
            stale = ckpt / f"epoch_{epoch - config.keep_checkpoints:03d}.json"
            if stale.exists():
                stale.unlink()
            write_log(ckpt / "train_log.csv", rows)
    return params, rows


def write_log(path: str | Path, rows: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "lr"])
        for r in rows:
            w.writerow([r["epoch"], repr(r["loss"]), repr(r["lr"])])


def _config_record(cfg: TrainConfig) -> dict:
    rec = asdict(cfg)
    rec["hidden"] = list(cfg.hidden)
    rec["adam_betas"] = list(cfg.adam_betas)
    return rec
