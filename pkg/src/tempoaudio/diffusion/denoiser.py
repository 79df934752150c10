"""Per-frame noise-prediction network with exact backpropagation.

Each latent frame is concatenated with its column of the timestamp matrix and
passed through a small MLP. Hidden layers are modulated feature-wise
(``h * (1 + g) + s``) by a clip-level conditioning vector made of the pooled
event embedding and a sinusoidal embedding of the diffusion step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_SCHEMA = "tempoaudio.denoiser/1"
TIME_DIM = 16


def silu(x):
    return x / (1.0 + np.exp(-x))


def silu_grad(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 + x * (1.0 - s))


def step_embedding(n: np.ndarray, steps: int, dim: int = TIME_DIM) -> np.ndarray:
    """Sinusoidal features of ``n / steps``; shape ``(len(n), dim)``."""
    t = np.asarray(n, dtype=np.float64)[:, None] / steps
    freqs = np.pi * 2.0 ** np.arange(dim // 2)[None, :] / 2
    return np.concatenate([np.sin(t * freqs), np.cos(t * freqs)], axis=1)


@dataclass
class DenoiserParams:
    latent_dim: int
    num_classes: int
    hidden: tuple[int, ...] = (64, 64)
    embed_dim: int = 16
    steps: int = 50
    weights: dict[str, np.ndarray] = field(default_factory=dict)
    trained_steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def cond_dim(self) -> int:
        return self.embed_dim + TIME_DIM

    @property
    def trained(self) -> bool:
        return self.trained_steps > 0

    @classmethod
    def init(cls, latent_dim: int, num_classes: int, hidden: Sequence[int] = (64, 64), embed_dim: int = 16,
             steps: int = 50, seed: int = 0) -> "DenoiserParams":
        rng = np.random.default_rng(seed)
        p = cls(latent_dim, num_classes, tuple(hidden), embed_dim, steps)
        sizes = [latent_dim + num_classes, *hidden, latent_dim]
        w = {"embed": rng.normal(0.0, 1.0, (num_classes, embed_dim))}
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:]), start=1):
            scale = np.sqrt(2.0 / fan_in) if i < len(sizes) - 1 else 0.1 / np.sqrt(fan_in)
            w[f"W{i}"] = rng.normal(0.0, scale, (fan_in, fan_out))
            w[f"b{i}"] = np.zeros(fan_out)
            if i < len(sizes) - 1:
                for kind in ("g", "s"):
                    w[f"{kind}W{i}"] = rng.normal(0.0, 0.1 / np.sqrt(p.cond_dim), (p.cond_dim, fan_out))
                    w[f"{kind}b{i}"] = np.zeros(fan_out)
        p.weights = w
        return p

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.latent_dim, self.num_classes, self.hidden, self.embed_dim, self.steps,
                              {k: v.copy() for k, v in self.weights.items()}, self.trained_steps, dict(self.meta))

    # --- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema": CHECKPOINT_SCHEMA,
            "latent_dim": self.latent_dim,
            "num_classes": self.num_classes,
            "hidden": list(self.hidden),
            "embed_dim": self.embed_dim,
            "steps": self.steps,
            "trained_steps": self.trained_steps,
            "meta": self.meta,
            "weights": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                        for k, v in sorted(self.weights.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DenoiserParams":
        if d.get("schema") != CHECKPOINT_SCHEMA:
            raise ValueError(f"unsupported checkpoint schema {d.get('schema')!r}")
        weights = {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in d["weights"].items()}
        return cls(d["latent_dim"], d["num_classes"], tuple(d["hidden"]), d["embed_dim"], d["steps"],
                   weights, d["trained_steps"], d.get("meta", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "DenoiserParams":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, DenoiserParams):
            return NotImplemented
        return ((self.latent_dim, self.num_classes, self.hidden, self.embed_dim, self.steps, self.trained_steps)
                == (other.latent_dim, other.num_classes, other.hidden, other.embed_dim, other.steps, other.trained_steps)
                and self.weights.keys() == other.weights.keys()
                and all(np.array_equal(self.weights[k], other.weights[k]) for k in self.weights))


def pool_embedding(params: DenoiserParams, class_sets: Sequence[Sequence[int]]) -> np.ndarray:
    """Mean embedding of each clip's active classes; an empty set gives the zero (unconditional) vector."""
    table = params.weights["embed"]
    out = np.zeros((len(class_sets), params.embed_dim))
    for i, ids in enumerate(class_sets):
        if len(ids):
            out[i] = table[list(ids)].mean(axis=0)
    return out


class Denoiser:
    """Forward/backward for a batch of ``B`` clips with ``T`` frames each."""

    def __init__(self, params: DenoiserParams):
        self.p = params
        self.n_layers = len(params.hidden) + 1

    def forward(self, latent: np.ndarray, onehot: np.ndarray, class_sets: Sequence[Sequence[int]],
                n: np.ndarray, keep_cache: bool = False):
        """``latent (B,T,D)``, ``onehot (B,T,C)``, step ``n (B,)`` -> noise estimate ``(B,T,D)``."""
        w = self.p.weights
        B, T, D = latent.shape
        x = np.concatenate([latent, onehot], axis=2).reshape(B * T, -1)
        emb = pool_embedding(self.p, class_sets)
        cond = np.concatenate([emb, step_embedding(n, self.p.steps)], axis=1)
        cache = {"x": x, "cond": cond, "class_sets": class_sets, "B": B, "T": T, "layers": []}
        h = x
        for i in range(1, self.n_layers):
            a = h @ w[f"W{i}"] + w[f"b{i}"]
            g = cond @ w[f"gW{i}"] + w[f"gb{i}"]
            s = cond @ w[f"sW{i}"] + w[f"sb{i}"]
            a3 = a.reshape(B, T, -1)
            z = (a3 * (1.0 + g[:, None, :]) + s[:, None, :]).reshape(B * T, -1)
            cache["layers"].append((h, a3, g, z))
            h = silu(z)
        L = self.n_layers
        y = h @ w[f"W{L}"] + w[f"b{L}"]
        cache["h_last"] = h
        out = y.reshape(B, T, D)
        return (out, cache) if keep_cache else out

    def backward(self, dout: np.ndarray, cache) -> dict[str, np.ndarray]:
        w = self.p.weights
        B, T = cache["B"], cache["T"]
        L = self.n_layers
        dy = dout.reshape(B * T, -1)
        grads = {f"W{L}": cache["h_last"].T @ dy, f"b{L}": dy.sum(axis=0)}
        dh = dy @ w[f"W{L}"].T
        dcond = np.zeros_like(cache["cond"])
        cond = cache["cond"]
        for i in range(L - 1, 0, -1):
            h_in, a3, g, z = cache["layers"][i - 1]
            dz = (dh * silu_grad(z)).reshape(B, T, -1)
            dg = (dz * a3).sum(axis=1)
            ds = dz.sum(axis=1)
            da = (dz * (1.0 + g[:, None, :])).reshape(B * T, -1)
            grads[f"gW{i}"] = cond.T @ dg
            grads[f"gb{i}"] = dg.sum(axis=0)
            grads[f"sW{i}"] = cond.T @ ds
            grads[f"sb{i}"] = ds.sum(axis=0)
            dcond += dg @ w[f"gW{i}"].T + ds @ w[f"sW{i}"].T
            grads[f"W{i}"] = h_in.T @ da
            grads[f"b{i}"] = da.sum(axis=0)
            dh = da @ w[f"W{i}"].T
        demb = dcond[:, : self.p.embed_dim]
        gembed = np.zeros_like(w["embed"])
        for b, ids in enumerate(cache["class_sets"]):
            if len(ids):
                np.add.at(gembed, list(ids), demb[b] / len(ids))
        grads["embed"] = gembed
        return grads
