"""Noise schedule, closed-form forward noising, and the ancestral reverse step."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MIN_SNR_GAMMA = 5.0


class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Arrays indexed by step ``n = 1..N`` at position ``n - 1``."""

    beta: np.ndarray

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=np.float64)
        object.__setattr__(self, "beta", beta)
        if beta.ndim != 1 or len(beta) < 1:
            raise ScheduleError("beta must be a non-empty 1-D array")
        if not (np.all(beta > 0) and np.all(beta < 1)):
            raise ScheduleError("beta values must lie in (0, 1)")
        if np.any(np.diff(beta) <= 0):
            raise ScheduleError("beta must be strictly increasing")

    @property
    def steps(self) -> int:
        return len(self.beta)

    @property
    def alpha(self) -> np.ndarray:
        return 1.0 - self.beta

    @property
    def alpha_bar(self) -> np.ndarray:
        return np.cumprod(self.alpha)

    @property
    def tau_bar(self) -> np.ndarray:
        return 1.0 - self.alpha_bar

    def snr(self) -> np.ndarray:
        ab = self.alpha_bar
        return ab / (1.0 - ab)

    def loss_weight(self, gamma: float = MIN_SNR_GAMMA) -> np.ndarray:
        """Min-SNR weights ``min(SNR, gamma) / SNR`` per step."""
        s = self.snr()
        return np.minimum(s, gamma) / s

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return cls(np.asarray(d["beta"], dtype=np.float64))


def make_schedule(steps: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linearly spaced betas.

    Warns (does not fail) when the chain does not end near pure noise,
    i.e. when the final cumulative alpha exceeds 0.01.
    """
    if steps < 2:
        raise ScheduleError("need at least 2 steps")
    if not 0 < beta_start < beta_end < 1:
        raise ScheduleError(f"need 0 < beta_start < beta_end < 1, got {beta_start}, {beta_end}")
    sched = NoiseSchedule(np.linspace(beta_start, beta_end, steps))
    if sched.alpha_bar[-1] > 0.01:
        log.warning("final alpha_bar %.4f > 0.01; terminal state is not close to Gaussian",
                    sched.alpha_bar[-1])
    return sched


def _check_step(n: int, schedule: NoiseSchedule):
    if not 1 <= n <= schedule.steps:
        raise ScheduleError(f"step {n} outside 1..{schedule.steps}")


def forward_marginal(p0: np.ndarray, n: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    _check_step(n, schedule)
    p0 = np.asarray(p0, dtype=np.float64)
    eps = np.asarray(eps, dtype=np.float64)
    if p0.shape != eps.shape:
        raise ScheduleError(f"shape mismatch {p0.shape} vs {eps.shape}")
    ab = schedule.alpha_bar[n - 1]
    return np.sqrt(ab) * p0 + np.sqrt(1.0 - ab) * eps


def forward_step(p_prev: np.ndarray, n: int, z: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    """One Markov noising transition from step ``n - 1`` to ``n``."""
    _check_step(n, schedule)
    b = schedule.beta[n - 1]
    return np.sqrt(1.0 - b) * p_prev + np.sqrt(b) * z


def reverse_coefficients(n: int, schedule: NoiseSchedule) -> tuple[float, float, float]:
    """``(1/sqrt(alpha_n), beta_n/sqrt(tau_n), sqrt(tau_{n-1}/tau_n * beta_n))``.

    The noise coefficient is 0 at ``n = 1`` (``tau_0 = 0``).
    """
    _check_step(n, schedule)
    i = n - 1
    beta = schedule.beta[i]
    tau = schedule.tau_bar[i]
    tau_prev = schedule.tau_bar[i - 1] if n > 1 else 0.0
    return 1.0 / np.sqrt(schedule.alpha[i]), beta / np.sqrt(tau), float(np.sqrt(tau_prev / tau * beta))


def reverse_step(p_n: np.ndarray, n: int, eps_hat: np.ndarray, schedule: NoiseSchedule,
                 eps_draw: np.ndarray | None = None) -> np.ndarray:
    """Denoise from step ``n`` to ``n - 1`` given a noise estimate."""
    p_n = np.asarray(p_n, dtype=np.float64)
    if np.shape(eps_hat) != p_n.shape:
        raise ScheduleError(f"shape mismatch {np.shape(eps_hat)} vs {p_n.shape}")
    c_in, c_eps, c_noise = reverse_coefficients(n, schedule)
    out = c_in * (p_n - c_eps * eps_hat)
    if eps_draw is not None and c_noise > 0:
        if np.shape(eps_draw) != p_n.shape:
            raise ScheduleError("noise draw shape mismatch")
        out = out + c_noise * eps_draw
    return out
