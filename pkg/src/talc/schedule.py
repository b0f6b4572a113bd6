"""Variance-preserving DDPM noise schedule, forward noising and ancestral steps.

Timesteps are 1-based: ``tau`` runs over 1..T, and ``alpha[tau - 1]`` is the
signal coefficient at ``tau``. ``alpha`` here is the *cumulative* signal scale
sqrt(prod(1 - var_s)), so ``z_tau = alpha_tau * z + beta_tau * eps``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class NoiseSchedule:
    num_steps: int
    alpha: np.ndarray
    beta: np.ndarray
    step_var: np.ndarray
    # original training timesteps this schedule walks; identity unless respaced
    timesteps: np.ndarray
    beta_min: float = float("nan")
    beta_max: float = float("nan")
    kind: str = "linear"

    def _check(self, tau: int):
        if not 1 <= tau <= self.num_steps:
            raise IndexError(f"tau={tau} outside 1..{self.num_steps}")

    def signal(self, tau: int) -> float:
        self._check(tau)
        return float(self.alpha[tau - 1])

    def noise(self, tau: int) -> float:
        self._check(tau)
        return float(self.beta[tau - 1])

    def snr(self) -> np.ndarray:
        return self.alpha / self.beta

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "num_steps": self.num_steps,
            "beta_min": self.beta_min,
            "beta_max": self.beta_max,
            "timestep_base": 1,
        }


def from_step_variances(step_var, timesteps=None, **meta) -> NoiseSchedule:
    step_var = np.asarray(step_var, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - step_var)
    alpha = np.sqrt(alpha_bar)
    beta = np.sqrt(1.0 - alpha * alpha)
    if timesteps is None:
        timesteps = np.arange(1, len(step_var) + 1)
    return NoiseSchedule(len(step_var), alpha, beta, step_var, np.asarray(timesteps, dtype=np.int64), **meta)


def make_schedule(T: int = 1000, beta_min: float = 1e-4, beta_max: float = 2e-2) -> NoiseSchedule:
    """Linear per-step variance schedule from ``beta_min`` to ``beta_max``."""
    if T < 1 or not (0 < beta_min <= beta_max < 1):
        raise ConfigError(f"invalid schedule: T={T}, beta_min={beta_min}, beta_max={beta_max}")
    step_var = np.linspace(beta_min, beta_max, T) if T > 1 else np.array([beta_min])
    return from_step_variances(step_var, beta_min=float(beta_min), beta_max=float(beta_max))


def strided_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced subset of 1..T, always containing 1 and T."""
    if steps < 1:
        raise ConfigError("steps must be >= 1")
    if steps >= T:
        return np.arange(1, T + 1)
    if steps == 1:
        return np.array([T])
    return np.unique(np.round(np.linspace(1, T, steps)).astype(np.int64))


def respace(schedule: NoiseSchedule, steps: int) -> NoiseSchedule:
    """Schedule over a strided subset of timesteps with matching step variances.

    Step ``k`` of the result has the same cumulative signal level as training
    timestep ``timesteps[k - 1]``.
    """
    ts = strided_timesteps(schedule.num_steps, steps)
    alpha_bar = schedule.alpha[ts - 1] ** 2
    prev = np.concatenate([[1.0], alpha_bar[:-1]])
    step_var = 1.0 - alpha_bar / prev
    return from_step_variances(
        step_var, timesteps=schedule.timesteps[ts - 1],
        beta_min=schedule.beta_min, beta_max=schedule.beta_max, kind=schedule.kind,
    )


def add_noise(z: np.ndarray, tau: int, eps: np.ndarray, schedule: NoiseSchedule) -> np.ndarray:
    if z.shape != eps.shape:
        raise ValueError(f"noise shape {eps.shape} does not match {z.shape}")
    return schedule.signal(tau) * z + schedule.noise(tau) * eps


def ancestral_step(z_tau: np.ndarray, eps_hat: np.ndarray, tau: int, schedule: NoiseSchedule,
                   rng=None, noise: Optional[np.ndarray] = None, clip: Optional[float] = None) -> np.ndarray:
    """One DDPM reverse step from ``tau`` to ``tau - 1``.

    Uses the posterior q(z_{tau-1} | z_tau, z_0) with z_0 predicted from
    ``eps_hat`` and, if ``clip`` is given, clamped to [-clip, clip]. Fresh
    noise is drawn from ``rng`` (or taken from ``noise``) for ``tau > 1``;
    the final step ``tau == 1`` is deterministic.
    """
    schedule._check(tau)
    a_t = schedule.alpha[tau - 1]
    b_t = schedule.beta[tau - 1]
    z0_hat = (z_tau - b_t * eps_hat) / a_t
    if clip is not None:
        z0_hat = np.clip(z0_hat, -clip, clip)
    if tau == 1:
        return z0_hat
    a_prev = schedule.alpha[tau - 2]
    var_t = schedule.step_var[tau - 1]
    ab_t, ab_prev = a_t * a_t, a_prev * a_prev
    coef0 = a_prev * var_t / (1.0 - ab_t)
    coef_t = np.sqrt(1.0 - var_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef0 * z0_hat + coef_t * z_tau
    sigma = np.sqrt(var_t * (1.0 - ab_prev) / (1.0 - ab_t))
    if noise is None:
        noise = rng.normal(z_tau.shape) if rng is not None else np.zeros_like(z_tau)
    return mean + sigma * noise
