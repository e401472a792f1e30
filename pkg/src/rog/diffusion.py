"""DDPM noise schedules, the forward noising marginal, and the reverse step.

The denoisers in this codebase predict the clean sample directly, so the
reverse step is written in x0-prediction form with the small (beta-tilde)
posterior variance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class NoiseSchedule:
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.alpha_bar = np.asarray(self.alpha_bar, dtype=np.float64)
        if not (len(self.beta) == len(self.alpha) == len(self.alpha_bar)):
            raise ValueError("schedule arrays must share a length")
        if len(self.beta) < 2:
            raise ValueError("schedule needs at least 2 steps")
        if np.any(self.alpha <= 0) or np.any(self.alpha >= 1):
            raise ValueError("alpha values must lie strictly in (0, 1)")
        if np.any(np.diff(self.alpha_bar) >= 0):
            raise ValueError("alpha_bar must be strictly decreasing")

    @property
    def steps(self) -> int:
        return len(self.beta)

    def alpha_bar_at(self, t: int) -> float:
        """Cumulative product at step t, with the t=0 convention of 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bar[t - 1])

    def to_json_dict(self) -> dict:
        return {
            "kind": "linear",
            "steps": int(self.steps),
            "beta_start": float(self.beta[0]),
            "beta_end": float(self.beta[-1]),
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "NoiseSchedule":
        if payload.get("kind") != "linear":
            raise ValueError(f"unknown schedule kind {payload.get('kind')!r}")
        return make_linear_schedule(
            int(payload["steps"]), float(payload["beta_start"]), float(payload["beta_end"])
        )


def make_linear_schedule(steps: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Linearly spaced betas; alpha and the cumulative product derive from them."""
    if steps < 2:
        raise ValueError("steps must be >= 2")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("betas must satisfy 0 < beta_start <= beta_end < 1")
    beta = np.linspace(beta_start, beta_end, steps)
    alpha = 1.0 - beta
    return NoiseSchedule(beta=beta, alpha=alpha, alpha_bar=np.cumprod(alpha))


def _check_t(sched: NoiseSchedule, t: int) -> None:
    if not 1 <= t <= sched.steps:
        raise ValueError(f"step t={t} outside [1, {sched.steps}]")


def q_sample(x0, t: int, noise, sched: NoiseSchedule):
    """Forward marginal: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) noise."""
    _check_t(sched, t)
    x0 = np.asarray(x0)
    noise = np.asarray(noise)
    if x0.shape != noise.shape:
        raise ValueError(f"x0 and noise shapes differ: {x0.shape} vs {noise.shape}")
    abar = sched.alpha_bar[t - 1]
    return np.sqrt(abar) * x0 + np.sqrt(1.0 - abar) * noise


def posterior_coefficients(sched: NoiseSchedule, t: int):
    """x0 and x_t weights of the posterior mean, plus the beta-tilde variance."""
    _check_t(sched, t)
    abar_t = sched.alpha_bar[t - 1]
    abar_prev = sched.alpha_bar_at(t - 1)
    beta_t = sched.beta[t - 1]
    alpha_t = sched.alpha[t - 1]
    coef_x0 = np.sqrt(abar_prev) * beta_t / (1.0 - abar_t)
    coef_xt = np.sqrt(alpha_t) * (1.0 - abar_prev) / (1.0 - abar_t)
    var = (1.0 - abar_prev) / (1.0 - abar_t) * beta_t
    return coef_x0, coef_xt, var


def ddpm_reverse_step(x_t, predicted_x0, t: int, sched: NoiseSchedule, noise=None):
    """One reverse step from x_t to x_{t-1} given a clean-sample prediction.

    At t=1 the posterior mean is returned without noise; for t>1, ``noise``
    defaults to zeros, which gives the deterministic small-variance chain.
    """
    _check_t(sched, t)
    x_t = np.asarray(x_t)
    predicted_x0 = np.asarray(predicted_x0)
    coef_x0, coef_xt, var = posterior_coefficients(sched, t)
    mean = coef_x0 * predicted_x0 + coef_xt * x_t
    if t == 1:
        return mean
    if noise is None:
        return mean
    return mean + np.sqrt(var) * np.asarray(noise)
