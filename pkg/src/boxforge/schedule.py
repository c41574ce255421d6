"""Per-step noise coefficients for the forward corruption and reverse chain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-ramp beta schedule with the derived cumulative products.

    ``betas[t-1]`` is the step-t variance increment; ``alphas_cumprod[t-1]``
    the cumulative product of (1 - beta) up to step t, strictly decreasing.
    Reverse-step noise uses ``posterior_sigmas = sqrt(betas)``.
    """

    num_steps: int
    beta_start: float
    beta_end: float
    betas: np.ndarray = field(repr=False)
    alphas_cumprod: np.ndarray = field(repr=False)
    posterior_sigmas: np.ndarray = field(repr=False)

    def alpha_cumprod(self, t: int) -> float:
        """Cumulative product at step t, with t=0 meaning the clean data."""
        if t == 0:
            return 1.0
        return float(self.alphas_cumprod[t - 1])

    def to_dict(self) -> dict:
        return {
            "num_steps": self.num_steps,
            "beta_start": self.beta_start,
            "beta_end": self.beta_end,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        return build_schedule(int(d["num_steps"]), float(d["beta_start"]), float(d["beta_end"]))


def build_schedule(num_steps: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> NoiseSchedule:
    """Build a linear beta ramp over ``num_steps`` steps.

    Requires 0 < beta_start <= beta_end < 1 and num_steps >= 1.
    """
    if num_steps < 1:
        raise ValueError(f"num_steps must be >= 1, got {num_steps}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alphas_cumprod = np.cumprod(1.0 - betas)
    return NoiseSchedule(
        num_steps=num_steps,
        beta_start=beta_start,
        beta_end=beta_end,
        betas=betas,
        alphas_cumprod=alphas_cumprod,
        posterior_sigmas=np.sqrt(betas),
    )
