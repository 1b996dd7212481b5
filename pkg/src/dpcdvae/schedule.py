"""Noise schedules for the two diffusion channels.

Coordinate diffusion uses a sigmoid retention schedule: the cumulative
retention is ``alpha_bar(t) = logistic(-gamma(t))`` with ``gamma`` linear
from ``gamma_min`` to ``gamma_max`` over t = 0..T, pinned to
``alpha_bar(0) = 1`` by convention.  With the default span [-10, 10] the
terminal retention is logistic(-10) ~ 4.5e-5, i.e. wrapped coordinates
are uniform at t = T for all practical purposes.

Atom-type perturbation uses a separate scale ``sigma_prime`` spaced
geometrically over [0.01, 5].
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import ScheduleError

SIGMA_PRIME_MIN = 0.01
SIGMA_PRIME_MAX = 5.0

__all__ = ["NoiseSchedule", "make_sigmoid_schedule",
           "SIGMA_PRIME_MIN", "SIGMA_PRIME_MAX"]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step diffusion coefficients, immutable after construction.

    ``alpha_bar`` has T+1 entries indexed by t = 0..T with
    ``alpha_bar[0] = 1``; the other arrays have T entries where index
    ``i`` holds the value for step t = i + 1.  Use the ``*_at(t)``
    accessors for 1-based step access.
    """

    t_steps: int
    alpha: np.ndarray = field(repr=False)
    alpha_bar: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    sigma_prime: np.ndarray = field(repr=False)
    gamma_min: float = -10.0
    gamma_max: float = 10.0

    def _check_step(self, t: int) -> int:
        t = int(t)
        if not 1 <= t <= self.t_steps:
            raise ValueError(f"step t={t} outside [1, {self.t_steps}]")
        return t

    def alpha_at(self, t: int) -> float:
        return float(self.alpha[self._check_step(t) - 1])

    def alpha_bar_at(self, t: int) -> float:
        t = int(t)
        if not 0 <= t <= self.t_steps:
            raise ValueError(f"step t={t} outside [0, {self.t_steps}]")
        return float(self.alpha_bar[t])

    def sigma_at(self, t: int) -> float:
        return float(self.sigma[self._check_step(t) - 1])

    def sigma_prime_at(self, t: int) -> float:
        return float(self.sigma_prime[self._check_step(t) - 1])


def make_sigmoid_schedule(t_steps: int, gamma_min: float = -10.0,
                          gamma_max: float = 10.0) -> NoiseSchedule:
    """Build the sigmoid noise schedule for ``t_steps`` diffusion steps.

    Raises ``ScheduleError`` for parameters that fail to produce a
    strictly decreasing ``alpha_bar`` in (0, 1] (e.g. spans so wide the
    logistic saturates in float64).
    """
    t_steps = int(t_steps)
    if t_steps < 1:
        raise ScheduleError("t_steps must be at least 1")
    gamma_min = float(gamma_min)
    gamma_max = float(gamma_max)
    if not gamma_min < gamma_max:
        raise ScheduleError("gamma_min must be strictly less than gamma_max")

    t = np.arange(t_steps + 1, dtype=np.float64)
    gamma = gamma_min + (gamma_max - gamma_min) * t / t_steps
    alpha_bar = expit(-gamma)
    alpha_bar[0] = 1.0

    if np.any(alpha_bar <= 0.0) or np.any(alpha_bar > 1.0):
        raise ScheduleError("alpha_bar left (0, 1]; narrow the gamma span")
    if np.any(np.diff(alpha_bar) >= 0.0):
        raise ScheduleError(
            "alpha_bar is not strictly decreasing; the gamma span saturates "
            "the logistic in float64")

    alpha = alpha_bar[1:] / alpha_bar[:-1]
    sigma = np.sqrt((1.0 - alpha_bar[:-1]) * (1.0 - alpha) / (1.0 - alpha_bar[1:]))

    if t_steps == 1:
        sigma_prime = np.array([SIGMA_PRIME_MIN])
    else:
        exponents = np.arange(t_steps, dtype=np.float64) / (t_steps - 1)
        sigma_prime = SIGMA_PRIME_MIN * (SIGMA_PRIME_MAX / SIGMA_PRIME_MIN) ** exponents

    for arr in (alpha, alpha_bar, sigma, sigma_prime):
        arr.setflags(write=False)
    return NoiseSchedule(
        t_steps=t_steps, alpha=alpha, alpha_bar=alpha_bar, sigma=sigma,
        sigma_prime=sigma_prime, gamma_min=gamma_min, gamma_max=gamma_max)
