"""Variance-exploding noise levels and the EDM step grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NoiseSchedule:
    """EDM-parameterized noise schedule.

    ``num_steps`` is the number of optimization blocks N; the grid built from it
    has N + 1 points, the last of which is the clean level sigma = 0.
    """

    sigma_min: float = 0.002
    sigma_max: float = 140.0
    rho: float = 7.0
    num_steps: int = 20

    def __post_init__(self):
        if not (self.sigma_min > 0 and np.isfinite(self.sigma_min)):
            raise ValueError(f"sigma_min must be positive and finite, got {self.sigma_min}")
        if not np.isfinite(self.sigma_max) or self.sigma_min >= self.sigma_max:
            raise ValueError(
                f"need sigma_min < sigma_max, got {self.sigma_min} >= {self.sigma_max}"
            )
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if int(self.num_steps) != self.num_steps or self.num_steps < 2:
            raise ValueError(f"num_steps must be an integer >= 2, got {self.num_steps}")

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([s for _, s in build_edm_grid(self)])


def build_edm_grid(schedule: NoiseSchedule) -> list[tuple[int, float]]:
    """Return ``[(i, sigma_i)]`` for i = 0..N, largest sigma first.

    Entry 0 is exactly ``sigma_max``, entries 1..N-1 follow the rho-warp and
    entry N is exactly 0.
    """
    n = int(schedule.num_steps)
    if n < 2:
        raise ValueError(f"num_steps must be >= 2, got {n}")
    inv_rho = 1.0 / schedule.rho
    lo = schedule.sigma_min**inv_rho
    hi = schedule.sigma_max**inv_rho
    grid = [(0, float(schedule.sigma_max))]
    for i in range(1, n):
        grid.append((i, float((hi + (i / (n - 1)) * (lo - hi)) ** schedule.rho)))
    grid.append((n, 0.0))
    return grid


def perturb(x0, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Draw from N(x0, sigma^2 I). ``sigma == 0`` returns a copy of ``x0``."""
    if sigma < 0:
        raise ValueError(f"sigma must be nonnegative, got {sigma}")
    x0 = np.asarray(x0, dtype=float)
    if sigma == 0:
        return x0.copy()
    return x0 + sigma * rng.standard_normal(x0.shape)
