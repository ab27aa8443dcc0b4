"""Reverse-diffusion MAP search: K gradient steps per noise level, then renoise."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import loss as ls
from . import operator as ops
from . import prior as pr
from .schedule import NoiseSchedule, build_edm_grid

VARIANTS = ("plain", "preconditioned", "latent")
SIGMA_Y_FLOOR = 1e-9


class DivergenceError(RuntimeError):
    """Non-finite loss or gradient during the inner optimization."""

    def __init__(self, step: int, inner: int, sigma: float, what: str = "gradient"):
        self.step = step
        self.inner = inner
        self.sigma = sigma
        self.what = what
        super().__init__(f"non-finite {what} at step {step} (sigma={sigma:g}), inner iteration {inner}")


@dataclass(frozen=True)
class SolverConfig:
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    num_inner: int = 50
    gamma0: float = 1.0
    sigma_y: float = SIGMA_Y_FLOOR
    variant: str = "plain"
    seed: int = 0
    record_every: int = 1

    def __post_init__(self):
        if int(self.num_inner) != self.num_inner or self.num_inner < 1:
            raise ValueError(f"num_inner must be a positive integer, got {self.num_inner}")
        if not self.gamma0 > 0:
            raise ValueError(f"gamma0 must be positive, got {self.gamma0}")
        if not self.sigma_y >= 0:
            raise ValueError(f"sigma_y must be nonnegative, got {self.sigma_y}")
        if self.sigma_y < SIGMA_Y_FLOOR:
            object.__setattr__(self, "sigma_y", SIGMA_Y_FLOOR)
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if int(self.record_every) != self.record_every or self.record_every < 1:
            raise ValueError(f"record_every must be a positive integer, got {self.record_every}")

    @property
    def learning_rate(self) -> float:
        return self.gamma0 * self.sigma_y**2


@dataclass
class StepRecord:
    step: int
    sigma: float
    x_after_opt: np.ndarray
    denoised: np.ndarray
    loss: ls.LossBreakdown
    loss_start: float
    grad_norm: float


@dataclass
class Trajectory:
    steps: list[StepRecord]
    final_x: np.ndarray
    seed: int
    sigma_y: float = SIGMA_Y_FLOOR


def renoise(x_opt, sigma_next: float, prior, sigma_current: float, rng) -> np.ndarray:
    """Draw from N(D(x_opt, sigma_current), sigma_next^2 I)."""
    if not sigma_next < sigma_current:
        raise ValueError(f"need sigma_next < sigma_current, got {sigma_next} >= {sigma_current}")
    d = pr.denoiser(prior, x_opt, sigma_current)
    if sigma_next == 0:
        return d
    return d + sigma_next * rng.standard_normal(d.shape)


def run_reverse_diffusion(
    prior,
    dim: int,
    config: SolverConfig,
    gradient: Callable[[np.ndarray, float], np.ndarray],
    objective: Callable[[np.ndarray, float], ls.LossBreakdown],
) -> Trajectory:
    """Shared loop for pixel and latent variants.

    ``gradient(x, sigma)`` is the descent direction; ``objective(x, sigma)``
    produces the recorded loss terms.
    """
    rng = np.random.default_rng(config.seed)
    grid = build_edm_grid(config.schedule)
    sigmas = [s for _, s in grid]
    lr = config.learning_rate
    x = sigmas[0] * rng.standard_normal(dim)
    records = []
    for i in range(len(sigmas) - 1):
        sigma = sigmas[i]
        start = objective(x, sigma).total_simplified
        if not np.isfinite(start):
            raise DivergenceError(i, 0, sigma, "loss")
        g = None
        for j in range(config.num_inner):
            g = gradient(x, sigma)
            if not np.all(np.isfinite(g)):
                raise DivergenceError(i, j + 1, sigma)
            x = x - lr * g
            if not np.all(np.isfinite(x)):
                raise DivergenceError(i, j + 1, sigma, "iterate")
        x_opt = x
        x = renoise(x_opt, sigmas[i + 1], prior, sigma, rng)
        if i % config.record_every == 0 or i == len(sigmas) - 2:
            bd = objective(x_opt, sigma)
            if not np.isfinite(bd.total_simplified):
                raise DivergenceError(i, config.num_inner, sigma, "loss")
            denoised = pr.denoiser(prior, x_opt, sigma)
            records.append(
                StepRecord(i, sigma, x_opt.copy(), denoised, bd, float(start), float(np.linalg.norm(g)))
            )
    return Trajectory(records, x, config.seed, config.sigma_y)


def solve(prior, op, y, config: SolverConfig) -> Trajectory:
    """VML-MAP (``variant='plain'``) or its preconditioned form."""
    if config.variant == "latent":
        raise ValueError("use vml_lab.latent.latent_solve for the latent variant")
    if op.shape[1] != prior.dim:
        raise ValueError(f"operator acts on dimension {op.shape[1]}, prior has {prior.dim}")
    y = np.asarray(y, dtype=float)
    if y.shape != (op.shape[0],):
        raise ValueError(f"y has shape {y.shape}, operator expects ({op.shape[0]},)")
    sy = config.sigma_y
    grad_fn = ls.grad_vml_preconditioned if config.variant == "preconditioned" else ls.grad_vml_simplified
    return run_reverse_diffusion(
        prior,
        prior.dim,
        config,
        lambda x, s: grad_fn(prior, op, y, sy, x, s).total,
        lambda x, s: ls.vml_simplified(prior, op, y, sy, x, s),
    )
