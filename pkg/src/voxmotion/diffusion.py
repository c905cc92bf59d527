"""Linear noise schedule, forward corruption and deterministic DDIM sampling.

Timesteps are 1-based: ``alpha_bar[i]`` for i in 1..N, with the sentinel
``alpha_bar[0] = 1`` so that stepping to i = 0 returns the clean estimate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InvariantError


@dataclass(frozen=True)
class DiffusionSchedule:
    beta: np.ndarray       # (N,)
    alpha: np.ndarray      # (N,)
    alpha_bar: np.ndarray  # (N + 1,), index 0 is the sentinel 1.0

    @property
    def N(self) -> int:
        return len(self.beta)


def make_schedule(N: int = 1000, beta_start: float = 1e-4, beta_end: float = 0.02) -> DiffusionSchedule:
    if N < 1:
        raise InvariantError("need at least one timestep")
    if not 0 < beta_start <= beta_end < 1:
        raise InvariantError(f"invalid beta range [{beta_start}, {beta_end}]")
    beta = np.linspace(beta_start, beta_end, N, dtype=np.float64)
    alpha = 1.0 - beta
    alpha_bar = np.concatenate([[1.0], np.cumprod(alpha)])
    return DiffusionSchedule(beta=beta, alpha=alpha, alpha_bar=alpha_bar)


def forward_noise(x0, i, noise, sched: DiffusionSchedule):
    """Corrupt ``x0`` to timestep ``i`` (scalar or one per leading batch item)."""
    ab = sched.alpha_bar[np.asarray(i)]
    ab = np.reshape(ab, np.shape(ab) + (1,) * (np.ndim(x0) - np.ndim(ab)))
    dtype = np.result_type(x0, noise)
    return np.sqrt(ab).astype(dtype) * x0 + np.sqrt(1.0 - ab).astype(dtype) * noise


def ddim_step(x_i, x0_hat, i: int, i_prev: int, sched: DiffusionSchedule):
    """Deterministic (eta = 0) DDIM update from timestep ``i`` to ``i_prev``."""
    if not i_prev < i:
        raise InvariantError(f"i_prev ({i_prev}) must be earlier than i ({i})")
    ab, ab_prev = sched.alpha_bar[i], sched.alpha_bar[i_prev]
    if ab_prev == 1.0:
        return np.array(x0_hat, copy=True)
    eps = (x_i - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps


def timestep_sequence(N: int, step_count: int) -> list[int]:
    """Evenly spaced decreasing timesteps from N, followed by the terminal 0."""
    if not 1 <= step_count <= N:
        raise InvariantError(f"step_count must be in [1, {N}]")
    ts = np.round(np.linspace(N, 0, step_count + 1)).astype(int)
    return [int(t) for t in ts]


def sample(denoiser: Callable, condition, sched: DiffusionSchedule, shape: tuple,
           step_count: int = 50, seed: int = 0, dtype=np.float64):
    """Run DDIM from seeded pure noise.

    ``denoiser(x_i, i, condition)`` must return the clean-signal estimate.
    Returns the final x0 estimate.
    """
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape, dtype=dtype)
    ts = timestep_sequence(sched.N, step_count)
    x0_hat = x
    for i, i_prev in zip(ts[:-1], ts[1:]):
        x0_hat = denoiser(x, i, condition)
        x = ddim_step(x, x0_hat, i, i_prev, sched)
    return x0_hat
