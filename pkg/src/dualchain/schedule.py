"""Noise schedules and inference timestep plans.

Timesteps are 1-based training indices ``1..T_train``.  Index 0 denotes the
clean latent and always has ``alpha_bar = 1``, so the last inference step
lands on data.  When a plan subsamples the training steps, a "step from
t_prev to t" always means two consecutive plan entries (with 0 prepended).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_T_TRAIN = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    alpha: np.ndarray
    alpha_bar: np.ndarray = field(repr=False)

    def __post_init__(self):
        alpha = np.asarray(self.alpha, dtype=np.float64)
        if alpha.ndim != 1 or alpha.size == 0:
            raise ValueError("alpha must be a non-empty 1-D sequence")
        if np.any(alpha <= 0) or np.any(alpha > 1):
            raise ValueError("alpha values must lie in (0, 1]")
        alpha.setflags(write=False)
        bar = np.asarray(self.alpha_bar, dtype=np.float64)
        bar.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "alpha_bar", bar)

    @classmethod
    def from_alphas(cls, alpha) -> "NoiseSchedule":
        alpha = np.asarray(alpha, dtype=np.float64)
        return cls(alpha=alpha, alpha_bar=np.cumprod(alpha))

    @property
    def T_train(self) -> int:
        return int(self.alpha.size)

    def check_timestep(self, t, allow_zero: bool = True) -> int:
        t = int(t)
        low = 0 if allow_zero else 1
        if not low <= t <= self.T_train:
            raise ValueError(f"timestep {t} outside [{low}, {self.T_train}]")
        return t

    def alpha_at(self, t) -> float:
        t = self.check_timestep(t, allow_zero=False)
        return float(self.alpha[t - 1])

    def alpha_bar_at(self, t) -> float:
        t = self.check_timestep(t)
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


def make_linear_schedule(
    T_train: int = DEFAULT_T_TRAIN,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Betas linearly spaced from ``beta_start`` to ``beta_end`` inclusive."""
    if int(T_train) != T_train or T_train < 1:
        raise ValueError("T_train must be a positive integer")
    if not (0 <= beta_start <= beta_end < 1):
        raise ValueError("betas must satisfy 0 <= beta_start <= beta_end < 1")
    if T_train == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, int(T_train), dtype=np.float64)
    return NoiseSchedule.from_alphas(1.0 - betas)


@dataclass(frozen=True)
class TimestepPlan:
    """Increasing subsequence of training timesteps ending at ``T_train``."""

    steps: tuple[int, ...]

    def __post_init__(self):
        steps = tuple(int(s) for s in self.steps)
        if steps and (steps[0] < 1 or any(b <= a for a, b in zip(steps, steps[1:]))):
            raise ValueError("plan steps must be strictly increasing and >= 1")
        object.__setattr__(self, "steps", steps)

    def __len__(self):
        return len(self.steps)

    @property
    def T(self) -> int:
        return self.steps[-1] if self.steps else 0

    def pairs(self) -> list[tuple[int, int]]:
        """``(t_prev, t)`` pairs in inversion order, starting from (0, steps[0])."""
        full = (0,) + self.steps
        return list(zip(full[:-1], full[1:]))

    def previous(self, t: int) -> int:
        idx = self.steps.index(int(t))
        return 0 if idx == 0 else self.steps[idx - 1]


def make_plan(T_train: int, n_steps: int) -> TimestepPlan:
    """Evenly strided plan: stride ``T_train // n_steps``, anchored at ``T_train``.

    Entry k (1-based) is ``T_train - stride * (n_steps - k)``; e.g.
    ``make_plan(10, 3)`` gives ``(4, 7, 10)``.
    """
    if n_steps < 1 or n_steps > T_train:
        raise ValueError(f"need 1 <= n_steps <= T_train, got n_steps={n_steps}, T_train={T_train}")
    stride = T_train // n_steps
    return TimestepPlan(tuple(T_train - stride * (n_steps - k) for k in range(1, n_steps + 1)))
