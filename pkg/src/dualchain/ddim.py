"""Forward diffusion and the deterministic DDIM inversion/inference steppers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .predictor import NoisePredictor, cfg_combine
from .schedule import NoiseSchedule, TimestepPlan
from .tensorio import Rng, as_tensor, check_same_shape, read_tensor, sample_standard_normal, write_tensor

INVERSION = "inversion"
INFERENCE = "inference"


@dataclass
class Trajectory:
    """Latents along a chain, with timesteps monotone in ``direction``."""

    direction: str
    timesteps: list[int] = field(default_factory=list)
    latents: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if self.direction not in (INVERSION, INFERENCE):
            raise ValueError(f"unknown direction {self.direction!r}")

    def append(self, t: int, z: np.ndarray) -> None:
        if self.timesteps:
            last = self.timesteps[-1]
            ok = t > last if self.direction == INVERSION else t < last
            if not ok:
                raise ValueError(f"timestep {t} breaks {self.direction} ordering after {last}")
            if z.shape != self.latents[0].shape:
                raise ValueError("all latents in a trajectory must share one shape")
        self.timesteps.append(int(t))
        self.latents.append(z)

    def __len__(self):
        return len(self.timesteps)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.latents[self.timesteps.index(int(t))]

    @property
    def final(self) -> np.ndarray:
        return self.latents[-1]

    def stacked(self) -> np.ndarray:
        return np.stack(self.latents)

    def save(self, directory) -> None:
        """One tensor file per latent plus ``index.txt`` (timestep -> file)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        lines = [f"direction = {self.direction}"]
        for t, z in zip(self.timesteps, self.latents):
            name = f"t{t:05d}.erdt"
            write_tensor(directory / name, z)
            lines.append(f"{t} = {name}")
        (directory / "index.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory) -> "Trajectory":
        directory = Path(directory)
        lines = [ln for ln in (directory / "index.txt").read_text().splitlines() if ln.strip()]
        key, _, direction = lines[0].partition("=")
        if key.strip() != "direction":
            raise ValueError("trajectory index must start with a direction line")
        traj = cls(direction.strip())
        for line in lines[1:]:
            t, _, name = line.partition("=")
            traj.append(int(t), read_tensor(directory / name.strip()))
        return traj


def forward_step(z_prev, t, schedule: NoiseSchedule, rng: Rng) -> np.ndarray:
    """One noising step ``sqrt(a_t) z_prev + sqrt(1 - a_t) eps``."""
    z_prev = as_tensor(z_prev, "z_prev")
    a = schedule.alpha_at(t)
    eps = sample_standard_normal(rng, z_prev.shape)
    return math.sqrt(a) * z_prev + math.sqrt(1.0 - a) * eps


def forward_jump(z0, t, schedule: NoiseSchedule, rng: Rng) -> np.ndarray:
    """Sample ``z_t`` directly from ``z0``."""
    z0 = as_tensor(z0, "z0")
    ab = schedule.alpha_bar_at(t)
    eps = sample_standard_normal(rng, z0.shape)
    return math.sqrt(ab) * z0 + math.sqrt(1.0 - ab) * eps


def predict_x0(z, eps, t, schedule: NoiseSchedule) -> np.ndarray:
    ab = schedule.alpha_bar_at(t)
    if ab <= 0.0:
        raise ZeroDivisionError(f"alpha_bar is 0 at t={t}")
    return (z - math.sqrt(1.0 - ab) * eps) / math.sqrt(ab)


def _check_pair(t_prev, t, schedule: NoiseSchedule) -> tuple[int, int]:
    t_prev = schedule.check_timestep(t_prev)
    t = schedule.check_timestep(t)
    if not t_prev < t:
        raise ValueError(f"need t_prev < t, got t_prev={t_prev}, t={t}")
    return t_prev, t


def _ddim_move(z, eps, ab_from: float, ab_to: float) -> np.ndarray:
    x0 = (z - math.sqrt(1.0 - ab_from) * eps) / math.sqrt(ab_from)
    return math.sqrt(ab_to) * x0 + math.sqrt(1.0 - ab_to) * eps


def ddim_invert_step(z_prev, t_prev, t, eps_tilde, schedule: NoiseSchedule) -> np.ndarray:
    """Inject ``eps_tilde`` into ``z_prev``, moving from ``t_prev`` up to ``t``."""
    t_prev, t = _check_pair(t_prev, t, schedule)
    check_same_shape(z_prev, eps_tilde, "latent and noise")
    return _ddim_move(z_prev, eps_tilde, schedule.alpha_bar_at(t_prev), schedule.alpha_bar_at(t))


def ddim_infer_step(z, t, t_prev, eps_tilde, schedule: NoiseSchedule) -> np.ndarray:
    """Remove ``eps_tilde`` from ``z``, moving from ``t`` down to ``t_prev``."""
    t_prev, t = _check_pair(t_prev, t, schedule)
    check_same_shape(z, eps_tilde, "latent and noise")
    return _ddim_move(z, eps_tilde, schedule.alpha_bar_at(t), schedule.alpha_bar_at(t_prev))


def ddim_invert(z0, predictor: NoisePredictor, condition, omega: float, plan: TimestepPlan,
                schedule: NoiseSchedule) -> Trajectory:
    """Plain DDIM inversion; the noise for step ``t`` is predicted at ``z_{t_prev}``."""
    z = as_tensor(z0, "z0")
    traj = Trajectory(INVERSION)
    traj.append(0, z)
    for t_prev, t in plan.pairs():
        eps = cfg_combine(predictor, z, condition, t, omega)
        z = ddim_invert_step(z, t_prev, t, eps, schedule)
        traj.append(t, z)
    return traj


def ddim_infer(zT, predictor: NoisePredictor, condition, omega: float, plan: TimestepPlan,
               schedule: NoiseSchedule) -> Trajectory:
    """Plain DDIM sampling from ``zT``; the noise is predicted at the current latent."""
    z = as_tensor(zT, "zT")
    traj = Trajectory(INFERENCE)
    traj.append(plan.T, z)
    for t_prev, t in reversed(plan.pairs()):
        eps = cfg_combine(predictor, z, condition, t, omega)
        z = ddim_infer_step(z, t, t_prev, eps, schedule)
        traj.append(t_prev, z)
    return traj
