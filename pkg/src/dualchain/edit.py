"""Dynamic guidance control and the editing inference process.

The editing loop starts from the auxiliary chain's final latent and walks the
plan downwards.  Steps at or above the activation timestep ``sigma`` use joint
inference (noise predicted at the inversion latent ``z_hat_t``, scale 1).
Below ``sigma`` every step mixes the inversion latent and the current editing
latent before predicting noise.  Post-activation step ``i`` (counted from 1)
is a "strong" step, with scale 1 and the strong mix, when
``(i - 1) % r == 0``; otherwise it uses the ramped scale and the ramp mix.
For ``r >= 2`` this equals the ``i mod r == 1`` cadence; for ``r == 1``
every post-activation step is strong.

Joint-inference steps predict noise under the source condition by default,
so the pre-activation phase retraces the original exactly and the target
condition only enters from ``sigma`` downwards.  Set
``EditConfig.ji_condition = "target"`` to condition those steps on the target.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .ddim import INFERENCE, Trajectory, ddim_infer_step
from .dci import InversionRecord
from .metrics import write_csv
from .predictor import NoisePredictor, cfg_combine
from .schedule import NoiseSchedule, TimestepPlan
from .tensorio import check_same_shape

JI = "JI"
DJI_STRONG = "DJI-strong"
DJI_RAMP = "DJI-ramp"


class ConfigError(ValueError):
    pass


def activation_step(eta: float, plan: TimestepPlan) -> int:
    """``(1 - eta) * T`` rounded to the nearest of ``{0} | plan``; ties go down.

    Rounding down on ties keeps one more joint-inference step.
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {eta}")
    raw = (1.0 - eta) * plan.T
    candidates = (0,) + plan.steps
    return min(candidates, key=lambda s: (abs(s - raw), s))


@dataclass(frozen=True)
class DcsConfig:
    """Guidance ramp: 1 for ``t >= sigma``, rising linearly to ``Omega`` at ``t_end``.

    ``sigma`` is derived from ``eta`` by :meth:`bind` unless given explicitly.
    """

    Omega: float = 7.5
    eta: float = 0.5
    t_end: int = 0
    sigma: int | None = None

    def __post_init__(self):
        if self.Omega < 1:
            raise ConfigError(f"Omega must be >= 1, got {self.Omega}")
        if not 0.0 <= self.eta <= 1.0:
            raise ConfigError(f"eta must lie in [0, 1], got {self.eta}")
        if self.t_end < 0:
            raise ConfigError("t_end must be non-negative")
        if self.sigma is not None and self.sigma > 0 and self.sigma <= self.t_end:
            raise ConfigError(f"ramp undefined: sigma={self.sigma} must exceed t_end={self.t_end}")

    def bind(self, plan: TimestepPlan) -> "DcsConfig":
        return replace(self, sigma=activation_step(self.eta, plan))


def dcs_scale(t, cfg: DcsConfig) -> float:
    if cfg.sigma is None:
        raise ConfigError("DcsConfig has no sigma; call bind(plan) first")
    if t >= cfg.sigma:
        return 1.0
    if cfg.sigma <= cfg.t_end:
        raise ConfigError(f"ramp undefined: sigma={cfg.sigma} must exceed t_end={cfg.t_end}")
    value = 1.0 + (cfg.Omega - 1.0) / (cfg.sigma - cfg.t_end) * (cfg.sigma - t)
    return float(min(max(value, 1.0), cfg.Omega))


def _identity(z):
    return z


@dataclass
class EditConfig:
    dcs: DcsConfig
    source_condition: np.ndarray
    target_condition: np.ndarray
    r: int = 3
    strong_mix: tuple[float, float] = (0.8, 0.2)
    ramp_mix: tuple[float, float] = (0.5, 0.5)
    att_hook: Callable[[np.ndarray], np.ndarray] | None = None
    ji_condition: str = "source"

    def __post_init__(self):
        if self.ji_condition not in ("source", "target"):
            raise ConfigError(f"ji_condition must be 'source' or 'target', got {self.ji_condition!r}")
        if int(self.r) != self.r or self.r < 1:
            raise ConfigError(f"reliance period r must be a positive integer, got {self.r}")
        for name in ("strong_mix", "ramp_mix"):
            m, n = getattr(self, name)
            _check_mix(m, n)
        self.source_condition = np.asarray(self.source_condition, dtype=np.float64).reshape(-1)
        self.target_condition = np.asarray(self.target_condition, dtype=np.float64).reshape(-1)

    @property
    def hook(self):
        return self.att_hook or _identity


def _check_mix(m, n):
    if abs(m + n - 1.0) > 1e-12:
        raise ConfigError(f"dependency factors must satisfy m + n = 1, got m={m}, n={n}")


def g_step(z, t, t_prev, eps_tilde, schedule: NoiseSchedule) -> np.ndarray:
    """Denoise ``z`` from ``t`` to ``t_prev`` with a supplied noise (pre-hook latent)."""
    return ddim_infer_step(z, t, t_prev, eps_tilde, schedule)


def ji_step(z_breve, z_hat_t, t, t_prev, omega, predictor: NoisePredictor, condition, cfg: EditConfig,
            schedule: NoiseSchedule) -> np.ndarray:
    check_same_shape(z_breve, z_hat_t, "editing and inversion latents")
    eps = cfg_combine(predictor, z_hat_t, condition, t, omega)
    return cfg.hook(g_step(z_breve, t, t_prev, eps, schedule))


def dji_step(z_breve, z_hat_t, t, t_prev, omega, m, n, predictor: NoisePredictor, condition, cfg: EditConfig,
             schedule: NoiseSchedule) -> np.ndarray:
    _check_mix(m, n)
    check_same_shape(z_breve, z_hat_t, "editing and inversion latents")
    eps = cfg_combine(predictor, m * z_hat_t + n * z_breve, condition, t, omega)
    return cfg.hook(g_step(z_breve, t, t_prev, eps, schedule))


@dataclass
class StepLog:
    t: int
    t_prev: int
    mode: str
    omega: float
    m: float
    n: float
    mse_to_aux: float


@dataclass
class EditResult:
    z0: np.ndarray
    trajectory: Trajectory
    log: list[StepLog] = field(default_factory=list)

    def write_log(self, path) -> None:
        write_csv(path, ["t", "mode", "omega", "m", "n", "mse_to_aux"],
                  [[s.t, s.mode, float(s.omega), float(s.m), float(s.n), float(s.mse_to_aux)] for s in self.log])


def step_modes(plan: TimestepPlan, sigma: int, r: int) -> list[tuple[int, str]]:
    """The (t, mode) schedule the editing loop follows, without running it."""
    out, i = [], 0
    for t in reversed(plan.steps):
        if t >= sigma:
            out.append((t, JI))
        else:
            i += 1
            out.append((t, DJI_STRONG if (i - 1) % r == 0 else DJI_RAMP))
    return out


def edit_run(rec: InversionRecord, cfg: EditConfig, predictor: NoisePredictor, plan: TimestepPlan,
             schedule: NoiseSchedule) -> EditResult:
    if tuple(plan.steps) != tuple(rec.plan.steps):
        raise ConfigError("edit plan must match the inversion plan")
    dcs = cfg.dcs if cfg.dcs.sigma is not None else cfg.dcs.bind(plan)
    ji_cond = cfg.source_condition if cfg.ji_condition == "source" else cfg.target_condition
    cond = cfg.target_condition
    z = rec.z_bar_T
    traj = Trajectory(INFERENCE)
    traj.append(plan.T, z)
    log = []
    for t, mode in step_modes(plan, dcs.sigma, cfg.r):
        t_prev = plan.previous(t)
        z_hat = rec.ddim_chain[t]
        if mode == JI:
            omega, (m, n) = 1.0, (1.0, 0.0)
            z = ji_step(z, z_hat, t, t_prev, omega, predictor, ji_cond, cfg, schedule)
        else:
            if mode == DJI_STRONG:
                omega, (m, n) = 1.0, cfg.strong_mix
            else:
                omega, (m, n) = dcs_scale(t, dcs), cfg.ramp_mix
            z = dji_step(z, z_hat, t, t_prev, omega, m, n, predictor, cond, cfg, schedule)
        traj.append(t_prev, z)
        log.append(StepLog(t, t_prev, mode, omega, m, n, float(np.mean((z - rec.aux_chain[t_prev]) ** 2))))
    return EditResult(z, traj, log)


EDIT_TYPES = ("T1", "T2", "T3")


def rewrite_condition(source, kind: str, n_components: int, target_index: int | None = None,
                      amount: float = 0.5, style: float = 0.25) -> np.ndarray:
    """Toy analogues of prompt rewrites on ``[one-hot | style]`` condition vectors.

    - ``T1`` (object transformation): move all component weight to ``target_index``.
    - ``T2`` (object refinement): interpolate towards ``target_index`` by ``amount``.
    - ``T3`` (style transfer): keep the components, add ``style`` to the style entry.
    """
    source = np.asarray(source, dtype=np.float64).reshape(-1)
    if source.size != n_components + 1:
        raise ValueError(f"condition must have {n_components + 1} entries")
    if target_index is None:
        current = int(np.argmax(source[:n_components]))
        target_index = (current + 1) % n_components
    onehot = np.zeros_like(source)
    onehot[target_index] = 1.0
    onehot[-1] = source[-1]
    if kind == "T1":
        return onehot
    if kind == "T2":
        return (1.0 - amount) * source + amount * onehot
    if kind == "T3":
        out = source.copy()
        out[-1] += style
        return out
    raise ValueError(f"unknown edit type {kind!r}; expected one of {EDIT_TYPES}")
