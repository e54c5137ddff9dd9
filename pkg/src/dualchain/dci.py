"""Dual-chain inversion and exact joint inference.

Stage 1 runs the ordinary DDIM inversion chain ``z_hat`` and, at every step,
predicts the noise once more at the *new* latent ``z_hat_t``.  That second
noise is injected into an auxiliary chain ``z_bar`` and cached.  Stage 2
removes exactly the cached noises from ``z_bar_T`` in reverse order, which
undoes the auxiliary chain step by step, so reconstruction is exact up to
floating-point rounding for any predictor and any matched guidance scale.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ddim import INFERENCE, INVERSION, Trajectory, ddim_infer, ddim_infer_step, ddim_invert, ddim_invert_step
from .metrics import ReconReport, ReconRow, compare
from .predictor import NoisePredictor, cfg_combine
from .schedule import NoiseSchedule, TimestepPlan
from .tensorio import as_tensor, read_tensor, write_tensor

RECON_MODES = ("exact", "recompute", "omega-split", "aux-ddim", "guided")


class IntegrityError(RuntimeError):
    pass


class PredictorStepError(RuntimeError):
    def __init__(self, step: int, t: int, cause: Exception):
        super().__init__(f"noise prediction failed at step {step} (t={t}): {cause}")
        self.step = step
        self.t = t


@dataclass
class InversionRecord:
    ddim_chain: Trajectory
    aux_chain: Trajectory
    cached_eps: dict[int, np.ndarray]
    omega_used: float
    condition_used: np.ndarray
    plan: TimestepPlan = field(default_factory=lambda: TimestepPlan(()))

    @property
    def z0(self) -> np.ndarray:
        return self.ddim_chain.latents[0]

    @property
    def z_bar_T(self) -> np.ndarray:
        return self.aux_chain.final

    def save(self, directory) -> None:
        directory = Path(directory)
        self.ddim_chain.save(directory / "ddim_chain")
        self.aux_chain.save(directory / "aux_chain")
        eps_dir = directory / "cached_eps"
        eps_dir.mkdir(parents=True, exist_ok=True)
        for t, eps in self.cached_eps.items():
            write_tensor(eps_dir / f"t{t:05d}.erdt", eps)
        write_tensor(directory / "condition.erdt", np.atleast_1d(self.condition_used) if np.size(self.condition_used) else np.zeros(1))
        lines = [
            f"omega = {self.omega_used!r}",
            f"condition_dim = {np.size(self.condition_used)}",
            f"plan = {','.join(str(s) for s in self.plan.steps)}",
        ]
        (directory / "params.txt").write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, directory) -> "InversionRecord":
        directory = Path(directory)
        meta = {}
        for line in (directory / "params.txt").read_text().splitlines():
            if line.strip():
                k, _, v = line.partition("=")
                meta[k.strip()] = v.strip()
        steps = tuple(int(s) for s in meta["plan"].split(",") if s)
        cond = read_tensor(directory / "condition.erdt")[: int(meta["condition_dim"])]
        cached = {t: read_tensor(directory / "cached_eps" / f"t{t:05d}.erdt") for t in steps}
        return cls(Trajectory.load(directory / "ddim_chain"), Trajectory.load(directory / "aux_chain"),
                   cached, float(meta["omega"]), cond, TimestepPlan(steps))


def _guided(predictor, z, condition, t, omega, step):
    try:
        return cfg_combine(predictor, z, condition, t, omega)
    except Exception as exc:  # re-raised with the failing step attached
        raise PredictorStepError(step, t, exc) from exc


def dci_invert(z0, predictor: NoisePredictor, condition, omega: float, plan: TimestepPlan,
               schedule: NoiseSchedule) -> InversionRecord:
    z0 = as_tensor(z0, "z0")
    condition = np.asarray(condition, dtype=np.float64).reshape(-1)
    z_hat, z_bar = z0, z0
    hat_chain, bar_chain = Trajectory(INVERSION), Trajectory(INVERSION)
    hat_chain.append(0, z_hat)
    bar_chain.append(0, z_bar)
    cached = {}
    for step, (t_prev, t) in enumerate(plan.pairs(), start=1):
        eps_prev = _guided(predictor, z_hat, condition, t, omega, step)
        z_hat = ddim_invert_step(z_hat, t_prev, t, eps_prev, schedule)
        eps_new = _guided(predictor, z_hat, condition, t, omega, step)
        z_bar = ddim_invert_step(z_bar, t_prev, t, eps_new, schedule)
        cached[t] = eps_new
        hat_chain.append(t, z_hat)
        bar_chain.append(t, z_bar)
    return InversionRecord(hat_chain, bar_chain, cached, float(omega), condition.copy(), plan)


def joint_infer(rec: InversionRecord, schedule: NoiseSchedule, *, start=None, predictor: NoisePredictor | None = None,
                omega: float | None = None) -> tuple[np.ndarray, Trajectory]:
    """Run the joint inference chain from ``z_bar_T`` (or ``start``).

    By default the cached noises are reused and no predictor is called.
    Passing ``predictor`` re-evaluates the guided noise at ``z_hat_t`` instead,
    optionally at a different guidance scale ``omega``.
    """
    if predictor is None and omega is not None and omega != rec.omega_used:
        raise ValueError("changing omega requires a predictor to recompute the noise")
    z = rec.z_bar_T if start is None else as_tensor(start, "start")
    traj = Trajectory(INFERENCE)
    traj.append(rec.plan.T, z)
    w = rec.omega_used if omega is None else omega
    for step, (t_prev, t) in enumerate(reversed(rec.plan.pairs()), start=1):
        if predictor is None:
            if t not in rec.cached_eps:
                raise IntegrityError(f"no cached noise for timestep {t}")
            eps = rec.cached_eps[t]
        else:
            eps = _guided(predictor, rec.ddim_chain[t], rec.condition_used, t, w, step)
        z = ddim_infer_step(z, t, t_prev, eps, schedule)
        traj.append(t_prev, z)
    return z, traj


def reconstruct(z0, predictor: NoisePredictor, condition, omega: float, plan: TimestepPlan,
                schedule: NoiseSchedule, mode: str = "exact", dcs=None, peak: float = 1.0) -> ReconReport:
    """Invert and reconstruct ``z0`` with both DDIM and the dual-chain scheme.

    ``mode`` picks how the dual-chain side reconstructs:

    - ``exact``: invert and infer at ``omega`` with cached noises.
    - ``recompute``: like ``exact`` but re-evaluating the noise at ``z_hat_t``.
    - ``omega-split``: invert at scale 1, infer at ``omega`` (noise recomputed).
    - ``aux-ddim``: invert at ``omega``, then plain DDIM sampling from ``z_bar_T``.
    - ``guided``: invert at scale 1, then the editing process with target equal
      to source and the dynamic guidance schedule ``dcs`` (peak ``omega``).
    """
    if mode not in RECON_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {RECON_MODES}")
    z0 = as_tensor(z0, "z0")
    rows = []

    before = predictor.call_count
    t0 = time.perf_counter()
    inv = ddim_invert(z0, predictor, condition, omega, plan, schedule)
    out = ddim_infer(inv.final, predictor, condition, omega, plan, schedule)
    rows.append(ReconRow("ddim", **compare(out.final, z0, peak), calls=predictor.call_count - before,
                         seconds=time.perf_counter() - t0))

    before = predictor.call_count
    t0 = time.perf_counter()
    invert_omega = 1.0 if mode in ("omega-split", "guided") else omega
    rec = dci_invert(z0, predictor, condition, invert_omega, plan, schedule)
    if mode == "exact":
        z_rec, _ = joint_infer(rec, schedule)
    elif mode == "recompute":
        z_rec, _ = joint_infer(rec, schedule, predictor=predictor)
    elif mode == "omega-split":
        z_rec, _ = joint_infer(rec, schedule, predictor=predictor, omega=omega)
    elif mode == "aux-ddim":
        z_rec = ddim_infer(rec.z_bar_T, predictor, condition, omega, plan, schedule).final
    else:
        from .edit import DcsConfig, EditConfig, edit_run

        dcs = dcs or DcsConfig(Omega=omega, eta=0.5)
        dcs = DcsConfig(Omega=omega, eta=dcs.eta, t_end=dcs.t_end)
        cfg = EditConfig(dcs=dcs, source_condition=condition, target_condition=condition)
        z_rec = edit_run(rec, cfg, predictor, plan, schedule).z0
    name = "dci" if mode == "exact" else f"dci-{mode}"
    rows.append(ReconRow(name, **compare(z_rec, z0, peak), calls=predictor.call_count - before,
                         seconds=time.perf_counter() - t0))
    return ReconReport(rows)
