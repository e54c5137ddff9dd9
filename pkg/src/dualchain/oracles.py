"""Slow, independent reference computations used to check the main modules.

Nothing here calls the steppers or predictors under test; the update formulas
are transcribed again from scratch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import write_csv


@dataclass
class OracleReport:
    name: str
    inputs_digest: str
    reference: float
    observed: float
    tolerance: float
    provenance: str = "oracles"

    @property
    def passed(self) -> bool:
        return abs(self.reference - self.observed) <= self.tolerance


def write_reports(path, reports) -> None:
    write_csv(path, ["name", "inputs_digest", "reference", "observed", "tolerance", "passed", "provenance"],
              [[r.name, r.inputs_digest, float(r.reference), float(r.observed), float(r.tolerance),
                int(r.passed), r.provenance] for r in reports])


def oracle_posterior_eps(model, z, t, schedule, n_samples, rng, c=None, gain=20.0, min_ess=100.0):
    """Self-normalised importance estimate of ``E[eps | z_t = z]``.

    Draws ``z0`` from the (conditioned) mixture prior, weights each draw by the
    Gaussian likelihood of ``z`` and averages the implied noises.  Returns
    ``(estimate, standard_error, low_ess_flag)``.
    """
    if n_samples < 10**5:
        raise ValueError("n_samples must be at least 1e5")
    z = np.asarray(z, dtype=np.float64)
    ab = float(schedule.alpha_bar[t - 1])
    K = len(model.weights)
    cvec = np.zeros(K + 1) if c is None else np.asarray(c, dtype=np.float64)
    logw = np.log(model.weights) + gain * cvec[:K]
    w = np.exp(logw - logw.max())
    w = w / w.sum()
    means = model.means
    if model.style_direction is not None:
        means = means + cvec[-1] * model.style_direction
    gen = rng.generator
    comp = gen.choice(K, size=n_samples, p=w)
    z0 = means[comp] + math.sqrt(model.variance) * gen.standard_normal((n_samples,) + z.shape)
    eps = (z[None] - math.sqrt(ab) * z0) / math.sqrt(1.0 - ab)
    axes = tuple(range(1, eps.ndim))
    logl = -0.5 * np.sum(eps**2, axis=axes)
    lw = np.exp(logl - logl.max())
    total = lw.sum()
    est = np.tensordot(lw, eps, axes=1) / total
    dev = eps - est[None]
    se = np.sqrt(np.tensordot(lw**2, dev**2, axes=1)) / total
    ess = total**2 / np.sum(lw**2)
    return est, se, bool(ess < min_ess)


def oracle_fd_gradient(loss, params, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``loss(params)`` with respect to every entry."""
    if not 1e-6 <= h <= 1e-3:
        raise ValueError("h must lie in [1e-6, 1e-3]")
    params = np.array(params, dtype=np.float64)
    grad = np.zeros_like(params)
    flat = params.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = loss(params)
        flat[i] = keep - h
        down = loss(params)
        flat[i] = keep
        g[i] = (up - down) / (2.0 * h)
    return grad


def oracle_step_inverse(z, e, t_pair, schedule) -> float:
    """Max-abs residual of auxiliary-chain injection followed by removal.

    ``t_pair = (s, t)`` with ``s < t``; index 0 means the clean latent.
    """
    s, t = t_pair
    a_s = 1.0 if s == 0 else float(schedule.alpha_bar[s - 1])
    a_t = 1.0 if t == 0 else float(schedule.alpha_bar[t - 1])
    z = np.asarray(z, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    up = np.sqrt(a_t) * (z - np.sqrt(1 - a_s) * e) / np.sqrt(a_s) + np.sqrt(1 - a_t) * e
    back = np.sqrt(a_s) * (up - np.sqrt(1 - a_t) * e) / np.sqrt(a_t) + np.sqrt(1 - a_s) * e
    return float(np.max(np.abs(back - z)))
