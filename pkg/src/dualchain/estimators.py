"""scikit-learn style wrappers around the inversion pipelines.

``transform`` maps a batch of clean latents ``(n_samples, *latent_shape)``
to noise latents; ``inverse_transform`` maps noise latents back.  For
:class:`DualChainInversion` the inverse replays the cached noises recorded by
the last ``transform`` call, so ``inverse_transform(transform(X))``
reproduces ``X`` up to rounding.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .dci import dci_invert, joint_infer
from .ddim import ddim_infer, ddim_invert
from .predictor import null_condition
from .schedule import make_linear_schedule, make_plan


def check_latents(X, name="X") -> np.ndarray:
    """Validate a batch of latents: float64, at least 2-D, finite, non-empty."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim < 2 or X.shape[0] == 0 or X.size == 0:
        raise ValueError(f"{name} must have shape (n_samples, *latent_shape) with n_samples >= 1, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or Inf")
    return X


def check_conditions(conditions, n_samples, dim) -> np.ndarray:
    if conditions is None:
        return np.tile(null_condition(dim or 0), (n_samples, 1))
    C = np.asarray(conditions, dtype=np.float64)
    if C.ndim == 1:
        C = np.tile(C, (n_samples, 1))
    if C.shape[0] != n_samples:
        raise ValueError(f"got {C.shape[0]} conditions for {n_samples} samples")
    return C


class _InversionBase(TransformerMixin, BaseEstimator):
    def __init__(self, predictor=None, n_steps=50, omega=1.0, T_train=1000, beta_start=1e-4, beta_end=0.02):
        self.predictor = predictor
        self.n_steps = n_steps
        self.omega = omega
        self.T_train = T_train
        self.beta_start = beta_start
        self.beta_end = beta_end

    def fit(self, X=None, y=None):
        if self.predictor is None:
            raise ValueError("a noise predictor is required")
        if self.omega < 0:
            raise ValueError("omega must be non-negative")
        if X is not None:
            X = check_latents(X)
            self.n_features_in_ = int(np.prod(X.shape[1:]))
        schedule = getattr(self.predictor, "schedule", None)
        if schedule is None or schedule.T_train != self.T_train:
            schedule = make_linear_schedule(self.T_train, self.beta_start, self.beta_end)
        self.schedule_ = schedule
        self.plan_ = make_plan(self.T_train, self.n_steps)
        return self

    def _check_fitted(self):
        if not hasattr(self, "plan_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet; call fit() first")


class DualChainInversion(_InversionBase):
    """Dual-chain inversion; ``records_`` holds the last batch's chains and noises."""

    def transform(self, X, conditions=None):
        self._check_fitted()
        X = check_latents(X)
        C = check_conditions(conditions, len(X), self.predictor.condition_dim)
        self.records_ = [dci_invert(x, self.predictor, c, self.omega, self.plan_, self.schedule_) for x, c in zip(X, C)]
        return np.stack([r.z_bar_T for r in self.records_])

    def inverse_transform(self, Z):
        self._check_fitted()
        if not hasattr(self, "records_"):
            raise NotFittedError("inverse_transform needs the cached noises of a previous transform() call")
        Z = check_latents(Z, "Z")
        if len(Z) != len(self.records_):
            raise ValueError(f"expected {len(self.records_)} latents to match the last transform, got {len(Z)}")
        return np.stack([joint_infer(r, self.schedule_, start=z)[0] for r, z in zip(self.records_, Z)])


class DDIMInversion(_InversionBase):
    """Plain DDIM inversion; the inverse re-predicts noise along the way."""

    def transform(self, X, conditions=None):
        self._check_fitted()
        X = check_latents(X)
        C = check_conditions(conditions, len(X), self.predictor.condition_dim)
        self.conditions_ = C
        return np.stack([ddim_invert(x, self.predictor, c, self.omega, self.plan_, self.schedule_).final
                         for x, c in zip(X, C)])

    def inverse_transform(self, Z, conditions=None):
        self._check_fitted()
        Z = check_latents(Z, "Z")
        if conditions is None and getattr(self, "conditions_", None) is not None and len(self.conditions_) == len(Z):
            C = self.conditions_
        else:
            C = check_conditions(conditions, len(Z), self.predictor.condition_dim)
        return np.stack([ddim_infer(z, self.predictor, c, self.omega, self.plan_, self.schedule_).final
                         for z, c in zip(Z, C)])
