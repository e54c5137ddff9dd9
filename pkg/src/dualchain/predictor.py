"""Noise predictors, classifier-free guidance and the toy condition space.

A predictor maps ``(z, c, t)`` to a noise estimate with the same shape as
``z``.  Conditions are 1-D float vectors; the null condition is all zeros.
Every evaluation goes through :meth:`NoisePredictor.__call__`, which counts it.
"""

from __future__ import annotations

import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator

from .schedule import NoiseSchedule, make_linear_schedule
from .tensorio import Rng, as_tensor, read_tensor, write_tensor


class TrainingError(RuntimeError):
    pass


class _CallCounter:
    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self._value += n

    @property
    def value(self) -> int:
        return self._value

    def __deepcopy__(self, memo):
        fresh = _CallCounter()
        fresh._value = self._value
        return fresh

    def __getstate__(self):
        return {"_value": self._value}

    def __setstate__(self, state):
        self._lock = threading.Lock()
        self._value = state["_value"]


def null_condition(dim: int) -> np.ndarray:
    return np.zeros(int(dim), dtype=np.float64)


def one_hot(index: int, dim: int) -> np.ndarray:
    if not 0 <= index < dim:
        raise ValueError(f"index {index} out of range for dimension {dim}")
    c = null_condition(dim)
    c[index] = 1.0
    return c


class NoisePredictor(BaseEstimator):
    """Base class: subclasses implement ``_predict(z, c, t)``."""

    condition_dim = None

    @property
    def call_count(self) -> int:
        return self._counter().value

    def _counter(self) -> _CallCounter:
        counter = self.__dict__.get("_calls")
        if counter is None:
            counter = self.__dict__.setdefault("_calls", _CallCounter())
        return counter

    def reset_calls(self) -> None:
        self._calls = _CallCounter()

    def null_condition(self) -> np.ndarray:
        return null_condition(self.condition_dim or 0)

    def _check_condition(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        if self.condition_dim is not None and c.size != self.condition_dim:
            raise ValueError(f"condition has dimension {c.size}, predictor expects {self.condition_dim}")
        return c

    def __call__(self, z, c, t) -> np.ndarray:
        z = as_tensor(z, "latent")
        c = self._check_condition(c)
        self._counter().add(1)
        eps = self._predict(z, c, int(t))
        if eps.shape != z.shape:
            raise RuntimeError(f"predictor returned shape {eps.shape} for input {z.shape}")
        return eps

    def _predict(self, z, c, t):
        raise NotImplementedError


def cfg_combine(pred: NoisePredictor, z, c, t, omega: float) -> np.ndarray:
    """Guided noise ``eps_null + omega * (eps_cond - eps_null)``.

    At ``omega == 1`` the unconditional branch has zero weight and is skipped.
    """
    if omega < 0:
        raise ValueError("guidance scale must be non-negative")
    eps_c = pred(z, c, t)
    if omega == 1.0:
        return eps_c
    eps_u = pred(z, null_condition(np.asarray(c).size), t)
    if eps_u.shape != eps_c.shape:
        raise RuntimeError("conditional and unconditional predictions differ in shape")
    return eps_u + omega * (eps_c - eps_u)


class ConstantPredictor(NoisePredictor):
    """Returns ``value`` broadcast to the query shape, whatever the input."""

    def __init__(self, value=0.0, condition_dim=None):
        self.value = value
        self.condition_dim = condition_dim

    def _predict(self, z, c, t):
        value = as_tensor(np.atleast_1d(self.value), "value")
        return np.broadcast_to(value, z.shape).astype(np.float64, copy=True)


def constant_predictor(value, condition_dim=None) -> ConstantPredictor:
    return ConstantPredictor(value, condition_dim)


@dataclass
class GmmDataModel:
    """Isotropic Gaussian mixture over latents of a fixed shape.

    Conditions have ``K + 1`` entries: ``c[:K]`` are log-weight boosts scaled
    by the predictor gain, ``c[K]`` shifts every mean along
    ``style_direction`` (zero when no style direction is set).
    """

    weights: np.ndarray
    means: np.ndarray
    variance: float
    style_direction: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        self.means = np.asarray(self.means, dtype=np.float64)
        if self.means.ndim < 2 or self.means.shape[0] != self.weights.size:
            raise ValueError("means must have shape (K, *latent_shape) matching weights")
        if np.any(self.weights <= 0) or abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be positive and sum to 1")
        if self.variance < 0:
            raise ValueError("variance must be non-negative")
        if self.style_direction is not None:
            self.style_direction = np.asarray(self.style_direction, dtype=np.float64)
            if self.style_direction.shape != self.latent_shape:
                raise ValueError("style_direction must match the latent shape")

    @property
    def n_components(self) -> int:
        return self.weights.size

    @property
    def latent_shape(self) -> tuple[int, ...]:
        return self.means.shape[1:]

    @property
    def condition_dim(self) -> int:
        return self.n_components + 1

    def conditioned(self, c, gain: float) -> tuple[np.ndarray, np.ndarray]:
        """Component weights and means under condition ``c``."""
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        if c.size != self.condition_dim:
            raise ValueError(f"condition must have {self.condition_dim} entries")
        logw = np.log(self.weights) + gain * c[: self.n_components]
        w = np.exp(logw - logw.max())
        w /= w.sum()
        means = self.means
        if self.style_direction is not None and c[-1] != 0.0:
            means = means + c[-1] * self.style_direction
        return w, means

    def sample(self, rng: Rng, n: int, c=None, gain: float = 20.0):
        """Draw ``n`` latents; returns ``(samples, component_indices)``."""
        c = null_condition(self.condition_dim) if c is None else c
        w, means = self.conditioned(c, gain)
        gen = rng.generator
        ks = gen.choice(self.n_components, size=n, p=w)
        noise = gen.standard_normal((n,) + self.latent_shape)
        return means[ks] + math.sqrt(self.variance) * noise, ks


class GmmNoisePredictor(NoisePredictor):
    """Closed-form optimal noise prediction for a Gaussian-mixture prior.

    Under the marginal ``z_t = sqrt(ab) z0 + sqrt(1 - ab) eps`` each component
    gives ``z_t ~ N(sqrt(ab) mu_k, v I)`` with ``v = ab s2 + 1 - ab``, so

        E[eps | z_t] = sum_k r_k(z_t) sqrt(1 - ab) (z_t - sqrt(ab) mu_k) / v.

    ``fit(X, y)`` estimates the mixture from labelled latents.
    """

    def __init__(self, model: GmmDataModel | None = None, schedule: NoiseSchedule | None = None, gain=20.0):
        self.model = model
        self.schedule = schedule
        self.gain = gain

    @property
    def condition_dim(self):
        return None if self.model is None else self.model.condition_dim

    def fit(self, X, y, style_direction=None):
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y)
        labels = np.unique(y)
        means = np.stack([X[y == k].mean(axis=0) for k in labels])
        resid = X - means[np.searchsorted(labels, y)]
        variance = float(np.mean(resid**2))
        weights = np.array([np.mean(y == k) for k in labels])
        self.model = GmmDataModel(weights / weights.sum(), means, variance, style_direction)
        if self.schedule is None:
            self.schedule = make_linear_schedule()
        return self

    def _predict(self, z, c, t):
        if self.model is None:
            raise RuntimeError("GmmNoisePredictor has no data model; call fit() first")
        if z.shape != self.model.latent_shape:
            raise ValueError(f"latent shape {z.shape} does not match model {self.model.latent_shape}")
        ab = self.schedule.alpha_bar_at(t)
        if ab >= 1.0:
            raise ZeroDivisionError(f"alpha_bar is 1 at t={t}; the noise posterior is undefined")
        w, means = self.model.conditioned(c, self.gain)
        v = ab * self.model.variance + (1.0 - ab)
        diff = z[None] - math.sqrt(ab) * means
        axes = tuple(range(1, diff.ndim))
        logr = np.log(w) - np.sum(diff**2, axis=axes) / (2.0 * v)
        r = np.exp(logr - logr.max())
        r /= r.sum()
        return math.sqrt(1.0 - ab) / v * np.tensordot(r, diff, axes=1)


def gmm_predictor(model: GmmDataModel, schedule: NoiseSchedule, gain: float = 20.0) -> GmmNoisePredictor:
    return GmmNoisePredictor(model, schedule, gain)


# ---------------------------------------------------------------------------
# small trainable network


def time_embedding(t, T_train: int, n_freqs: int = 8) -> np.ndarray:
    """Sinusoidal embedding of ``t / T_train``: ``[sin(2^j pi s), cos(2^j pi s)]``."""
    s = np.asarray(t, dtype=np.float64)[..., None] / T_train
    freqs = np.pi * 2.0 ** np.arange(n_freqs)
    return np.concatenate([np.sin(freqs * s), np.cos(freqs * s)], axis=-1)


@dataclass
class MlpParams:
    latent_shape: tuple[int, ...]
    condition_dim: int
    hidden: int
    T_train: int
    n_freqs: int
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    NAMES = ("W1", "b1", "W2", "b2")

    @property
    def latent_size(self) -> int:
        return int(np.prod(self.latent_shape))

    @property
    def input_size(self) -> int:
        return self.latent_size + 2 * self.n_freqs + self.condition_dim

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.NAMES}

    def copy(self) -> "MlpParams":
        kw = {name: arr.copy() for name, arr in self.arrays().items()}
        return MlpParams(self.latent_shape, self.condition_dim, self.hidden, self.T_train, self.n_freqs, **kw)

    def n_parameters(self) -> int:
        return sum(a.size for a in self.arrays().values())


def mlp_init(latent_shape, condition_dim: int, hidden: int = 64, T_train: int = 1000,
             n_freqs: int = 8, rng: Rng | None = None, scale: float = 1.0) -> MlpParams:
    """Glorot-style init; ``rng=None`` gives all-zero weights."""
    latent_shape = tuple(int(s) for s in np.atleast_1d(latent_shape))
    d = int(np.prod(latent_shape))
    n_in = d + 2 * n_freqs + condition_dim
    if rng is None:
        W1, W2 = np.zeros((hidden, n_in)), np.zeros((d, hidden))
    else:
        g = rng.generator
        W1 = g.standard_normal((hidden, n_in)) * scale / math.sqrt(n_in)
        W2 = g.standard_normal((d, hidden)) * scale / math.sqrt(hidden)
    return MlpParams(latent_shape, int(condition_dim), int(hidden), int(T_train), int(n_freqs),
                     W1, np.zeros(hidden), W2, np.zeros(d))


def _mlp_inputs(p: MlpParams, z, c, t) -> np.ndarray:
    """Batched network input: rows of ``[z_flat, emb(t), c]``."""
    z = np.asarray(z, dtype=np.float64).reshape(-1, p.latent_size)
    b = z.shape[0]
    emb = np.broadcast_to(time_embedding(np.broadcast_to(np.asarray(t), (b,)), p.T_train, p.n_freqs),
                          (b, 2 * p.n_freqs))
    if p.condition_dim == 0:
        c = np.zeros((b, 0))
    else:
        c = np.broadcast_to(np.asarray(c, dtype=np.float64).reshape(-1, p.condition_dim), (b, p.condition_dim))
    return np.concatenate([z, emb, c], axis=1)


def mlp_forward(p: MlpParams, z, c, t) -> np.ndarray:
    z = as_tensor(z, "latent")
    if z.shape != p.latent_shape:
        raise ValueError(f"latent shape {z.shape} does not match network {p.latent_shape}")
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    if c.size != p.condition_dim:
        raise ValueError(f"condition has dimension {c.size}, network expects {p.condition_dim}")
    x = _mlp_inputs(p, z, c, t)
    h = np.tanh(x @ p.W1.T + p.b1)
    return (h @ p.W2.T + p.b2).reshape(z.shape)


def mlp_loss_and_grad(p: MlpParams, z_t, c, t, eps) -> tuple[float, dict[str, np.ndarray]]:
    """Mean squared noise-prediction error over a batch and its exact gradient.

    ``z_t`` and ``eps`` have shape ``(B, *latent_shape)``, ``c`` ``(B, cdim)``
    and ``t`` ``(B,)``.
    """
    x = _mlp_inputs(p, z_t, c, t)
    target = np.asarray(eps, dtype=np.float64).reshape(x.shape[0], p.latent_size)
    h = np.tanh(x @ p.W1.T + p.b1)
    out = h @ p.W2.T + p.b2
    resid = out - target
    n = resid.size
    loss = float(np.sum(resid**2) / n)
    d_out = 2.0 * resid / n
    d_pre = (d_out @ p.W2) * (1.0 - h**2)
    grads = {
        "W2": d_out.T @ h,
        "b2": d_out.sum(axis=0),
        "W1": d_pre.T @ x,
        "b1": d_pre.sum(axis=0),
    }
    return loss, grads


def mlp_train(p: MlpParams, data, schedule: NoiseSchedule, rng: Rng, epochs: int, lr: float,
              conditions=None, batch_size: int = 32, p_uncond: float = 0.1,
              samples_per_epoch: int = 256, callback=None) -> tuple[MlpParams, list[float]]:
    """Adam on the noise-prediction loss with analytic gradients.

    ``data`` is either an array of latents ``(N, *latent_shape)`` (with
    optional per-item ``conditions``) or a :class:`GmmDataModel`, in which
    case ``samples_per_epoch`` fresh samples are drawn every epoch.  Returns
    the trained copy and the per-epoch mean loss.  ``callback(epoch, params)``
    runs after every epoch.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    p = p.copy()
    if epochs <= 0:
        return p, []
    gen = rng.generator
    beta1, beta2, adam_eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    v = {k: np.zeros_like(v) for k, v in p.arrays().items()}
    step = 0
    curve = []
    for epoch in range(epochs):
        if isinstance(data, GmmDataModel):
            X, _ = data.sample(rng, samples_per_epoch)
            C = np.zeros((len(X), p.condition_dim))
        else:
            X = np.asarray(data, dtype=np.float64)
            C = np.zeros((len(X), p.condition_dim)) if conditions is None else np.asarray(conditions, dtype=np.float64)
        order = gen.permutation(len(X))
        batch_losses = []
        for start in range(0, len(X), batch_size):
            idx = order[start:start + batch_size]
            z0 = X[idx]
            b = len(idx)
            t = gen.integers(1, schedule.T_train + 1, size=b)
            eps = gen.standard_normal(z0.shape)
            ab = schedule.alpha_bar[t - 1].reshape((b,) + (1,) * (z0.ndim - 1))
            z_t = np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * eps
            c = C[idx] * (gen.random(b) >= p_uncond)[:, None]
            loss, grads = mlp_loss_and_grad(p, z_t, c, t, eps)
            if not math.isfinite(loss):
                raise TrainingError(f"loss diverged to {loss} at epoch {epoch}, step {step}, lr={lr}")
            step += 1
            for name, g in grads.items():
                m[name] = beta1 * m[name] + (1 - beta1) * g
                v[name] = beta2 * v[name] + (1 - beta2) * g**2
                m_hat = m[name] / (1 - beta1**step)
                v_hat = v[name] / (1 - beta2**step)
                getattr(p, name)[...] -= lr * m_hat / (np.sqrt(v_hat) + adam_eps)
            batch_losses.append(loss)
        curve.append(float(np.mean(batch_losses)))
        if callback is not None:
            callback(epoch, p)
    return p, curve


def save_mlp(p: MlpParams, directory) -> None:
    """Checkpoint as one tensor file per parameter plus ``manifest.txt``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, arr in p.arrays().items():
        write_tensor(directory / f"{name}.erdt", arr)
    lines = [
        f"latent_shape = {','.join(str(s) for s in p.latent_shape)}",
        f"condition_dim = {p.condition_dim}",
        f"hidden = {p.hidden}",
        f"T_train = {p.T_train}",
        f"n_freqs = {p.n_freqs}",
    ]
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_mlp(directory) -> MlpParams:
    directory = Path(directory)
    meta = {}
    for line in (directory / "manifest.txt").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    arrays = {name: read_tensor(directory / f"{name}.erdt") for name in MlpParams.NAMES}
    p = MlpParams(
        tuple(int(s) for s in meta["latent_shape"].split(",")),
        int(meta["condition_dim"]), int(meta["hidden"]), int(meta["T_train"]), int(meta["n_freqs"]),
        **arrays,
    )
    if p.W1.shape != (p.hidden, p.input_size) or p.W2.shape != (p.latent_size, p.hidden):
        raise ValueError(f"checkpoint {os.fspath(directory)} has inconsistent layer shapes")
    return p


class MlpNoisePredictor(NoisePredictor):
    """Two-layer tanh network predicting noise, trained with :func:`mlp_train`."""

    def __init__(self, hidden=64, n_freqs=8, epochs=50, lr=1e-3, batch_size=32,
                 p_uncond=0.1, schedule=None, random_state=0):
        self.hidden = hidden
        self.n_freqs = n_freqs
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.p_uncond = p_uncond
        self.schedule = schedule
        self.random_state = random_state

    @property
    def condition_dim(self):
        params = self.__dict__.get("params_")
        return None if params is None else params.condition_dim

    def fit(self, X, conditions=None, callback=None):
        X = np.asarray(X, dtype=np.float64)
        schedule = self.schedule or make_linear_schedule()
        cdim = 0 if conditions is None else np.asarray(conditions).shape[1]
        rng = Rng(self.random_state)
        init = mlp_init(X.shape[1:], cdim, self.hidden, schedule.T_train, self.n_freqs, rng.spawn(0))
        self.params_, self.loss_curve_ = mlp_train(
            init, X, schedule, rng.spawn(1), self.epochs, self.lr, conditions=conditions,
            batch_size=self.batch_size, p_uncond=self.p_uncond, callback=callback,
        )
        return self

    @classmethod
    def from_params(cls, params: MlpParams, **kwargs) -> "MlpNoisePredictor":
        est = cls(**kwargs)
        est.params_ = params
        return est

    def _predict(self, z, c, t):
        params = self.__dict__.get("params_")
        if params is None:
            raise RuntimeError("MlpNoisePredictor is not fitted")
        return mlp_forward(params, z, c, t)
