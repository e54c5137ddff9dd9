"""Synthetic latents: procedural 32x32 shapes and the matching mixture prior."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .predictor import GmmDataModel, one_hot
from .tensorio import Rng

SIDE = 32
KINDS = ("disk", "square", "bar")
BACKGROUND = 0.1


def render_shape(kind: int, cx: float, cy: float, size: float, intensity: float, side: int = SIDE) -> np.ndarray:
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    if KINDS[kind] == "disk":
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= size**2
    elif KINDS[kind] == "square":
        mask = (np.abs(xx - cx) <= size) & (np.abs(yy - cy) <= size)
    else:
        mask = (np.abs(xx - cx) <= 1.6 * size) & (np.abs(yy - cy) <= 0.4 * size)
    img = np.full((side, side), BACKGROUND)
    img[mask] = intensity
    return img


@dataclass
class ShapesDataset:
    """Images ``(N, 32, 32)``, shape kinds, generation parameters and conditions.

    ``params`` rows are ``(kind, cx, cy, size, intensity)``.  The condition fed
    to predictors is ``[one_hot(kind) | style=0]``.
    """

    images: np.ndarray
    kinds: np.ndarray
    params: np.ndarray
    conditions: np.ndarray

    def __len__(self):
        return len(self.images)


def make_shapes(count: int, seed: int, side: int = SIDE) -> ShapesDataset:
    gen = Rng(seed).generator
    images, kinds, params = [], [], []
    for _ in range(count):
        kind = int(gen.integers(len(KINDS)))
        cx, cy = gen.uniform(side * 0.35, side * 0.65, size=2)
        size = gen.uniform(side * 0.12, side * 0.22)
        intensity = gen.uniform(0.5, 0.9)
        images.append(render_shape(kind, cx, cy, size, intensity, side))
        kinds.append(kind)
        params.append((kind, cx, cy, size, intensity))
    kinds = np.array(kinds)
    conditions = np.stack([one_hot(k, len(KINDS) + 1) for k in kinds])
    return ShapesDataset(np.stack(images), kinds, np.array(params), conditions)


def style_pattern(side: int = SIDE, amplitude: float = 0.15) -> np.ndarray:
    """2-pixel checkerboard used as the global style direction."""
    yy, xx = np.mgrid[0:side, 0:side]
    return amplitude * np.where(((yy // 2) + (xx // 2)) % 2 == 0, 1.0, -1.0)


def shape_prior(side: int = SIDE, variance: float = 0.05) -> GmmDataModel:
    """One component per shape kind, centred, with a checkerboard style direction."""
    c = (side - 1) / 2.0
    means = np.stack([render_shape(k, c, c, side * 0.17, 0.7, side) for k in range(len(KINDS))])
    weights = np.full(len(KINDS), 1.0 / len(KINDS))
    return GmmDataModel(weights, means, variance, style_pattern(side))


def make_gmm_samples(model: GmmDataModel, count: int, seed: int, gain: float = 20.0):
    """Latents drawn from ``model`` with conditions ``[one_hot(component) | 0]``."""
    X, ks = model.sample(Rng(seed), count, gain=gain)
    conditions = np.stack([one_hot(k, model.condition_dim) for k in ks])
    return X, ks, conditions
