"""Reconstruction metrics and trajectory projection."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 8


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a, b, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB, capped at ``PSNR_CAP_DB``."""
    if peak <= 0:
        raise ValueError("peak must be positive")
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * math.log10(peak**2 / err))


def ssim(a, b, peak: float = 1.0) -> float:
    """Mean SSIM over all 8x8 uniform windows (stride 1, population statistics)."""
    a, b = _pair(a, b)
    if a.ndim != 2 or min(a.shape) < SSIM_WINDOW:
        raise ValueError(f"ssim needs a 2-D image with sides >= {SSIM_WINDOW}, got shape {a.shape}")
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    wa = sliding_window_view(a, (SSIM_WINDOW, SSIM_WINDOW))
    wb = sliding_window_view(b, (SSIM_WINDOW, SSIM_WINDOW))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    var_a = wa.var(axis=(-2, -1))
    var_b = wb.var(axis=(-2, -1))
    cov = ((wa - mu_a[..., None, None]) * (wb - mu_b[..., None, None])).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def compare(output, reference, peak: float = 1.0) -> dict:
    """mse, psnr, ssim (nan unless 2-D and large enough) and max-abs error."""
    output, reference = _pair(output, reference)
    try:
        s = ssim(output, reference, peak)
    except ValueError:
        s = float("nan")
    return {
        "mse": mse(output, reference),
        "psnr": psnr(output, reference, peak),
        "ssim": s,
        "max_abs": float(np.max(np.abs(output - reference))),
    }


@dataclass
class ReconRow:
    method: str
    mse: float
    psnr: float
    ssim: float
    max_abs: float
    calls: int = 0
    seconds: float = 0.0


@dataclass
class ReconReport:
    rows: list[ReconRow] = field(default_factory=list)

    def __getitem__(self, method: str) -> ReconRow:
        for row in self.rows:
            if row.method == method:
                return row
        raise KeyError(method)

    @property
    def methods(self) -> list[str]:
        return [r.method for r in self.rows]


def format_float(x: float) -> str:
    return "nan" if x != x else f"{x:.10e}"


def write_csv(path, header, rows) -> None:
    """Write rows with floats in a fixed ``%.10e`` format so files are byte-stable."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, float) else v for v in row])


RECON_COLUMNS = [f.name for f in fields(ReconRow) if f.name != "seconds"]


# ---------------------------------------------------------------------------
# trajectory analysis


@dataclass
class TrajectoryProjection:
    coords: dict[str, np.ndarray]
    timesteps: dict[str, list[int]]
    explained_variance: np.ndarray
    distances: dict[str, np.ndarray] = field(default_factory=dict)
    degenerate: bool = False


def distance_series(a, b) -> np.ndarray:
    """Per-timestep Euclidean distance between two aligned trajectories."""
    if list(a.timesteps) != list(b.timesteps):
        raise ValueError("trajectories must share timesteps")
    return np.array([np.linalg.norm((x - y).ravel()) for x, y in zip(a.latents, b.latents)])


def pca_project(trajectories: dict, k: int = 2, reference: str | None = None) -> TrajectoryProjection:
    """Project all latents of all trajectories onto their top-``k`` principal axes.

    Uses the eigen-decomposition of the Gram matrix of centred points, whose
    size is the number of points rather than the latent dimension.  Each
    component's sign is fixed so its largest-magnitude coordinate is
    positive.  If ``reference`` names a trajectory, full-dimensional distance
    series of every other aligned trajectory to it are included.
    """
    names = list(trajectories)
    points = [np.asarray(z, dtype=np.float64).ravel() for n in names for z in trajectories[n].latents]
    if len(points) < 2:
        raise ValueError("need at least two points to project")
    X = np.stack(points)
    Xc = X - X.mean(axis=0)
    gram = Xc @ Xc.T
    evals, evecs = np.linalg.eigh(gram)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    coords = np.zeros((len(points), k))
    degenerate = not np.any(evals > 1e-12 * max(1.0, float(np.abs(X).max()) ** 2))
    if not degenerate:
        m = min(k, len(points))
        coords[:, :m] = evecs[:, :m] * np.sqrt(evals[:m])
        for j in range(m):
            col = coords[:, j]
            if col[np.argmax(np.abs(col))] < 0:
                coords[:, j] = -col
    explained = np.zeros(k)
    explained[: min(k, len(evals))] = evals[:k] / max(len(points) - 1, 1)
    out, ts, start = {}, {}, 0
    for n in names:
        count = len(trajectories[n])
        out[n] = coords[start:start + count]
        ts[n] = list(trajectories[n].timesteps)
        start += count
    dists = {}
    if reference is not None:
        ref = trajectories[reference]
        for n in names:
            if n != reference and list(trajectories[n].timesteps) == list(ref.timesteps):
                dists[n] = distance_series(trajectories[n], ref)
    return TrajectoryProjection(out, ts, explained, dists, degenerate)
