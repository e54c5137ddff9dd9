"""Experiment suites behind the command-line interface.

Each ``cmd_*`` function takes an :class:`ExperimentConfig` and an output
directory, writes CSV files there and returns a small summary.  All CSV
content is a deterministic function of the config and seed; wall-clock
measurements go to separate ``*_wallclock.csv`` files.
"""

from __future__ import annotations

import copy
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import edit as edit_mod
from .config import ConfigError, ExperimentConfig
from .data import make_gmm_samples, make_shapes, shape_prior
from .dci import dci_invert, joint_infer
from .ddim import INFERENCE, Trajectory, ddim_infer, ddim_invert
from .edit import DcsConfig, EditConfig, edit_run, rewrite_condition, step_modes
from .metrics import compare, pca_project, write_csv
from .predictor import ConstantPredictor, MlpNoisePredictor, gmm_predictor, load_mlp, save_mlp
from .schedule import make_linear_schedule, make_plan
from .tensorio import write_tensor

log = logging.getLogger(__name__)


class AcceptanceFailure(RuntimeError):
    pass


@dataclass
class Dataset:
    images: np.ndarray
    conditions: np.ndarray

    def __len__(self):
        return len(self.images)


def build_schedule(cfg: ExperimentConfig):
    s = cfg["schedule"]
    try:
        return make_linear_schedule(s["T_train"], s["beta_start"], s["beta_end"])
    except ValueError as exc:
        raise ConfigError(f"[schedule]: {exc}") from exc


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    d = cfg["data"]
    if d["count"] < 1:
        raise ConfigError("[data] count must be positive")
    if d["kind"] == "shapes-32":
        ds = make_shapes(d["count"], d["seed"])
        return Dataset(ds.images, ds.conditions)
    X, _, conds = make_gmm_samples(shape_prior(variance=cfg["predictor"]["variance"]), d["count"], d["seed"],
                                   gain=cfg["predictor"]["gain"])
    return Dataset(X, conds)


def train_mlp(cfg: ExperimentConfig, data: Dataset, schedule, seed: int):
    p = cfg["predictor"]
    est = MlpNoisePredictor(hidden=p["hidden"], epochs=p["epochs"], lr=p["lr"], batch_size=p["batch_size"],
                            p_uncond=p["p_uncond"], schedule=schedule, random_state=seed)
    return est.fit(data.images, data.conditions)


def build_predictor(cfg: ExperimentConfig, schedule, data: Dataset):
    p = cfg["predictor"]
    cdim = data.conditions.shape[1]
    if p["kind"] == "constant":
        return ConstantPredictor(p["value"], cdim)
    if p["kind"] == "gmm":
        return gmm_predictor(shape_prior(variance=p["variance"]), schedule, p["gain"])
    ckpt = cfg.path("predictor", "checkpoint")
    if ckpt is not None:
        return MlpNoisePredictor.from_params(load_mlp(ckpt), schedule=schedule)
    return train_mlp(cfg, data, schedule, cfg["data"]["seed"])


def _map_items(cfg, fn, n):
    """Run ``fn(i)`` for every item; results come back in item order."""
    jobs = max(1, cfg["run"]["jobs"])
    if jobs == 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, range(n)))


# ---------------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig, out: Path) -> dict:
    schedule = build_schedule(cfg)
    data = build_dataset(cfg)
    est = train_mlp(cfg, data, schedule, cfg["data"]["seed"])
    save_mlp(est.params_, out / "checkpoint")
    write_csv(out / "loss.csv", ["epoch", "loss"], [[i + 1, float(v)] for i, v in enumerate(est.loss_curve_)])
    return {"checkpoint": out / "checkpoint", "loss": est.loss_curve_}


def _recon_item(cfg, predictor, schedule, plan, omega, z0, c):
    pred = copy.deepcopy(predictor)
    pred.reset_calls()
    rows = {}
    inv = ddim_invert(z0, pred, c, omega, plan, schedule)
    rec_ddim = ddim_infer(inv.final, pred, c, omega, plan, schedule).final
    rows["ddim"] = dict(compare(rec_ddim, z0), calls=pred.call_count)

    pred.reset_calls()
    rec = dci_invert(z0, pred, c, omega, plan, schedule)
    z_rec, _ = joint_infer(rec, schedule)
    rows["dci"] = dict(compare(z_rec, z0), calls=pred.call_count)

    pred.reset_calls()
    rec1 = dci_invert(z0, pred, c, 1.0, plan, schedule)
    d = cfg["dcs"]
    dcs = DcsConfig(Omega=max(1.0, omega), eta=d["recon_eta"], t_end=d["t_end"])
    ecfg = _edit_config(cfg, dcs, c, c)
    z_g = edit_run(rec1, ecfg, pred, plan, schedule).z0
    rows["dci-guided"] = dict(compare(z_g, z0), calls=pred.call_count)
    return rows


def _edit_config(cfg, dcs, source, target) -> EditConfig:
    d = cfg["dcs"]
    try:
        return EditConfig(dcs=dcs, source_condition=source, target_condition=target, r=d["r"],
                          strong_mix=(d["m_strong"], d["n_strong"]), ramp_mix=(d["m"], d["n"]),
                          ji_condition=d["ji_condition"])
    except edit_mod.ConfigError as exc:
        raise ConfigError(f"[dcs]: {exc}") from exc


RECON_HEADER = ["method", "steps", "omega", "mse", "psnr", "ssim", "max_abs", "calls"]


def cmd_reconstruct(cfg: ExperimentConfig, out: Path) -> dict:
    """Reconstruction grid over step counts and guidance scales.

    Writes ``reconstruct.csv`` (dataset means per cell) and
    ``reconstruct_items.csv``.  Fails the acceptance check if the dual-chain
    reconstruction is not exact to 1e-6 in every cell.
    """
    schedule = build_schedule(cfg)
    data = build_dataset(cfg)
    predictor = build_predictor(cfg, schedule, data)
    grid, items = [], []
    worst = 0.0
    for n in cfg["plan"]["n_steps"]:
        plan = make_plan(schedule.T_train, n)
        for omega in cfg["plan"]["omegas"]:
            results = _map_items(cfg, lambda i: _recon_item(cfg, predictor, schedule, plan, omega,
                                                            data.images[i], data.conditions[i]), len(data))
            for method in ("ddim", "dci", "dci-guided"):
                vals = [r[method] for r in results]
                grid.append([method, n, float(omega)] + [float(np.mean([v[k] for v in vals]))
                                                         for k in ("mse", "psnr", "ssim", "max_abs")]
                            + [int(vals[0]["calls"])])
                for i, v in enumerate(vals):
                    items.append([i, method, n, float(omega), v["mse"], v["psnr"], v["ssim"], v["max_abs"], v["calls"]])
            worst = max(worst, max(r["dci"]["max_abs"] for r in results))
    write_csv(out / "reconstruct.csv", RECON_HEADER, grid)
    write_csv(out / "reconstruct_items.csv", ["item"] + RECON_HEADER, items)
    if worst > 1e-6:
        raise AcceptanceFailure(f"dual-chain reconstruction error {worst:.3e} exceeds 1e-6")
    return {"grid": grid, "items": items, "worst_dci_max_abs": worst}


def cmd_edit(cfg: ExperimentConfig, out: Path) -> dict:
    """Edits of the first ``[edit] items`` dataset items for each type and eta."""
    schedule = build_schedule(cfg)
    data = build_dataset(cfg)
    predictor = build_predictor(cfg, schedule, data)
    n = cfg["plan"]["n_steps"][-1]
    plan = make_plan(schedule.T_train, n)
    e, d = cfg["edit"], cfg["dcs"]
    n_comp = data.conditions.shape[1] - 1
    rows, sweep = [], {}
    logs_dir, tens_dir = out / "logs", out / "tensors"
    logs_dir.mkdir(parents=True, exist_ok=True)
    tens_dir.mkdir(parents=True, exist_ok=True)
    mismatches = []
    for i in range(min(e["items"], len(data))):
        z0, c = data.images[i], data.conditions[i]
        rec = dci_invert(z0, predictor, c, 1.0, plan, schedule)
        z_rec, _ = joint_infer(rec, schedule)
        write_tensor(tens_dir / f"item{i:03d}_original.erdt", z0)
        rows.append([i, "none", "reconstruction", "", *_metric_cells(z_rec, z0)])
        for kind in e["types"]:
            try:
                target = rewrite_condition(c, kind, n_comp, amount=e["amount"], style=e["style"])
            except ValueError as exc:
                raise ConfigError(f"[edit]: {exc}") from exc
            for eta in d["eta"]:
                dcs = DcsConfig(Omega=d["omega"], eta=eta, t_end=d["t_end"])
                res = edit_run(rec, _edit_config(cfg, dcs, c, target), predictor, plan, schedule)
                tag = f"item{i:03d}_{kind}_eta{eta:.2f}"
                res.write_log(logs_dir / f"{tag}.csv")
                write_tensor(tens_dir / f"{tag}.erdt", res.z0)
                rows.append([i, kind, "edited", float(eta), *_metric_cells(res.z0, z0)])
                sweep.setdefault((kind, float(eta)), []).append(float(np.mean((res.z0 - z0) ** 2)))
                expected = step_modes(plan, dcs.bind(plan).sigma, d["r"])
                if [(s.t, s.mode) for s in res.log] != expected:
                    mismatches.append(tag)
    write_csv(out / "edit.csv", ["item", "type", "stage", "eta", "mse", "psnr", "ssim", "max_abs"], rows)
    sweep_rows = [[k, eta, float(np.mean(v))] for (k, eta), v in sorted(sweep.items())]
    write_csv(out / "edit_eta_sweep.csv", ["type", "eta", "mean_mse_to_original"], sweep_rows)
    if mismatches:
        raise AcceptanceFailure(f"step modes deviate from the editing schedule in {mismatches}")
    return {"rows": rows, "sweep": sweep_rows}


def _metric_cells(a, b):
    m = compare(a, b)
    return [m["mse"], m["psnr"], m["ssim"], m["max_abs"]]


BENCH_HEADER = ["steps", "omega", "method", "inversion_calls", "inference_calls", "total_calls"]


def cmd_bench(cfg: ExperimentConfig, out: Path) -> dict:
    """Predictor-call accounting for plain DDIM vs dual-chain, plus wall-clock.

    Asserts: dual-chain inversion uses exactly twice the calls of DDIM
    inversion, cached joint inference uses none, so pipeline totals match.
    """
    schedule = build_schedule(cfg)
    data = build_dataset(cfg)
    predictor = build_predictor(cfg, schedule, data)
    z0, c = data.images[0], data.conditions[0]
    rows, clock, failures = [], [], []
    for n in cfg["plan"]["n_steps"]:
        plan = make_plan(schedule.T_train, n)
        for omega in sorted({1.0, *cfg["plan"]["omegas"]}):
            per_eval = 1 if omega == 1.0 else 2
            predictor.reset_calls()
            t0 = time.perf_counter()
            inv = ddim_invert(z0, predictor, c, omega, plan, schedule)
            ddim_inv = predictor.call_count
            ddim_infer(inv.final, predictor, c, omega, plan, schedule)
            ddim_inf = predictor.call_count - ddim_inv
            t_ddim = time.perf_counter() - t0

            predictor.reset_calls()
            t0 = time.perf_counter()
            rec = dci_invert(z0, predictor, c, omega, plan, schedule)
            dci_inv = predictor.call_count
            joint_infer(rec, schedule)
            dci_inf = predictor.call_count - dci_inv
            t_dci = time.perf_counter() - t0

            rows.append([n, float(omega), "ddim", ddim_inv, ddim_inf, ddim_inv + ddim_inf])
            rows.append([n, float(omega), "dci", dci_inv, dci_inf, dci_inv + dci_inf])
            clock.append([n, float(omega), "ddim", t_ddim])
            clock.append([n, float(omega), "dci", t_dci])
            checks = {
                "ddim inversion == n": ddim_inv == n * per_eval,
                "dci inversion == 2n": dci_inv == 2 * n * per_eval,
                "cached inference == 0": dci_inf == 0,
                "totals equal": dci_inv + dci_inf == ddim_inv + ddim_inf,
            }
            failures += [f"steps={n} omega={omega}: {k}" for k, ok in checks.items() if not ok]
    write_csv(out / "bench.csv", BENCH_HEADER, rows)
    write_csv(out / "bench_wallclock.csv", ["steps", "omega", "method", "seconds"], clock)
    if failures:
        raise AcceptanceFailure("call accounting failed: " + "; ".join(failures))
    return {"rows": rows, "wallclock": clock}


def cmd_traj(cfg: ExperimentConfig, out: Path) -> dict:
    """Trajectories of joint inference, plain DDIM and three edits, projected to 2-D."""
    schedule = build_schedule(cfg)
    data = build_dataset(cfg)
    predictor = build_predictor(cfg, schedule, data)
    plan = make_plan(schedule.T_train, cfg["plan"]["n_steps"][-1])
    d, e = cfg["dcs"], cfg["edit"]
    z0, c = data.images[0], data.conditions[0]
    n_comp = data.conditions.shape[1] - 1
    rec = dci_invert(z0, predictor, c, 1.0, plan, schedule)
    _, jit = joint_infer(rec, schedule)
    dit = ddim_infer(rec.ddim_chain.final, predictor, c, 1.0, plan, schedule)
    trajs = {"JIT": jit, "DIT": dit}
    dcs = DcsConfig(Omega=d["omega"], eta=d["traj_eta"], t_end=d["t_end"])
    for kind in ("T1", "T2", "T3"):
        target = rewrite_condition(c, kind, n_comp, amount=e["amount"], style=e["style"])
        trajs[f"edit-{kind}"] = edit_run(rec, _edit_config(cfg, dcs, c, target), predictor, plan, schedule).trajectory
    origin = Trajectory(INFERENCE)
    origin.append(0, z0)
    trajs["z0"] = origin
    proj = pca_project(trajs, k=2, reference="JIT")
    coord_rows = []
    for name, pts in proj.coords.items():
        for t, (x, y) in zip(proj.timesteps[name], pts):
            coord_rows.append([name, t, float(x), float(y)])
    dist_rows = []
    for name, series in proj.distances.items():
        for t, v in zip(proj.timesteps[name], series):
            dist_rows.append([name, t, float(v)])
    write_csv(out / "traj_coords.csv", ["trajectory", "t", "pc1", "pc2"], coord_rows)
    write_csv(out / "traj_distance.csv", ["trajectory", "t", "distance_to_jit"], dist_rows)
    return {"projection": proj, "trajectories": trajs}


COMMANDS = {
    "train": cmd_train,
    "reconstruct": cmd_reconstruct,
    "edit": cmd_edit,
    "bench": cmd_bench,
    "traj": cmd_traj,
}

