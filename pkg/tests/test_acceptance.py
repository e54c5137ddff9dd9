"""Acceptance checks, one test per criterion, each reporting a PASS/FAIL line.

The lines are collected in ``RESULTS`` and printed in the pytest terminal
summary (see ``conftest.py``); running this file directly prints them too.
"""

import csv
import math
import time

import numpy as np
import pytest
from scipy.stats import spearmanr

from dualchain.config import defaults
from dualchain.dci import dci_invert, joint_infer, reconstruct
from dualchain.ddim import ddim_infer, ddim_invert
from dualchain.edit import (
    DcsConfig,
    EditConfig,
    activation_step,
    dcs_scale,
    edit_run,
    rewrite_condition,
    step_modes,
)
from dualchain.harness import cmd_bench, cmd_traj
from dualchain.data import make_shapes, shape_prior
from dualchain.oracles import oracle_fd_gradient, oracle_step_inverse
from dualchain.predictor import (
    GmmDataModel,
    constant_predictor,
    gmm_predictor,
    mlp_forward,
    mlp_init,
    mlp_loss_and_grad,
    mlp_train,
)
from dualchain.schedule import NoiseSchedule, make_linear_schedule, make_plan
from dualchain.tensorio import Rng

RESULTS = []

STEPS = (10, 20, 50)
OMEGAS = (1.0, 2.0, 3.0)
N_ITEMS = 20


def report(label, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} {label}: {detail}"
    RESULTS.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def setup():
    schedule = make_linear_schedule()
    return schedule, make_shapes(N_ITEMS, 0), gmm_predictor(shape_prior(), schedule)


@pytest.fixture(scope="module")
def recon_grid(setup):
    schedule, data, gmm = setup
    t0 = time.perf_counter()
    grid = {}
    for n in STEPS:
        plan = make_plan(1000, n)
        for w in OMEGAS:
            grid[n, w] = [reconstruct(data.images[i], gmm, data.conditions[i], w, plan, schedule)
                          for i in range(N_ITEMS)]
    return grid, time.perf_counter() - t0


def test_criterion_1_exact_reversibility(recon_grid):
    grid, seconds = recon_grid
    worst = max(r["dci"].max_abs for reps in grid.values() for r in reps)
    low_ssim = min(r["dci"].ssim for reps in grid.values() for r in reps)
    ok = worst <= 1e-6 and low_ssim >= 0.9999 and seconds < 30.0
    assert report("criterion 1 (exact reversibility)", ok,
                  f"max-abs {worst:.2e} <= 1e-6, min SSIM {low_ssim:.6f} >= 0.9999, "
                  f"{seconds:.1f} s < 30 s over {len(grid)} cells x {N_ITEMS} images")


def test_criterion_2_ddim_error_accumulation(recon_grid):
    grid, _ = recon_grid
    ratios = []
    for reps in grid.values():
        ddim = np.mean([r["ddim"].mse for r in reps])
        dci = np.mean([r["dci"].mse for r in reps])
        ratios.append(ddim / max(dci, 1e-300))
    every_item = all(r["ddim"].mse >= 10 * r["dci"].mse for reps in grid.values() for r in reps)
    trend_bad = [(n, i) for n in STEPS for i in range(N_ITEMS)
                 if not grid[n, 3.0][i]["ddim"].mse > grid[n, 1.0][i]["ddim"].mse]
    ok = min(ratios) >= 10 and every_item and not trend_bad
    assert report("criterion 2 (DDIM error accumulation)", ok,
                  f"min cell ratio DDIM/dual-chain MSE {min(ratios):.2e} >= 10, per-image ratio >= 10: {every_item}, "
                  f"omega=3 > omega=1 violations {len(trend_bad)}/{len(STEPS) * N_ITEMS}")


def test_criterion_3_linearization_isolation(setup):
    schedule, data, _ = setup
    g = np.random.default_rng(3)
    worst = 0.0
    for i in range(N_ITEMS):
        p = constant_predictor(g.standard_normal((32, 32)))
        for n in STEPS:
            plan = make_plan(1000, n)
            for w in OMEGAS:
                zT = ddim_invert(data.images[i], p, data.conditions[i], w, plan, schedule).final
                z = ddim_infer(zT, p, data.conditions[i], w, plan, schedule).final
                worst = max(worst, float(np.max(np.abs(z - data.images[i]))))
    assert report("criterion 3 (linearization isolation)", worst <= 1e-9,
                  f"constant-predictor DDIM round trip max-abs {worst:.2e} <= 1e-9")


def test_criterion_4_step_inverse_algebra():
    g = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        T = int(g.integers(2, 1001))
        lo, hi = sorted(g.uniform(1e-5, 0.05, size=2))
        sched = make_linear_schedule(T, lo, hi)
        t = int(g.integers(1, T + 1))
        s = int(g.integers(0, t))
        shape = (int(g.integers(1, 9)), int(g.integers(1, 9)))
        worst = max(worst, oracle_step_inverse(g.standard_normal(shape), g.standard_normal(shape), (s, t), sched))
    assert report("criterion 4 (step-inverse algebra)", worst <= 1e-9,
                  f"max residual {worst:.2e} <= 1e-9 over 1000 random triples")


def test_criterion_5_cost_accounting(tmp_path):
    cmd_bench(defaults(), tmp_path)
    with open(tmp_path / "bench.csv") as fh:
        rows = {(int(r["steps"]), float(r["omega"]), r["method"]): r for r in csv.DictReader(fh)}
    bad = []
    for n in STEPS:
        for w in OMEGAS:
            k = 1 if w == 1.0 else 2
            d, c = rows[n, w, "ddim"], rows[n, w, "dci"]
            if int(d["inversion_calls"]) != n * k or int(c["inversion_calls"]) != 2 * n * k:
                bad.append((n, w, "inversion"))
            if int(c["inference_calls"]) != 0 or int(d["total_calls"]) != 2 * n * k or int(c["total_calls"]) != 2 * n * k:
                bad.append((n, w, "total"))
    at50 = rows[50, 1.0, "dci"]["inversion_calls"], rows[50, 1.0, "ddim"]["inversion_calls"]
    assert report("criterion 5 (cost accounting)", not bad,
                  f"inversion calls 2n vs n and totals 2n vs 2n in every bench row "
                  f"(50 steps, omega=1: {at50[0]} vs {at50[1]}); mismatches {bad}")


def test_criterion_6_dcs_schedule():
    plan = make_plan(1000, 100)
    cfg = DcsConfig(Omega=7.5, eta=0.5, t_end=100).bind(plan)
    worst = 0.0
    bad = []
    for t in (0,) + plan.steps:
        v = dcs_scale(t, cfg)
        if t >= cfg.sigma:
            expect = 1.0
        elif t >= cfg.t_end:
            expect = 1.0 + (7.5 - 1.0) * (cfg.sigma - t) / (cfg.sigma - cfg.t_end)
        else:
            expect = 7.5
        worst = max(worst, abs(v - expect))
        if abs(v - expect) > 1e-12:
            bad.append(t)
    at_end = dcs_scale(cfg.t_end, cfg)
    ok = not bad and at_end == 7.5
    assert report("criterion 6 (guidance schedule)", ok,
                  f"sigma={cfg.sigma}, t_end={cfg.t_end}: max deviation {worst:.1e} on 101 grid points, "
                  f"L(t_end)={at_end}")


def _edit(rec, gmm, plan, schedule, src, tgt, eta, r=3):
    cfg = EditConfig(dcs=DcsConfig(Omega=7.5, eta=eta, t_end=0), source_condition=src, target_condition=tgt, r=r)
    return edit_run(rec, cfg, gmm, plan, schedule)


def test_criterion_7_mode_contract(setup):
    schedule, data, gmm = setup
    plan = make_plan(1000, 50)
    violations = checked = 0
    for i in range(4):
        src = data.conditions[i]
        rec = dci_invert(data.images[i], gmm, src, 1.0, plan, schedule)
        for kind in ("T1", "T2", "T3"):
            tgt = rewrite_condition(src, kind, 3)
            for eta in (0.2, 0.5, 0.8):
                for r in (1, 3, 4):
                    res = _edit(rec, gmm, plan, schedule, src, tgt, eta, r)
                    sigma = activation_step(eta, plan)
                    bound = DcsConfig(Omega=7.5, t_end=0, sigma=sigma)
                    expected = step_modes(plan, sigma, r)
                    for s, (t, mode) in zip(res.log, expected):
                        checked += 1
                        want = {"JI": (1.0, 1.0, 0.0), "DJI-strong": (1.0, 0.8, 0.2)}.get(
                            mode, (dcs_scale(t, bound), 0.5, 0.5))
                        if s.t != t or s.mode != mode or not np.allclose((s.omega, s.m, s.n), want, atol=1e-12):
                            violations += 1
                    violations += abs(len(res.log) - len(expected))
    assert report("criterion 7a (editing mode contract)", violations == 0,
                  f"{violations} violations over {checked} logged steps")


def test_criterion_7_collapse_eta_one(setup):
    schedule, data, gmm = setup
    plan = make_plan(1000, 50)
    worst = 0.0
    for i in range(N_ITEMS):
        c = data.conditions[i]
        rec = dci_invert(data.images[i], gmm, c, 1.0, plan, schedule)
        res = _edit(rec, gmm, plan, schedule, c, c, 1.0)
        worst = max(worst, float(np.max(np.abs(res.z0 - joint_infer(rec, schedule)[0]))))
    assert report("criterion 7b (target=source collapse, eta=1 -> sigma=0)", worst <= 1e-6,
                  f"max-abs to joint inference {worst:.2e} <= 1e-6")


def test_criterion_7_collapse_eta_zero(setup):
    # Literal check as stated.  With sigma = (1 - eta) T, eta = 0 puts sigma at
    # T, so only the first step is joint inference and the rest are mixed
    # steps; the output is not expected to equal joint inference.
    schedule, data, gmm = setup
    plan = make_plan(1000, 50)
    worst = 0.0
    for i in range(N_ITEMS):
        c = data.conditions[i]
        rec = dci_invert(data.images[i], gmm, c, 1.0, plan, schedule)
        res = _edit(rec, gmm, plan, schedule, c, c, 0.0)
        worst = max(worst, float(np.max(np.abs(res.z0 - joint_infer(rec, schedule)[0]))))
    sigma = activation_step(0.0, plan)
    assert report("criterion 7c (target=source collapse, eta=0)", worst <= 1e-6,
                  f"max-abs to joint inference {worst:.2e} <= 1e-6 (sigma={sigma}: "
                  f"{sum(1 for t in plan.steps if t >= sigma)} JI step(s) of {len(plan.steps)})")


def test_criterion_8_fidelity_trend(setup):
    schedule, data, gmm = setup
    plan = make_plan(1000, 50)
    etas = (0.2, 0.4, 0.6, 0.8)
    means = {k: [] for k in ("T1", "T2", "T3")}
    recs = [dci_invert(data.images[i], gmm, data.conditions[i], 1.0, plan, schedule) for i in range(N_ITEMS)]
    for kind in means:
        for eta in etas:
            errs = []
            for i, rec in enumerate(recs):
                src = data.conditions[i]
                res = _edit(rec, gmm, plan, schedule, src, rewrite_condition(src, kind, 3), eta)
                errs.append(float(np.mean((res.z0 - data.images[i]) ** 2)))
            means[kind].append(float(np.mean(errs)))
    ok = all(np.all(np.diff(v) <= 0) for v in means.values())
    detail = "; ".join(f"{k}: " + " >= ".join(f"{x:.4f}" for x in v) for k, v in means.items())
    assert report("criterion 8 (fidelity knob trend)", ok, f"mean MSE to original over eta {etas}: {detail}")


def test_criterion_9_trajectory_divergence(tmp_path):
    res = cmd_traj(defaults(), tmp_path)
    proj = res["projection"]
    d = proj.distances["DIT"]
    rho = spearmanr(np.arange(len(d)), d).statistic
    mean_dit = float(np.mean(d))
    edit_means = {k: float(np.mean(proj.distances[k])) for k in ("edit-T1", "edit-T2", "edit-T3")}
    ok = d[-1] > d[0] and rho > 0.5 and all(v < mean_dit for v in edit_means.values())
    assert report("criterion 9 (trajectory divergence)", ok,
                  f"d initial {d[0]:.2e} -> final {d[-1]:.3f}, Spearman {rho:.3f} > 0.5, mean distance to JIT: "
                  f"DIT {mean_dit:.3f} vs " + ", ".join(f"{k} {v:.3f}" for k, v in edit_means.items()))


def _slice_rel_err():
    p = mlp_init((6,), 3, hidden=8, rng=Rng(10))
    g = np.random.default_rng(10)
    z = g.standard_normal((16, 6))
    c = g.standard_normal((16, 3))
    t = g.integers(1, 1001, size=16)
    eps = g.standard_normal((16, 6))
    _, grads = mlp_loss_and_grad(p, z, c, t, eps)
    worst = 0.0
    for name in p.NAMES:
        arr = getattr(p, name)
        for idx in g.choice(arr.size, size=min(5, arr.size), replace=False):
            def loss(v, name=name, idx=idx):
                q = p.copy()
                getattr(q, name).reshape(-1)[idx] = v[0]
                return mlp_loss_and_grad(q, z, c, t, eps)[0]
            fd = oracle_fd_gradient(loss, np.array([arr.reshape(-1)[idx]]), h=1e-5)[0]
            an = grads[name].reshape(-1)[idx]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
    return worst


def test_criterion_10_training_soundness():
    rel = _slice_rel_err()
    sched = make_linear_schedule()
    model = GmmDataModel(np.array([1.0]), np.full((1, 4), 0.5), 0.05)
    oracle = gmm_predictor(model, sched)
    g = np.random.default_rng(0)
    ts = g.integers(1, 1001, size=200)
    z0, _ = model.sample(Rng(99), 200)
    ab = sched.alpha_bar[ts - 1][:, None]
    zt = np.sqrt(ab) * z0 + np.sqrt(1 - ab) * g.standard_normal((200, 4))
    target = np.stack([oracle(z, np.zeros(2), t) for z, t in zip(zt, ts)])
    errs = []

    def track(epoch, params):
        out = np.stack([mlp_forward(params, z, np.zeros(2), t) for z, t in zip(zt, ts)])
        errs.append(float(np.mean((out - target) ** 2)))

    mlp_train(mlp_init((4,), 2, hidden=32, rng=Rng(5)), model, sched, Rng(6), 60, 3e-3, callback=track)
    blocks = np.array(errs).reshape(-1, 10).mean(axis=1)
    mono = bool(np.all(np.diff(blocks) <= 0))
    ok = rel < 1e-4 and mono
    assert report("criterion 10 (training soundness)", ok,
                  f"max gradient rel-err {rel:.1e} < 1e-4 on a 20-parameter slice; MSE to analytic eps* "
                  f"per 10-epoch block " + " > ".join(f"{b:.4f}" for b in blocks))


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
