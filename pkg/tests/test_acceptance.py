"""Exit criteria, one test per criterion.

The terminal summary prints one PASS/FAIL line per criterion with the
measured values.
"""
import json
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from conftest import moments_from
from wmlmc import driver, figures, mimc
from wmlmc.cli import main
from wmlmc.planner import (mlmc_plan, normalized_cost_mlmc, normalized_cost_wmlmc,
                           optimal_theta_oracle, single_level_cost, wmlmc_plan)
from test_driver import black_scholes_call, gbm_config
from test_planner import random_table

MU = 1 / math.sqrt(2)
RHO_STAR = MU + 0.25


@pytest.mark.acceptance(1)
def test_criterion_01_two_level_curve(record_property):
    t0 = time.perf_counter()
    dm = normalized_cost_mlmc([RHO_STAR], [1.0], [MU]).deltas[-1]
    dw = normalized_cost_wmlmc([RHO_STAR], [MU]).deltas[-1]
    ratio = dm ** 2 / dw ** 2
    below = np.linspace(0.0, RHO_STAR, 2001)[:-1]
    single_below = all(normalized_cost_mlmc([r], [1.0], [MU]).deltas[-1] == 1.0 for r in below)
    elapsed = time.perf_counter() - t0
    for k, v in [("delta_mlmc", dm), ("ratio", round(ratio, 6)), ("seconds", round(elapsed, 3))]:
        record_property(k, v)
    assert dm == 1.0
    assert ratio == pytest.approx(1.2865, abs=1e-3)
    assert single_below
    assert elapsed < 1.0


@pytest.mark.acceptance(2)
def test_criterion_02_three_level_ratio(record_property):
    t0 = time.perf_counter()
    dm = normalized_cost_mlmc([RHO_STAR] * 2, [1.0, 1.0], [MU, MU]).deltas[-1]
    dw = normalized_cost_wmlmc([RHO_STAR] * 2, [MU, MU]).deltas[-1]
    ratio = dm ** 2 / dw ** 2
    elapsed = time.perf_counter() - t0
    record_property("ratio", round(ratio, 6))
    record_property("seconds", round(elapsed, 3))
    assert ratio == pytest.approx(1.4752, abs=1e-3)
    assert elapsed < 1.0


@pytest.mark.acceptance(3)
def test_criterion_03_closed_form_theta(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2025)
    worst_theta = worst_cost = 0.0
    for _ in range(1000):
        sp = rng.uniform(0.5, 1.5)
        s = sp * rng.uniform(0.5, 1.5)
        rho = rng.uniform(-1, 1)
        eta, v = rng.uniform(1.1, 4), rng.uniform(0.01, 1)
        # spread the activation ratio across both branches
        e_prev = rng.uniform(0.0, 1.2) * sp * eta / v
        ms = moments_from([sp, s], [None, rho], [e_prev * v / sp, eta])
        lp = wmlmc_plan(ms, v).levels[1]
        th, best = optimal_theta_oracle(sp, s, rho, eta, e_prev, v, grid=801)
        worst_theta = max(worst_theta, abs(th - lp.theta))
        worst_cost = max(worst_cost, (lp.e_cum - best) / lp.e_cum)
    elapsed = time.perf_counter() - t0
    record_property("max_theta_gap", f"{worst_theta:.2e}")
    record_property("max_oracle_gain", f"{worst_cost:.2e}")
    record_property("seconds", round(elapsed, 2))
    assert worst_theta < 1e-7
    assert worst_cost <= 1e-9
    assert elapsed < 10.0


@pytest.mark.acceptance(4)
def test_criterion_04_dominance(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    dominance = forced = 0
    for _ in range(1000):
        ms = random_table(rng)
        v = float(rng.uniform(0.01, 1))
        w, m = wmlmc_plan(ms, v), mlmc_plan(ms, v)
        if not (w.e_total <= m.e_total * (1 + 1e-12) <= single_level_cost(ms, v) * (1 + 2e-12)):
            dominance += 1
        th = [0.0 if l <= m.coarsest else 1.0 for l in range(len(ms))]
        f = wmlmc_plan(ms, v, theta=th)
        if f.n_samples != m.n_samples or abs(f.e_total - m.e_total) > 1e-12 * m.e_total:
            forced += 1
    # upper bound on the normalised cost, as stated: (1/eta_L) sum_{l>=1} eta_l sqrt(1 - rho_l^2)
    bound_violations, worst = 0, 0.0
    for _ in range(1000):
        L = int(rng.integers(1, 7))
        mus = rng.uniform(0.2, 0.95, L)
        rhos = mus + (1 - mus) * rng.uniform(1e-6, 1, L)
        etas = np.concatenate([[1.0], 1 / np.cumprod(mus)])
        d = normalized_cost_wmlmc(rhos, mus).deltas[-1]
        bound = float(np.sum(etas[1:] * np.sqrt(1 - rhos ** 2))) / etas[-1]
        if d > bound * (1 + 1e-12):
            bound_violations += 1
            worst = max(worst, d / bound)
    elapsed = time.perf_counter() - t0
    for k, val in [("dominance_failures", dominance), ("forced_theta_mismatches", forced),
                   ("cost_bound_violations", f"{bound_violations}/1000"),
                   ("worst_excess", f"{worst:.3g}x"), ("seconds", round(elapsed, 2))]:
        record_property(k, val)
    assert dominance == 0
    assert forced == 0
    assert bound_violations == 0, "stated cost bound omits the coarsest-level term"
    assert elapsed < 10.0


@pytest.mark.acceptance(5)
def test_criterion_05_gbm_black_scholes(record_property):
    t0 = time.perf_counter()
    r = driver.run(gbm_config(target_mse=1e-4, seed=0))
    elapsed = time.perf_counter() - t0
    exact = black_scholes_call(100, 100, 0.05, 0.2, 1)
    z = (r.value - exact) / math.sqrt(r.variance)
    for k, val in [("value", round(r.value, 5)), ("exact", round(exact, 5)), ("z", round(z, 2)),
                   ("L", r.final_level), ("seconds", round(elapsed, 1))]:
        record_property(k, val)
    assert abs(z) < 3
    assert elapsed < 60


def _fig_moments(name, n, finest):
    fig = figures.MC_FIGURES[name]
    cfg = driver.RunConfig(fig.model, fig.scheme, fig.payoff, target_mse=1e-4, max_level=finest)
    return driver.collect_moments(cfg, finest, n)


@pytest.mark.acceptance(6)
def test_criterion_06_igbm_planned_ratio(record_property):
    t0 = time.perf_counter()
    ms = _fig_moments("fig4", 100_000, 9)
    v = math.sqrt(figures.LEVEL_VARIANCE)
    w, m = wmlmc_plan(ms, v), mlmc_plan(ms, v)
    elapsed = time.perf_counter() - t0
    ratio = m.cost / w.cost
    for k, val in [("ratio", round(ratio, 4)), ("coarsest_mlmc", m.coarsest),
                   ("coarsest_wmlmc", w.coarsest), ("seconds", round(elapsed, 1))]:
        record_property(k, val)
    assert ratio >= 1.4
    assert w.coarsest < m.coarsest
    assert elapsed < 600


@pytest.mark.acceptance(7)
def test_criterion_07_digital_rates_and_ratio(record_property):
    t0 = time.perf_counter()
    ms = _fig_moments("fig6", 100_000, 6)
    _, beta, _ = driver.rate_fits(ms, first=2)
    v = math.sqrt(figures.LEVEL_VARIANCE)
    ratio = mlmc_plan(ms, v).cost / wmlmc_plan(ms, v).cost
    elapsed = time.perf_counter() - t0
    for k, val in [("beta_hat", round(beta, 3)), ("ratio", round(ratio, 4)),
                   ("seconds", round(elapsed, 1))]:
        record_property(k, val)
    assert abs(beta - 1.0) <= 0.3
    assert ratio >= 1.15
    assert elapsed < 600


@pytest.mark.acceptance(8)
def test_criterion_08_repeated_adaptive_runs(record_property):
    t0 = time.perf_counter()
    eps2 = 1e-5
    fig = figures.MC_FIGURES["fig4"]
    base = driver.RunConfig(fig.model, fig.scheme, fig.payoff, target_mse=eps2)
    # independent high-accuracy reference on a separate seed
    ref = driver.run(replace(base, target_mse=eps2 / 10, seed=10**6)).value
    out = {}
    for method in (driver.Method.MLMC, driver.Method.WMLMC):
        res = [driver.run(replace(base, method=method, seed=s)) for s in range(100)]
        vals = np.array([r.value for r in res])
        out[method.value] = (float(np.mean((vals - ref) ** 2)), float(np.mean([r.total_cost for r in res])))
    elapsed = time.perf_counter() - t0
    mse_m, cost_m = out["MLMC"]
    mse_w, cost_w = out["WMLMC"]
    ratio = cost_m / cost_w
    for k, val in [("mse_mlmc/target", round(mse_m / eps2, 3)), ("mse_wmlmc/target", round(mse_w / eps2, 3)),
                   ("cost_ratio", round(ratio, 3)), ("reference", round(ref, 5)),
                   ("minutes", round(elapsed / 60, 1))]:
        record_property(k, val)
    for mse in (mse_m, mse_w):
        assert eps2 / 2 <= mse <= 2 * eps2
    assert ratio >= 1.4
    assert elapsed < 1800


@pytest.mark.acceptance(9)
def test_criterion_09_multi_index_suite(record_property):
    t0 = time.perf_counter()
    # single-index reduction on synthetic chains
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(5):
        L = int(rng.integers(2, 5))
        ms = moments_from(list(rng.uniform(0.5, 1.5, L + 1)), [None] + list(rng.uniform(0.6, 1.0, L)),
                          list(np.sqrt(np.cumprod(rng.uniform(1.5, 4, L + 1)))))
        wp = wmlmc_plan(ms, 0.01)
        mp = mimc.mimc_plan((L,), mimc.oracle_from_level_moments(ms), 0.01)
        worst = max(worst, max(abs(mp.nodes[(l,)].t[0] - wp.levels[l].theta) for l in range(1, L + 1)))
    # unweighted counts and dominance
    lattices = [
        (mimc.SeparableModel(bias=[0.5, 0.5], scale=[0.3, 0.3], decay=[2.0, 2.0]), (2, 2)),
        (mimc.SeparableModel(bias=[0.2, 0.8], scale=[0.5, 0.2], decay=[1.0, 3.0], refine=[2, 4]), (3, 1)),
        (mimc.SeparableModel(bias=[0.5, 0.5], scale=[1.0, 1.0], decay=[0.5, 0.5]), (2, 2)),
        (mimc.SeparableModel(bias=[0.3] * 3, scale=[0.3] * 3, decay=[2.0] * 3), (1, 1, 1)),
    ]
    count_mismatch = dominance = 0
    for model, upper in lattices:
        opt = mimc.mimc_plan(upper, model, 0.01)
        plain = mimc.mimc_plan(upper, model, 0.01, weights="mimc")
        w_total = sum(n.delta * n.eta for n in plain.nodes.values()) / 0.01
        for nu, node in plain.nodes.items():
            expect = max(1, math.floor(w_total * node.delta / (0.01 * node.eta) + 0.5))
            count_mismatch += plain.n_samples[nu] != expect
        dominance += opt.planned_cost > plain.planned_cost * (1 + 1e-9)
    # telescoping mean on the separable model
    model = lattices[0][0]
    plan = mimc.mimc_plan((2, 2), model, 0.05)
    rr = np.random.default_rng(2024)
    reps = 10_000
    vals = np.array([mimc.mimc_estimate(plan, model.sample, rr) for _ in range(reps)])
    z = (vals.mean() - model.mean((2, 2))) / (vals.std(ddof=1) / math.sqrt(reps))
    elapsed = time.perf_counter() - t0
    for k, val in [("max_theta_gap", f"{worst:.1e}"), ("count_mismatches", count_mismatch),
                   ("dominance_failures", dominance), ("telescoping_z", round(z, 2)),
                   ("seconds", round(elapsed, 1))]:
        record_property(k, val)
    assert worst < 1e-6
    assert count_mismatch == 0
    assert abs(z) < 3
    assert dominance == 0
    assert elapsed < 300


def _snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


@pytest.mark.acceptance(10)
def test_criterion_10_reproducibility(tmp_path, record_property):
    t0 = time.perf_counter()
    cfg = tmp_path / "gbm.json"
    doc = json.loads((Path(__file__).resolve().parents[1] / "configs" / "gbm_call.json").read_text())
    doc["run"]["target_mse"] = 1e-3
    cfg.write_text(json.dumps(doc))
    table = tmp_path / "m.json"
    table.write_text(json.dumps({"levels": [
        {"sigma_fine": 1.0, "eta": 1.0},
        {"sigma_fine": 0.9, "sigma_coarse": 1.0, "rho": 0.98, "eta": 2.0}]}))
    commands = [
        ["estimate", "--config", str(cfg), "--seed", "3"],
        ["plan", "--moments", str(table), "--v", "0.01"],
        ["figures", "fig1"],
        ["figures", "fig5", "--samples-per-level", "3000", "--finest", "3", "--seed", "2"],
        ["figures", "fig7", "--reps", "2", "--mse", "1e-3", "--seed", "1"],
        ["mimc-plan", "--upper", "2,1"],
    ]
    runs = []
    for i, threads in enumerate(["1", "1", "4"]):
        d = tmp_path / f"run{i}"
        codes = [main(c + ["--threads", threads, "--out", str(d)]) for c in commands]
        assert codes == [0] * len(commands)
        runs.append(_snapshot(d))
    elapsed = time.perf_counter() - t0
    same = runs[0] == runs[1] == runs[2]
    record_property("files", len(runs[0]))
    record_property("identical", same)
    record_property("seconds", round(elapsed, 1))
    assert same
    assert elapsed < 60
