import math

import numpy as np
import pytest

from wmlmc.errors import NonFiniteSampleError
from wmlmc.sde import (ModelSpec, SchemeSpec, Substream, brownian_increments, cost_units,
                       eval_coefficients, paths_from_increments, simulate_batch, simulate_coupled)
from wmlmc._kernels_py import C_TERMINAL, C_RUNNING, C_TRAPEZOID, F_TERMINAL, F_RUNNING, F_TRAPEZOID


@pytest.mark.parametrize("model,expect", [
    (ModelSpec.gbm(), (5.0, 20.0, 0.2)),
    (ModelSpec.igbm(), (0.0, 20.0, 0.2)),
    (ModelSpec.cir(), (0.0, 2.0, 0.01)),
])
def test_coefficients_at_100(model, expect):
    assert eval_coefficients(model, 100.0) == pytest.approx(expect, rel=1e-14)


def test_cir_negative_state_uses_truncation():
    a, b, bp = eval_coefficients(ModelSpec.cir(), -4.0)
    assert (a, b, bp) == (200.0, 0.0, 0.0)


def test_spec_validation():
    with pytest.raises(ValueError):
        ModelSpec.gbm(horizon=0.0)
    with pytest.raises(ValueError):
        ModelSpec.cir(s0=0.0)
    with pytest.raises(ValueError):
        ModelSpec.gbm(params={"sigma": -0.1})
    with pytest.raises(ValueError):
        ModelSpec.gbm(params={"kappa": 1.0})
    with pytest.raises(ValueError):
        SchemeSpec("Milstein", refinement=1)


def test_zero_noise_euler_is_deterministic():
    model = ModelSpec.gbm(params={"sigma": 0.0})
    scheme = SchemeSpec("EulerMaruyama", base_steps=4)
    b = simulate_batch(model, scheme, 0, seed=1, start=0, n=5)
    h = 1.0 / 4
    assert np.allclose(b.fine.terminal, 100 * (1 + 0.05 * h) ** 4, rtol=1e-14)


def test_gbm_mean_at_level_5():
    b = simulate_batch(ModelSpec.gbm(), SchemeSpec("Milstein"), 5, seed=3, start=0, n=200_000)
    x = b.fine.terminal[:, 0]
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - 100 * math.exp(0.05)) < 4 * se + 0.05


def test_cir_never_emits_nan():
    model = ModelSpec.cir(params={"sigma": 3.0}, s0=1.0)
    for kind in ("EulerMaruyama", "Milstein"):
        b = simulate_batch(model, SchemeSpec(kind), 4, seed=2, start=0, n=5000)
        assert b.rejected == 0
        assert np.all(np.isfinite(b.fine.terminal)) and np.all(np.isfinite(b.coarse.terminal))


@pytest.mark.parametrize("M", [2, 4])
@pytest.mark.parametrize("kind", ["EulerMaruyama", "Milstein"])
def test_coarse_path_equals_standalone_run_on_summed_increments(M, kind):
    model = ModelSpec.igbm()
    scheme = SchemeSpec(kind, refinement=M)
    level = 3
    dW = brownian_increments(scheme, model, level, seed=7, start=0, n=50)
    coupled = paths_from_increments(model, scheme, level, dW)
    # same summation order as the kernel: left to right within each block
    coarse_dW = np.zeros((dW.shape[0], dW.shape[1] // M))
    for r in range(M):
        coarse_dW += dW[:, r::M]
    alone = paths_from_increments(model, scheme, level - 1, coarse_dW)
    for c, f in [(C_TERMINAL, F_TERMINAL), (C_RUNNING, F_RUNNING), (C_TRAPEZOID, F_TRAPEZOID)]:
        assert np.array_equal(coupled[c], alone[f])


def test_antithetic_pair_averages_to_s0_without_drift():
    model = ModelSpec.gbm(params={"mu": 0.0})
    scheme = SchemeSpec("EulerMaruyama", antithetic=True)
    b = simulate_batch(model, scheme, 0, seed=4, start=0, n=10)
    assert np.allclose(b.fine.terminal.mean(axis=1), 100.0, rtol=1e-14)


def test_cost_units():
    assert cost_units(SchemeSpec("Milstein"), 0) == 1
    assert cost_units(SchemeSpec("Milstein"), 3) == 12
    assert cost_units(SchemeSpec("Milstein", refinement=4, antithetic=True), 2) == 40


def test_batches_do_not_depend_on_split_or_threads(monkeypatch):
    import wmlmc.sde as sde
    model, scheme = ModelSpec.gbm(), SchemeSpec("Milstein", antithetic=True)
    whole = simulate_batch(model, scheme, 6, seed=9, start=0, n=3000)
    monkeypatch.setattr(sde, "CHUNK_ELEMENTS", 64 * 37)
    a = simulate_batch(model, scheme, 6, seed=9, start=0, n=1234, threads=3)
    b = simulate_batch(model, scheme, 6, seed=9, start=1234, n=1766, threads=2)
    for field in ("terminal", "running_mean", "time_average"):
        joined = np.concatenate([getattr(a.fine, field), getattr(b.fine, field)])
        assert np.array_equal(joined, getattr(whole.fine, field))
    assert np.array_equal(np.concatenate([a.coarse.bridge_average, b.coarse.bridge_average]),
                          whole.coarse.bridge_average)


def test_seeds_and_tags_give_different_streams():
    m, s = ModelSpec.gbm(), SchemeSpec("EulerMaruyama")
    x = brownian_increments(s, m, 2, seed=1, start=0, n=10)
    assert not np.array_equal(x, brownian_increments(s, m, 2, seed=2, start=0, n=10))
    assert not np.array_equal(x, brownian_increments(s, m, 2, seed=1, start=0, n=10, tag=1))
    assert np.array_equal(x[5:], brownian_increments(s, m, 2, seed=1, start=5, n=5))


def test_increment_variance_matches_step():
    s = SchemeSpec("EulerMaruyama")
    x = brownian_increments(s, ModelSpec.gbm(), 3, seed=5, start=0, n=40_000)
    assert x.var() == pytest.approx(1 / 8, rel=0.02)
    assert abs(x.mean()) < 0.005


def test_milstein_correlates_better_than_euler():
    from wmlmc.level_stats import finalize, from_arrays
    from wmlmc.payoff import PayoffSpec, payoff_pairs
    model = ModelSpec.gbm()
    rho = {}
    for kind in ("EulerMaruyama", "Milstein"):
        b = simulate_batch(model, SchemeSpec(kind), 3, seed=1, start=0, n=50_000)
        pf, pc = payoff_pairs(PayoffSpec("Call"), b.fine, b.coarse, model)
        rho[kind] = finalize(from_arrays(pf, pc)).rho
    assert rho["Milstein"] > rho["EulerMaruyama"]


def test_simulate_coupled_single_sample():
    s = simulate_coupled(ModelSpec.gbm(), SchemeSpec("Milstein", antithetic=True), 2,
                         Substream(seed=1, index=17))
    b = simulate_batch(ModelSpec.gbm(), SchemeSpec("Milstein", antithetic=True), 2, 1, 17, 1)
    assert s.fine.terminal == b.fine.terminal[0, 0]
    assert s.fine_mirror.terminal == b.fine.terminal[0, 1]
    assert s.coarse.steps == 2 and s.cost_units == 12


def test_overflow_is_rejected_and_reported():
    model = ModelSpec.gbm(params={"sigma": 2000.0, "mu": 0.0})
    b = simulate_batch(model, SchemeSpec("EulerMaruyama"), 8, seed=1, start=0, n=200)
    assert b.rejected > 0
    assert b.n == 200 - b.rejected
    bad = int(np.setdiff1d(np.arange(200), b.indices)[0])
    with pytest.raises(NonFiniteSampleError):
        simulate_coupled(model, SchemeSpec("EulerMaruyama"), 8, Substream(1, bad))
