"""Adaptive target-MSE estimation and cost sweeps."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from . import planner
from .level_stats import LevelMoments, MomentAccumulator, finalize, from_arrays, merge
from .payoff import PayoffSpec, payoff_pairs
from .planner import EstimatorResult, WmlmcPlan
from .sde import ModelSpec, SchemeSpec, fine_cost_units, simulate_batch

log = logging.getLogger(__name__)


class Method(str, Enum):
    MLMC = "MLMC"
    WMLMC = "WMLMC"
    SINGLE = "SingleLevel"


@dataclass(frozen=True)
class RunConfig:
    model: ModelSpec
    scheme: SchemeSpec
    payoff: PayoffSpec
    target_mse: float
    pilot_n: int = 20
    max_level: int = 12
    min_level: int = 2
    seed: int = 0
    method: Method = Method.WMLMC
    bias_fraction: float = 0.5
    threads: int = 1
    cost_model: str = "steps"
    kernel: object = None
    max_rounds: int = 60

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not (self.target_mse > 0 and math.isfinite(self.target_mse)):
            raise ValueError("target_mse must be positive")
        if self.pilot_n < 2:
            raise ValueError("pilot_n must be at least 2")
        if not 0.0 < self.bias_fraction < 1.0:
            raise ValueError("bias_fraction must lie in (0, 1)")
        if not 0 <= self.min_level <= self.max_level:
            raise ValueError("need 0 <= min_level <= max_level")

    @property
    def v(self) -> float:
        """Standard deviation allowed for the statistical error."""
        return math.sqrt(self.target_mse * (1.0 - self.bias_fraction))


BLOCK_SAMPLES = 1 << 20


class LevelSampler:
    """Sequential sample stream of one level with running moments.

    Sample ``i`` of a level is always the same path, so extending a level
    in several steps gives the same moments as one large draw.
    """

    def __init__(self, config: RunConfig, level: int, tag: int = 0):
        self.config = config
        self.level = level
        self.tag = tag
        self.drawn = 0
        self.acc = MomentAccumulator()

    def extend(self, n: int):
        c = self.config
        while n > 0:
            # bounded blocks keep memory flat for very large top-ups
            k = min(n, BLOCK_SAMPLES)
            batch = simulate_batch(c.model, c.scheme, self.level, c.seed, self.drawn, k,
                                   tag=self.tag, threads=c.threads, kernel=c.kernel,
                                   cost_model=c.cost_model)
            pf, pc = payoff_pairs(c.payoff, batch.fine, batch.coarse, c.model)
            part = from_arrays(pf, pc, cost=batch.cost_units * batch.n, rejected=batch.rejected)
            self.acc = merge(self.acc, part)
            self.drawn += k
            n -= k
            if batch.rejected:
                log.warning("level %d: %d non-finite samples rejected", self.level, batch.rejected)

    def top_up(self, target: int):
        # rejected samples still used up stream positions, so count accepted ones
        self.extend(target - self.acc.n)

    def moments(self) -> LevelMoments:
        return finalize(self.acc, level=self.level)


# -- rate fits ----------------------------------------------------------------

def fit_rate(levels, values, weights=None) -> float | None:
    """Decay rate ``a`` in ``values ~ c 2^{-a l}`` by weighted least squares on log2."""
    l = np.asarray(levels, dtype=float)
    y = np.asarray(values, dtype=float)
    ok = (y > 0) & np.isfinite(y)
    if np.count_nonzero(ok) < 2:
        return None
    w = None if weights is None else np.asarray(weights, dtype=float)[ok]
    slope = np.polyfit(l[ok], np.log2(y[ok]), 1, w=w)[0]
    return float(-slope)


def rate_fits(moments: Sequence[LevelMoments], first: int = 1):
    """``(alpha, beta, gamma)`` from ``|E Y_l|``, ``V Y_l`` and ``eta_l^2`` over ``l >= first``."""
    ms = moments[first:]
    if len(ms) < 2:
        return None, None, None
    ls = [m.level for m in ms]
    a = fit_rate(ls, [abs(m.mean_y) for m in ms])
    b = fit_rate(ls, [(m.sigma_y if m.sigma_y is not None else m.delta) ** 2 for m in ms])
    g = fit_rate(ls, [m.eta ** 2 for m in ms])
    return a, b, None if g is None else -g


def estimate_bias(moments: Sequence[LevelMoments], window: int = 3, min_alpha: float = 0.5):
    """Remaining bias ``|E[P - P_L]|`` extrapolated from the last few ``E[Y_l]``.

    Fits ``|E Y_l| ~ 2^{-alpha l}`` over the last ``min(window, L)`` levels
    (weighted by inverse standard errors), then takes the largest of
    ``(|E Y_l| + se_l) 2^{-alpha (L-l)} / (2^alpha - 1)`` over the same
    levels so that one lucky small ``E Y_L`` does not end the refinement
    early.
    Returns ``(bias, alpha)``; ``(None, None)`` when ``L < 1``.
    """
    L = len(moments) - 1
    if L < 1:
        return None, None
    lo = max(1, L - min(window, L) + 1)
    tail = moments[lo:]
    ys = np.array([abs(m.mean_y) for m in tail])
    # floor the errors so noise-free levels neither divide by zero nor overflow the fit
    floor = max(1e-14 * float(ys.max()), 1e-300)
    se = np.array([max(m.sem_y, floor) for m in tail])
    ls = np.arange(lo, L + 1)
    alpha = fit_rate(ls, ys, se.min() / se) if len(tail) >= 2 else None
    alpha = max(min_alpha, alpha if alpha is not None else min_alpha)
    f = 2.0 ** alpha
    bias = float(np.max((ys + se) * f ** (-(L - ls)))) / (f - 1.0)
    return bias, alpha


def _degenerate(moments, rel=1e-12) -> bool:
    """True when every level's spread is rounding noise."""
    for m in moments:
        scale = abs(m.mean_fine or 0.0) + abs(m.mean_coarse or 0.0) + 1e-300
        spread = m.sigma_fine + (m.sigma_coarse or 0.0)
        if spread > rel * scale:
            return False
    return True


def single_level_cost(config: RunConfig, moments: Sequence[LevelMoments], v: float) -> float:
    """Plain Monte Carlo cost at the finest level (fine path only)."""
    m = moments[-1]
    if config.cost_model == "measured":
        eta2 = m.eta ** 2
    else:
        eta2 = fine_cost_units(config.scheme, len(moments) - 1)
    return m.sigma_fine ** 2 * eta2 / v ** 2


def plan_for(method: Method, moments, v) -> WmlmcPlan:
    if method is Method.MLMC:
        return planner.mlmc_plan(moments, v)
    return planner.wmlmc_plan(moments, v)


def _weighted_value(plan: WmlmcPlan, samplers) -> tuple[float, float]:
    """Estimate and its variance from every drawn sample of the active levels."""
    value, var = 0.0, 0.0
    for l, (lp, big) in enumerate(zip(plan.levels, plan.big_theta)):
        if big == 0.0 or plan.n_samples[l] == 0:
            continue
        acc = samplers[l].acc
        th = lp.theta
        value += big * (acc.mean_fine - th * acc.mean_coarse)
        d = acc.n - 1
        vy = (acc.m2_fine - 2.0 * th * acc.cross + th * th * acc.m2_coarse) / d
        var += big * big * max(vy, 0.0) / acc.n
    return value, var


def run(config: RunConfig) -> EstimatorResult:
    """Adaptive estimator for ``E[P]`` with MSE about ``target_mse``."""
    c = config
    v = c.v
    eps2 = c.target_mse
    L = c.min_level
    samplers = [LevelSampler(c, l) for l in range(L + 1)]
    for s in samplers:
        s.extend(c.pilot_n)
    # plain Monte Carlo still needs the level hierarchy to find L
    search = Method.MLMC if c.method is Method.SINGLE else c.method
    rounds = 0
    converged = False
    bias = alpha = None
    plan = None
    while True:
        rounds += 1
        moments = [s.moments() for s in samplers]
        plan = plan_for(search, moments, v)
        deficits = [max(0, n - s.acc.n) for n, s in zip(plan.n_samples, samplers)]
        big = any(d > 0.01 * s.acc.n for d, s in zip(deficits, samplers))
        for n, s in zip(plan.n_samples, samplers):
            s.top_up(n)
        if big and rounds < c.max_rounds:
            continue
        moments = [s.moments() for s in samplers]
        bias, alpha = estimate_bias(moments)
        if bias is not None and bias * bias <= c.bias_fraction * eps2:
            converged = True
            break
        if L >= c.max_level:
            break
        L += 1
        samplers.append(LevelSampler(c, L))
        samplers[-1].extend(c.pilot_n)
        rounds = 0

    moments = [s.moments() for s in samplers]
    a_hat, b_hat, g_hat = rate_fits(moments)
    counts = tuple(s.acc.n for s in samplers)
    etas = tuple(m.eta for m in moments)
    extra = {}
    if c.method is Method.SINGLE:
        # fresh samples at level L; the hierarchy above only located L
        m = moments[L]
        mc = LevelSampler(c, L, tag=2)
        mc.extend(max(c.pilot_n, planner.round_samples(m.sigma_fine ** 2 / v ** 2)))
        acc = mc.acc
        value = acc.mean_fine
        variance = math.sqrt(max(acc.m2_fine, 0.0) / (acc.n - 1)) ** 2 / acc.n
        fine_eta2 = (m.eta ** 2 if c.cost_model == "measured" else fine_cost_units(c.scheme, L))
        extra["calibration_cost"] = float(sum(s.acc.cost for s in samplers))
        costs = [0.0] * L + [acc.n * fine_eta2]
        counts = tuple([0] * L + [acc.n])
        theta = tuple([0.0] * (L + 1))
        big_theta = tuple([0.0] * L + [1.0])
        delta = tuple(m.delta for m in moments)
        coarsest = L
    else:
        plan = plan_for(c.method, moments, v)
        value, variance = _weighted_value(plan, samplers)
        costs = [s.acc.cost for s in samplers]
        theta, big_theta, delta, coarsest = plan.thetas, plan.big_theta, plan.deltas, plan.coarsest
    return EstimatorResult(
        value=float(value),
        n_samples=counts,
        level_costs=tuple(float(x) for x in costs),
        total_cost=float(sum(costs)),
        variance=float(variance),
        final_level=L,
        theta=tuple(theta),
        big_theta=tuple(big_theta),
        delta=tuple(delta),
        eta=etas,
        method=c.method.value,
        alpha_hat=a_hat,
        beta_hat=b_hat,
        gamma_hat=g_hat,
        bias=bias,
        converged=converged,
        degenerate=_degenerate(moments),
        rejected=sum(s.acc.rejected for s in samplers),
        coarsest=coarsest,
        iterations=rounds,
        extra=extra,
    )


# -- sweeps -------------------------------------------------------------------

def collect_moments(config: RunConfig, max_level: int, n: int | Sequence[int],
                    tag: int = 1) -> list[LevelMoments]:
    """Moments of levels ``0..max_level`` from ``n`` samples each (a shared table)."""
    counts = [n] * (max_level + 1) if np.isscalar(n) else list(n)
    out = []
    for l in range(max_level + 1):
        s = LevelSampler(config, l, tag=tag)
        s.extend(int(counts[l]))
        out.append(s.moments())
    return out


def level_for_mse(moments, eps2, bias_fraction=0.5, min_level=2):
    """Smallest level whose extrapolated bias meets ``bias^2 <= f eps^2``."""
    top = len(moments) - 1
    for L in range(min(min_level, top), top + 1):
        b, _ = estimate_bias(moments[:L + 1])
        if b is not None and b * b <= bias_fraction * eps2:
            return L
    return top


def sweep(config: RunConfig, mse_grid: Sequence[float], moments: Sequence[LevelMoments],
          *, fixed_level: int | None = None) -> list[dict]:
    """Planned MC, MLMC and WMLMC costs for each target MSE.

    All rows share one moment table; the finest level comes from the bias
    extrapolation unless ``fixed_level`` is given.
    """
    grid = list(mse_grid)
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise ValueError("mse_grid must be strictly decreasing")
    rows = []
    f = config.bias_fraction
    for eps2 in grid:
        L = fixed_level if fixed_level is not None else level_for_mse(
            moments, eps2, f, config.min_level)
        ms = list(moments[:L + 1])
        v = math.sqrt(eps2 * (1.0 - f))
        pm = planner.mlmc_plan(ms, v)
        pw = planner.wmlmc_plan(ms, v)
        mc = single_level_cost(config, ms, v)
        rows.append({
            "mse": eps2, "level": L,
            "cost_mc": mc, "cost_mlmc": pm.cost, "cost_wmlmc": pw.cost,
            "ratio": pm.cost / pw.cost if pw.cost > 0 else float("nan"),
            "mc_x_mse": mc * eps2, "mlmc_x_mse": pm.cost * eps2, "wmlmc_x_mse": pw.cost * eps2,
            "coarsest_mlmc": pm.coarsest, "coarsest_wmlmc": pw.coarsest,
        })
    return rows


def level_breakdown(moments: Sequence[LevelMoments], variance: float) -> list[dict]:
    """Per-level cost contributions of the MLMC and WMLMC plans at the finest level."""
    v = math.sqrt(variance)
    pm = planner.mlmc_plan(moments, v)
    pw = planner.wmlmc_plan(moments, v)
    rows = []
    cm = cw = 0.0
    for l, m in enumerate(moments):
        costm = pm.n_exact[l] * m.eta ** 2
        costw = pw.n_exact[l] * m.eta ** 2
        cm += costm
        cw += costw
        rows.append({
            "level": l,
            "sqrt_one_minus_rho2": math.sqrt(max(0.0, 1.0 - m.rho ** 2)) if m.rho is not None else 1.0,
            "rho": m.rho if m.rho is not None else float("nan"),
            "theta_wmlmc": pw.levels[l].theta, "big_theta_wmlmc": pw.big_theta[l],
            "big_theta_mlmc": pm.big_theta[l],
            "n_mlmc": pm.n_samples[l], "n_wmlmc": pw.n_samples[l],
            "cost_mlmc": costm, "cost_wmlmc": costw,
            "cum_cost_mlmc": cm, "cum_cost_wmlmc": cw,
        })
    return rows
