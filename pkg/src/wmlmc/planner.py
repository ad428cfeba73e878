"""MLMC and optimally weighted MLMC planning.

Both planners work from per-level moments ``(sigma_l, sigma^c_l, rho_l,
eta_l)`` where ``sigma^c_l`` is the standard deviation of the coarse
payoff ``P^l_{l-1}`` produced inside level ``l``.  Costs are square-root
costs: a plan with ``e_cum = E`` costs ``E**2`` units for variance ``v**2``.

The weighted estimator at level ``L`` is

    P~_L = sum_l Theta^L_l * mean_{N_l}(P_l - theta_l P^l_{l-1}),
    Theta^L_l = prod_{k=l+1}^{L} theta_k,

with the weights chosen level by level: given the optimal estimator at
``l-1`` with square-root cost ``E_{l-1}``, the weight ``theta_l`` minimises
``(Delta^theta_l eta_l + |theta_l| E_{l-1} v) / v``.  When
``|rho_l| <= v E_{l-1} / (sigma^c_l eta_l)`` the minimum is at
``theta_l = 0`` and level ``l`` becomes the new coarsest level.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import PlanningError
from .level_stats import LevelMoments


@dataclass(frozen=True)
class LevelPlan:
    theta: float
    delta: float
    e_cum: float
    alpha: float
    beta: float
    active: bool = True


@dataclass(frozen=True)
class WmlmcPlan:
    levels: tuple[LevelPlan, ...]
    big_theta: tuple[float, ...]
    n_samples: tuple[int, ...]
    v: float
    coarsest: int
    etas: tuple[float, ...]
    n_exact: tuple[float, ...] = ()
    method: str = "WMLMC"

    @property
    def finest(self) -> int:
        return len(self.levels) - 1

    @property
    def e_total(self) -> float:
        """Square-root cost of the plan, before rounding sample counts."""
        return self.levels[-1].e_cum

    @property
    def cost(self) -> float:
        """Planned cost ``E_L**2``."""
        return self.e_total ** 2

    @property
    def thetas(self) -> tuple[float, ...]:
        return tuple(lp.theta for lp in self.levels)

    @property
    def deltas(self) -> tuple[float, ...]:
        return tuple(lp.delta for lp in self.levels)

    def level_costs(self) -> tuple[float, ...]:
        return tuple(n * eta * eta for n, eta in zip(self.n_samples, self.etas))

    def realized_cost(self) -> float:
        return float(sum(self.level_costs()))

    def predicted_variance(self) -> float:
        var = 0.0
        for lp, big, n in zip(self.levels, self.big_theta, self.n_samples):
            if n > 0 and big != 0.0:
                var += (big * lp.delta) ** 2 / n
        return var

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "v": self.v,
            "coarsest": self.coarsest,
            "planned_cost": self.cost,
            "realized_cost": self.realized_cost(),
            "predicted_variance": self.predicted_variance(),
            "levels": [
                dict(level=l, big_theta=big, n_samples=n, n_exact=ne, eta=eta, **asdict(lp))
                for l, (lp, big, n, ne, eta) in enumerate(
                    zip(self.levels, self.big_theta, self.n_samples, self.n_exact, self.etas))
            ],
        }


@dataclass(frozen=True)
class NormalizedCostSeq:
    deltas: tuple[float, ...]
    mus: tuple[float, ...]


@dataclass
class EstimatorResult:
    value: float
    n_samples: tuple[int, ...]
    level_costs: tuple[float, ...]
    total_cost: float
    variance: float
    final_level: int
    theta: tuple[float, ...] = ()
    big_theta: tuple[float, ...] = ()
    delta: tuple[float, ...] = ()
    eta: tuple[float, ...] = ()
    method: str = "WMLMC"
    alpha_hat: float | None = None
    beta_hat: float | None = None
    gamma_hat: float | None = None
    bias: float | None = None
    converged: bool = True
    degenerate: bool = False
    rejected: int = 0
    coarsest: int = 0
    iterations: int = 0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, val in d.items():
            if isinstance(val, tuple):
                d[k] = list(val)
        return d


def round_samples(x: float) -> int:
    """Nearest positive integer (halves round up)."""
    return max(1, int(math.floor(x + 0.5)))


def _check(moments: Sequence[LevelMoments], v: float):
    if not moments:
        raise PlanningError("no level moments given")
    if not (v > 0 and math.isfinite(v)):
        raise PlanningError("target standard deviation v must be positive and finite")
    for l, m in enumerate(moments):
        vals = [m.sigma_fine, m.eta]
        if l > 0:
            if m.sigma_coarse is None or m.rho is None:
                raise PlanningError(f"level {l} lacks coarse moments")
            vals += [m.sigma_coarse, m.rho]
        if not all(math.isfinite(x) for x in vals):
            raise PlanningError(f"non-finite moments at level {l}")
        if m.sigma_fine < 0 or (l > 0 and m.sigma_coarse < 0):
            raise PlanningError(f"negative standard deviation at level {l}")
        if not m.eta > 0:
            raise PlanningError(f"eta must be positive at level {l}")
        if l > 0 and abs(m.rho) > 1.0:
            raise PlanningError(f"|rho| > 1 at level {l}")


def _delta_theta(sigma, sigma_prev, rho, theta):
    d2 = sigma * sigma - 2.0 * theta * rho * sigma_prev * sigma + theta * theta * sigma_prev * sigma_prev
    return math.sqrt(max(d2, 0.0))


def _reset(m: LevelMoments, v: float) -> LevelPlan:
    s = m.sigma_fine
    return LevelPlan(theta=0.0, delta=s, e_cum=s * m.eta / v, alpha=s * s / (v * v), beta=0.0)


def _finish(levels, moments, v, method) -> WmlmcPlan:
    L = len(levels) - 1
    big = [0.0] * (L + 1)
    big[L] = 1.0
    for l in range(L - 1, -1, -1):
        big[l] = big[l + 1] * levels[l + 1].theta
    coarsest = 0
    for l in range(L, -1, -1):
        if levels[l].theta == 0.0:
            coarsest = l
            break
    e_total = levels[L].e_cum
    etas = tuple(m.eta for m in moments)
    n_exact, n_samples, final = [], [], []
    for l, (lp, eta) in enumerate(zip(levels, etas)):
        active = l >= coarsest
        x = e_total * lp.delta * abs(big[l]) / (v * eta) if active else 0.0
        n_exact.append(x)
        n_samples.append(round_samples(x) if active else 0)
        final.append(LevelPlan(lp.theta, lp.delta, lp.e_cum, lp.alpha, lp.beta, active))
    return WmlmcPlan(tuple(final), tuple(big), tuple(n_samples), v, coarsest, etas,
                     tuple(n_exact), method)


def wmlmc_plan(moments: Sequence[LevelMoments], v: float,
               theta: Sequence[float] | None = None) -> WmlmcPlan:
    """Optimally weighted plan for variance ``v**2`` over levels ``0..L``.

    ``theta`` forces the weights instead of optimising them (entry 0 is
    ignored; a zero entry restarts the estimator at that level).  With
    ``theta`` equal to 1 on every kept level this is the MLMC plan.
    """
    _check(moments, v)
    if theta is not None and len(theta) != len(moments):
        raise PlanningError("forced theta must have one entry per level")
    levels = [_reset(moments[0], v)]
    for l in range(1, len(moments)):
        m = moments[l]
        sp, s, rho, eta = m.sigma_coarse, m.sigma_fine, m.rho, m.eta
        e_prev = levels[-1].e_cum
        if theta is not None:
            th = float(theta[l])
            if th == 0.0 or e_prev == 0.0:
                levels.append(_reset(m, v))
                continue
            delta = _delta_theta(s, sp, rho, th)
        else:
            if sp == 0.0 or e_prev == 0.0:
                levels.append(_reset(m, v))
                continue
            ratio = v * e_prev / (sp * eta)
            if not abs(rho) > ratio:
                levels.append(_reset(m, v))
                continue
            delta = s * math.sqrt(1.0 - rho * rho) / math.sqrt(1.0 - ratio * ratio)
            th = rho * s / sp - math.copysign(1.0, rho) * delta * v * e_prev / (sp * sp * eta)
        e_cum = (delta * eta + abs(th) * e_prev * v) / v
        alpha = e_cum * delta / (eta * v)
        beta = e_cum * abs(th) / e_prev
        levels.append(LevelPlan(th, delta, e_cum, alpha, beta))
    return _finish(levels, moments, v, "WMLMC" if theta is None else "forced")


def mlmc_plan(moments: Sequence[LevelMoments], v: float) -> WmlmcPlan:
    """Standard MLMC plan with the cost-optimal coarsest level.

    Level ``l`` is kept as a correction only if it strictly lowers the
    square-root cost below the single-level value ``sigma_l eta_l / v``;
    otherwise all coarser levels are dropped.  For ``l = 1`` and equal
    variances this is the familiar correlation threshold
    ``rho_1 > (sigma_0/sigma_1)(2^g - 1)/2^{g+1} + 2^{-g/2}``.
    """
    _check(moments, v)
    L = len(moments) - 1
    deltas = [moments[0].sigma_fine] + [m.delta for m in moments[1:]]
    keep = [False] * (L + 1)
    e_run = moments[0].sigma_fine * moments[0].eta / v
    for l in range(1, L + 1):
        m = moments[l]
        cont = e_run + deltas[l] * m.eta / v
        single = m.sigma_fine * m.eta / v
        if single > cont:
            keep[l] = True
            e_run = cont
        else:
            e_run = single
    coarsest = max([l for l in range(L + 1) if not keep[l]])
    # direct Lagrange solution over the kept levels
    levels = []
    e_prev = None
    for l in range(L + 1):
        m = moments[l]
        if l < coarsest or not keep[l]:
            d = m.sigma_fine
            e_l = d * m.eta / v
            levels.append(LevelPlan(0.0, d, e_l, d * d / (v * v), 0.0))
        else:
            d = deltas[l]
            e_l = (moments[coarsest].sigma_fine * moments[coarsest].eta
                   + sum(deltas[k] * moments[k].eta for k in range(coarsest + 1, l + 1))) / v
            levels.append(LevelPlan(1.0, d, e_l, e_l * d / (m.eta * v), e_l / e_prev))
        e_prev = levels[-1].e_cum
    return _finish(levels, moments, v, "MLMC")


def single_level_cost(moments: Sequence[LevelMoments], v: float) -> float:
    """Square-root cost ``sigma_L eta_L / v`` of plain Monte Carlo at the finest level."""
    m = moments[-1]
    return m.sigma_fine * m.eta / v


def theta_cost(theta, sigma_prev, sigma, rho, eta, e_prev, v):
    """``E^theta_l`` for a given weight (the objective the weights minimise)."""
    d = _delta_theta(sigma, sigma_prev, rho, theta)
    return (d * eta + abs(theta) * e_prev * v) / v


def optimal_theta_oracle(sigma_prev, sigma, rho, eta, e_prev, v, *, bound=2.0,
                         grid=4001, xtol=1e-10):
    """Brute-force minimiser of ``E^theta`` over ``theta`` in ``[-bound, bound]``.

    Dense grid (which contains 0) followed by bounded Brent refinement
    around the best grid point.  Test oracle only.
    """
    f = lambda t: theta_cost(t, sigma_prev, sigma, rho, eta, e_prev, v)
    ts = np.linspace(-bound, bound, grid)
    vals = np.array([f(t) for t in ts])
    i = int(np.argmin(vals))
    best_t, best_f = float(ts[i]), float(vals[i])
    step = ts[1] - ts[0]
    lo, hi = max(-bound, best_t - step), min(bound, best_t + step)
    res = minimize_scalar(f, bounds=(lo, hi), method="bounded",
                          options={"xatol": xtol * 1e-2, "maxiter": 500})
    if res.fun < best_f:
        best_t, best_f = float(res.x), float(res.fun)
    return best_t, best_f


def normalized_cost_wmlmc(rhos: Sequence[float], mus: Sequence[float]) -> NormalizedCostSeq:
    """``delta~_l = v E~_l / (sigma_l eta_l)`` for levels ``0..L``.

    ``rhos`` and ``mus`` hold ``rho_l`` and ``mu_l = eta_{l-1}/eta_l`` for
    ``l = 1..L``.
    """
    if len(rhos) != len(mus):
        raise ValueError("rhos and mus must have equal length")
    deltas = [1.0]
    for rho, mu in zip(rhos, mus):
        if abs(rho) > 1 or not mu > 0:
            raise ValueError("need |rho| <= 1 and mu > 0")
        prev = deltas[-1]
        if abs(rho) > mu * prev:
            deltas.append(mu * abs(rho) * prev
                          + math.sqrt(1.0 - rho * rho) * math.sqrt(1.0 - mu * mu * prev * prev))
        else:
            deltas.append(1.0)
    return NormalizedCostSeq(tuple(deltas), tuple(mus))


def normalized_cost_mlmc(rhos: Sequence[float], sigma_ratios: Sequence[float],
                         mus: Sequence[float]) -> NormalizedCostSeq:
    """MLMC analogue ``delta_l = v E_l / (sigma_l eta_l)``.

    ``sigma_ratios`` holds ``sigma_{l-1} / sigma_l`` for ``l = 1..L``.
    """
    if not len(rhos) == len(sigma_ratios) == len(mus):
        raise ValueError("rhos, sigma_ratios and mus must have equal length")
    deltas = [1.0]
    for rho, s, mu in zip(rhos, sigma_ratios, mus):
        prev = deltas[-1]
        x = mu * prev
        if rho > x + 0.5 * s * (1.0 - x * x):
            rel = math.sqrt(max(1.0 - 2.0 * rho * s + s * s, 0.0))
            deltas.append(s * x + rel)
        else:
            deltas.append(1.0)
    return NormalizedCostSeq(tuple(deltas), tuple(mus))


def assemble(plan: WmlmcPlan, level_averages: Sequence[float | None]) -> EstimatorResult:
    """Combine per-level averages of ``Y~_l`` into ``sum_l Theta^L_l * avg_l``."""
    if len(level_averages) != len(plan.levels):
        raise PlanningError("need one average per level (None for inactive levels)")
    value = 0.0
    for l, (avg, big, n) in enumerate(zip(level_averages, plan.big_theta, plan.n_samples)):
        if n == 0 or big == 0.0:
            continue
        if avg is None or not math.isfinite(avg):
            raise PlanningError(f"missing average for active level {l}")
        value += big * avg
    return EstimatorResult(
        value=value,
        n_samples=plan.n_samples,
        level_costs=plan.level_costs(),
        total_cost=plan.realized_cost(),
        variance=plan.predicted_variance(),
        final_level=plan.finest,
        theta=plan.thetas,
        big_theta=plan.big_theta,
        delta=plan.deltas,
        eta=plan.etas,
        method=plan.method,
        coarsest=plan.coarsest,
    )
