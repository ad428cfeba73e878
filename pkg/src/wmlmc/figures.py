"""Datasets for the cost-comparison figures (CSV only, no plotting)."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from . import driver, planner
from .payoff import PayoffKind, PayoffSpec
from .sde import ModelSpec, SchemeKind, SchemeSpec

RHO_STAR = 1.0 / math.sqrt(2.0) + 0.25
MU_HALF = 1.0 / math.sqrt(2.0)
LEVEL_VARIANCE = 0.5e-6
MSE_GRID = tuple(float(x) for x in np.logspace(-2, -6, 9))


def two_level_rows(rhos=None, mu=MU_HALF):
    """Normalised MLMC and WMLMC costs of a two-level estimator vs. correlation (equal sigmas)."""
    if rhos is None:
        rhos = sorted(set(np.round(np.linspace(0.0, 1.0, 1001), 12).tolist()) | {RHO_STAR})
    rows = []
    for rho in rhos:
        dm = planner.normalized_cost_mlmc([rho], [1.0], [mu]).deltas[-1]
        dw = planner.normalized_cost_wmlmc([rho], [mu]).deltas[-1]
        rows.append({"rho": rho, "delta_mlmc": dm, "delta_wmlmc": dw,
                     "cost_mlmc": dm * dm, "cost_wmlmc": dw * dw, "cost_mc": 1.0,
                     "ratio": (dm / dw) ** 2})
    return rows


def three_level_rows(n=101, mu=MU_HALF):
    """Level-2 normalised costs over a grid of ``(rho_1, rho_2)``, equal sigmas."""
    grid = sorted(set(np.round(np.linspace(0.0, 1.0, n), 12).tolist()) | {RHO_STAR})
    rows = []
    for r1 in grid:
        for r2 in grid:
            dm = planner.normalized_cost_mlmc([r1, r2], [1.0, 1.0], [mu, mu]).deltas[-1]
            dw = planner.normalized_cost_wmlmc([r1, r2], [mu, mu]).deltas[-1]
            rows.append({"rho1": r1, "rho2": r2, "cost_mlmc": dm * dm, "cost_wmlmc": dw * dw,
                         "ratio": (dm / dw) ** 2})
    return rows


@dataclass(frozen=True)
class McFigure:
    model: ModelSpec
    scheme: SchemeSpec
    payoff: PayoffSpec
    finest: int


def _anti(kind, m=2):
    return SchemeSpec(kind, refinement=m, antithetic=True)


MC_FIGURES = {
    "gbm-call": McFigure(ModelSpec.gbm(), _anti(SchemeKind.EULER), PayoffSpec(PayoffKind.CALL), 12),
    "fig3": McFigure(ModelSpec.gbm(), _anti(SchemeKind.MILSTEIN), PayoffSpec(PayoffKind.ASIAN), 12),
    "fig4": McFigure(ModelSpec.igbm(), _anti(SchemeKind.MILSTEIN), PayoffSpec(PayoffKind.CALL), 12),
    "fig5": McFigure(ModelSpec.cir(), _anti(SchemeKind.MILSTEIN, 4), PayoffSpec(PayoffKind.CALL), 6),
    "fig6": McFigure(ModelSpec.gbm(), _anti(SchemeKind.EULER, 4), PayoffSpec(PayoffKind.DIGITAL), 6),
}

ALL = ("fig1", "fig2", "fig3", "fig4", "fig5", "fig6", "fig7", "gbm-call")


def mc_figure(name, samples_per_level=100_000, seed=0, threads=1, finest=None):
    """Shared moment table, cost sweep and per-level breakdown for one model."""
    fig = MC_FIGURES[name]
    L = fig.finest if finest is None else finest
    cfg = driver.RunConfig(fig.model, fig.scheme, fig.payoff, target_mse=MSE_GRID[0],
                           seed=seed, threads=threads, max_level=max(L, 2))
    moments = driver.collect_moments(cfg, L, samples_per_level)
    sweep = driver.sweep(cfg, MSE_GRID, moments)
    levels = driver.level_breakdown(moments, LEVEL_VARIANCE)
    return moments, sweep, levels


def histogram_runs(reps=20, target_mse=1e-5, seed=0, threads=1, progress: Callable = None):
    """Repeated adaptive IGBM/Milstein estimates with both weightings."""
    fig = MC_FIGURES["fig4"]
    base = driver.RunConfig(fig.model, fig.scheme, fig.payoff, target_mse=target_mse,
                            threads=threads)
    rows = []
    for method in (driver.Method.MLMC, driver.Method.WMLMC):
        for r in range(reps):
            res = driver.run(replace(base, method=method, seed=seed * 100_003 + r))
            rows.append({"method": method.value, "rep": r, "value": res.value,
                         "cost": res.total_cost, "variance": res.variance,
                         "level": res.final_level, "coarsest": res.coarsest,
                         "converged": res.converged})
            if progress:
                progress(method.value, r)
    return rows


def histogram_bins(rows, bins=20):
    """Shared bins per quantity so the two methods are directly comparable."""
    out = []
    for q in ("value", "cost"):
        vals = np.array([r[q] for r in rows], dtype=float)
        edges = np.histogram_bin_edges(vals, bins=bins)
        for method in ("MLMC", "WMLMC"):
            sel = np.array([r[q] for r in rows if r["method"] == method], dtype=float)
            counts, _ = np.histogram(sel, bins=edges)
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                out.append({"quantity": q, "method": method, "bin_lo": lo, "bin_hi": hi,
                            "count": int(c)})
    return out
