"""Discounted payoff functionals on path summaries."""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .sde import ModelSpec, PathSummary, eval_coefficients


class PayoffKind(str, Enum):
    CALL = "Call"
    ASIAN = "Asian"
    DIGITAL = "Digital"


@dataclass(frozen=True)
class PayoffSpec:
    """European payoff with strike ``K``.

    Digital is cash-or-nothing: it pays ``K`` when ``S_T > K e^{rT}``.
    ``interpolate`` switches the Brownian-bridge average on coarse Asian
    paths; without it the coarse payoff uses the trapezoidal node average.
    """

    kind: PayoffKind
    strike: float = 100.0
    interpolate: bool = True

    def __post_init__(self):
        object.__setattr__(self, "kind", PayoffKind(self.kind))
        if not self.strike > 0:
            raise ValueError("strike must be positive")


def evaluate(payoff: PayoffSpec, path: PathSummary, model: ModelSpec):
    """Discounted payoff of a path summary (scalars or arrays)."""
    disc = math.exp(-model.rate * model.horizon)
    K = payoff.strike
    if payoff.kind is PayoffKind.CALL:
        return disc * np.maximum(path.terminal - K, 0.0)
    if payoff.kind is PayoffKind.ASIAN:
        avg = path.time_average
        if payoff.interpolate and path.bridge_average is not None:
            avg = path.bridge_average
        return disc * np.maximum(avg - K, 0.0)
    barrier = K * math.exp(model.rate * model.horizon)
    return disc * K * (np.asarray(path.terminal) > barrier)


def coarse_asian_mean(fine_increments, coarse_path, model: ModelSpec, refinement: int):
    """Interpolated time average of a coarse path (reference implementation).

    Between coarse nodes ``t_j`` and ``t_{j+1}`` the path is taken as the
    linear interpolant of ``S_j, S_{j+1}`` plus ``b(S_j)`` times the
    Brownian bridge deviation ``W(t) - W_j - (t - t_j)/h_c * dW_j``, with
    ``W`` piecewise linear on the fine grid.  Integrating over ``[0, T]``
    gives the trapezoidal node average plus
    ``(h_f / T) * sum_j b(S_j) * sum_{i=1}^{M-1} B_{j,i}``.
    """
    if coarse_path is None:
        raise ValueError("no coarse path at the coarsest level")
    dw = np.asarray(fine_increments, dtype=float)
    s = np.asarray(coarse_path, dtype=float)
    M = int(refinement)
    n_coarse = s.size - 1
    if n_coarse < 1 or dw.size != n_coarse * M:
        raise ValueError("coarse path and fine increments do not match")
    h_f = model.horizon / dw.size
    trapezoid = 0.5 * (s[:-1] + s[1:]).sum() / n_coarse
    blocks = dw.reshape(n_coarse, M)
    partial = np.cumsum(blocks, axis=1)
    steps = np.arange(1, M) / M
    bridge = partial[:, :-1] - steps * partial[:, -1:]
    b = np.array([eval_coefficients(model, x)[1] for x in s[:-1]])
    return trapezoid + h_f / model.horizon * float(np.dot(b, bridge.sum(axis=1)))


def payoff_pairs(payoff: PayoffSpec, fine: PathSummary, coarse: PathSummary | None,
                 model: ModelSpec):
    """Per-sample ``(P_l, P^l_{l-1})`` with antithetic mirrors averaged."""
    pf = np.asarray(evaluate(payoff, fine, model), dtype=float)
    pf = pf.mean(axis=-1) if pf.ndim > 1 else pf
    if coarse is None:
        return pf, None
    pc = np.asarray(evaluate(payoff, coarse, model), dtype=float)
    pc = pc.mean(axis=-1) if pc.ndim > 1 else pc
    return pf, pc
