"""Streaming, mergeable per-level moment accumulation.

Accumulators hold counts, means and centred second/cross moments of the
fine payoff ``P_l``, the coarse payoff ``P^l_{l-1}`` and their difference
``Y_l = P_l - P^l_{l-1}``.  Updates are Welford steps; batches and merges
use the pairwise (Chan et al.) combination, so any split of a sample
stream reproduces the unsplit result up to rounding.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InsufficientDataError


@dataclass(frozen=True)
class MomentAccumulator:
    n: int = 0
    mean_fine: float = 0.0
    m2_fine: float = 0.0
    mean_coarse: float = 0.0
    m2_coarse: float = 0.0
    cross: float = 0.0
    mean_y: float = 0.0
    m2_y: float = 0.0
    cost: float = 0.0
    has_coarse: bool | None = None
    rejected: int = 0


@dataclass(frozen=True)
class LevelMoments:
    """Finalised statistics of one level's coupled sampler.

    ``sigma_coarse`` and ``rho`` are ``None`` at the coarsest level.
    ``eta`` is the square root of the mean cost of one sample.
    """

    sigma_fine: float
    sigma_coarse: float | None
    rho: float | None
    eta: float
    mean_y: float
    n: int
    mean_fine: float | None = None
    mean_coarse: float | None = None
    sigma_y: float | None = None
    level: int | None = None

    @property
    def delta(self) -> float:
        """Standard deviation of the unweighted difference ``Y_l``."""
        if self.sigma_coarse is None:
            return self.sigma_fine
        d2 = (self.sigma_fine ** 2 - 2.0 * self.rho * self.sigma_fine * self.sigma_coarse
              + self.sigma_coarse ** 2)
        return math.sqrt(max(d2, 0.0))

    @property
    def sem_y(self) -> float:
        """Standard error of ``mean_y``."""
        sig = self.sigma_y if self.sigma_y is not None else self.delta
        return sig / math.sqrt(self.n)


def update(acc: MomentAccumulator, fine_payoff: float, coarse_payoff: float | None,
           cost: float) -> MomentAccumulator:
    """Add one sample (Welford update)."""
    has_coarse = coarse_payoff is not None
    if acc.has_coarse is not None and acc.has_coarse != has_coarse:
        raise ValueError("mixing samples with and without a coarse payoff")
    c = float(coarse_payoff) if has_coarse else 0.0
    f = float(fine_payoff)
    y = f - c
    n = acc.n + 1
    df = f - acc.mean_fine
    dc = c - acc.mean_coarse
    dy = y - acc.mean_y
    mean_f = acc.mean_fine + df / n
    mean_c = acc.mean_coarse + dc / n
    mean_y = acc.mean_y + dy / n
    return MomentAccumulator(
        n=n,
        mean_fine=mean_f,
        m2_fine=acc.m2_fine + df * (f - mean_f),
        mean_coarse=mean_c,
        m2_coarse=acc.m2_coarse + dc * (c - mean_c),
        cross=acc.cross + df * (c - mean_c),
        mean_y=mean_y,
        m2_y=acc.m2_y + dy * (y - mean_y),
        cost=acc.cost + float(cost),
        has_coarse=has_coarse,
        rejected=acc.rejected,
    )


def from_arrays(fine, coarse=None, cost=0.0, rejected=0) -> MomentAccumulator:
    """Accumulator for a whole batch (two-pass within the batch).

    ``cost`` is either a per-sample array or the total for the batch.
    """
    f = np.asarray(fine, dtype=float).ravel()
    n = f.size
    total_cost = float(np.sum(cost)) if np.ndim(cost) else float(cost)
    if n == 0:
        return MomentAccumulator(cost=total_cost, rejected=rejected,
                                 has_coarse=None if coarse is None else True)
    mf = float(f.mean())
    rf = f - mf
    if coarse is None:
        m2 = float(rf @ rf)
        return MomentAccumulator(n=n, mean_fine=mf, m2_fine=m2, mean_y=mf, m2_y=m2,
                                 cost=total_cost, has_coarse=False, rejected=rejected)
    c = np.asarray(coarse, dtype=float).ravel()
    if c.size != n:
        raise ValueError("fine and coarse batches differ in length")
    mc = float(c.mean())
    rc = c - mc
    y = f - c
    my = float(y.mean())
    ry = y - my
    return MomentAccumulator(
        n=n, mean_fine=mf, m2_fine=float(rf @ rf), mean_coarse=mc,
        m2_coarse=float(rc @ rc), cross=float(rf @ rc), mean_y=my, m2_y=float(ry @ ry),
        cost=total_cost, has_coarse=True, rejected=rejected,
    )


def merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    """Combine two accumulators of the same level."""
    if a.has_coarse is not None and b.has_coarse is not None and a.has_coarse != b.has_coarse:
        raise ValueError("cannot merge accumulators of different level types")
    has_coarse = a.has_coarse if a.has_coarse is not None else b.has_coarse
    if b.n == 0:
        return replace(a, cost=a.cost + b.cost, rejected=a.rejected + b.rejected,
                       has_coarse=has_coarse)
    if a.n == 0:
        return replace(b, cost=a.cost + b.cost, rejected=a.rejected + b.rejected,
                       has_coarse=has_coarse)
    n = a.n + b.n
    wa = a.n / n
    wb = b.n / n
    k = a.n * b.n / n
    df = b.mean_fine - a.mean_fine
    dc = b.mean_coarse - a.mean_coarse
    dy = b.mean_y - a.mean_y
    return MomentAccumulator(
        n=n,
        mean_fine=wa * a.mean_fine + wb * b.mean_fine,
        m2_fine=a.m2_fine + b.m2_fine + df * df * k,
        mean_coarse=wa * a.mean_coarse + wb * b.mean_coarse,
        m2_coarse=a.m2_coarse + b.m2_coarse + dc * dc * k,
        cross=a.cross + b.cross + df * dc * k,
        mean_y=wa * a.mean_y + wb * b.mean_y,
        m2_y=a.m2_y + b.m2_y + dy * dy * k,
        cost=a.cost + b.cost,
        has_coarse=has_coarse,
        rejected=a.rejected + b.rejected,
    )


def finalize(acc: MomentAccumulator, level: int | None = None) -> LevelMoments:
    """Unbiased moments; degenerate (zero-variance) streams report ``rho = 0``."""
    if acc.n < 2:
        raise InsufficientDataError(f"need at least 2 samples, have {acc.n}")
    denom = acc.n - 1
    sig_f = math.sqrt(max(acc.m2_fine, 0.0) / denom)
    sig_y = math.sqrt(max(acc.m2_y, 0.0) / denom)
    eta = math.sqrt(acc.cost / acc.n)
    if not acc.has_coarse:
        return LevelMoments(sig_f, None, None, eta, acc.mean_y, acc.n,
                            mean_fine=acc.mean_fine, sigma_y=sig_y, level=level)
    sig_c = math.sqrt(max(acc.m2_coarse, 0.0) / denom)
    if acc.m2_fine > 0 and acc.m2_coarse > 0:
        rho = acc.cross / math.sqrt(acc.m2_fine * acc.m2_coarse)
        rho = min(1.0, max(-1.0, rho))
    else:
        rho = 0.0
    return LevelMoments(sig_f, sig_c, rho, eta, acc.mean_y, acc.n,
                        mean_fine=acc.mean_fine, mean_coarse=acc.mean_coarse,
                        sigma_y=sig_y, level=level)


# -- JSON table -------------------------------------------------------------

def moments_to_table(moments) -> dict:
    rows = []
    for l, m in enumerate(moments):
        row = asdict(m)
        row["level"] = l if m.level is None else m.level
        rows.append(row)
    return {"levels": rows}


def moments_from_table(table) -> list[LevelMoments]:
    """Parse a ``{"levels": [...]}`` table; rows must be ordered by level."""
    if not isinstance(table, dict) or not isinstance(table.get("levels"), list):
        raise ValueError("moment table must be an object with a 'levels' list")
    out = []
    for pos, row in enumerate(table["levels"]):
        if not isinstance(row, dict):
            raise ValueError(f"row {pos} is not an object")
        try:
            sigma_fine = float(row["sigma_fine"])
            eta = float(row["eta"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"row {pos}: sigma_fine and eta are required numbers") from exc
        level = int(row.get("level", pos))
        if level != pos:
            raise ValueError(f"row {pos} has level {level}; rows must be levels 0..L in order")
        sc = row.get("sigma_coarse")
        rho = row.get("rho")
        if pos > 0 and (sc is None or rho is None):
            raise ValueError(f"row {pos}: sigma_coarse and rho are required above level 0")
        out.append(LevelMoments(
            sigma_fine=sigma_fine,
            sigma_coarse=None if sc is None else float(sc),
            rho=None if rho is None else float(rho),
            eta=eta,
            mean_y=float(row.get("mean_y", 0.0)),
            n=int(row.get("n", 0)),
            mean_fine=row.get("mean_fine"),
            mean_coarse=row.get("mean_coarse"),
            sigma_y=row.get("sigma_y"),
            level=level,
        ))
    return out


def save_moments(path, moments):
    Path(path).write_text(json.dumps(moments_to_table(moments), indent=2) + "\n")


def load_moments(path) -> list[LevelMoments]:
    return moments_from_table(json.loads(Path(path).read_text()))
