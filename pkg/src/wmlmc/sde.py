"""SDE test problems and coupled fine/coarse path sampling.

Level ``l`` uses ``J_l = J_0 * M**l`` steps of size ``h_l = T / J_l``.  The
coarse path of a level-``l`` sample is driven by the fine Brownian
increments summed in blocks of ``M``, so ``P_l`` and ``P^l_{l-1}`` share
their randomness.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, NamedTuple

import numpy as np

from . import kernels as _kernels
from ._kernels_py import (
    C_BRIDGE,
    C_RUNNING,
    C_TERMINAL,
    C_TRAPEZOID,
    F_RUNNING,
    F_TERMINAL,
    F_TRAPEZOID,
    N_OUTPUTS,
)
from .errors import NonFiniteSampleError
from .streams import normals, stream_key


class Family(str, Enum):
    GBM = "GBM"
    IGBM = "IGBM"
    CIR = "CIR"


class SchemeKind(str, Enum):
    EULER = "EulerMaruyama"
    MILSTEIN = "Milstein"


# Table of drift/volatility parameters; all three share the 0.2 volatility.
DEFAULT_PARAMS = {
    Family.GBM: {"mu": 0.05, "sigma": 0.2},
    Family.IGBM: {"kappa": 2.0, "theta": 100.0, "sigma": 0.2},
    Family.CIR: {"kappa": 2.0, "theta": 100.0, "sigma": 0.2},
}

_KERNEL_CODE = {Family.GBM: 0, Family.IGBM: 1, Family.CIR: 2}
_MILSTEIN_FAMILIES = frozenset(Family)

# doubles per kernel call; bounds memory for fine levels
CHUNK_ELEMENTS = 1 << 21


@dataclass(frozen=True)
class ModelSpec:
    """A scalar SDE ``dS = a(S) dt + b(S) dW`` with discounting data.

    GBM:  ``a = mu*S``,             ``b = sigma*S``
    IGBM: ``a = kappa*(theta - S)``, ``b = sigma*S``
    CIR:  ``a = kappa*(theta - S)``, ``b = sigma*sqrt(S)``
    """

    family: Family
    params: Mapping[str, float] = field(default_factory=dict)
    s0: float = 100.0
    horizon: float = 1.0
    rate: float = 0.05

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        merged = dict(DEFAULT_PARAMS[family])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {family.value}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if merged["sigma"] < 0:
            raise ValueError("volatility coefficient must be non-negative")
        if family is Family.CIR and not self.s0 > 0:
            raise ValueError("CIR needs s0 > 0")
        if not math.isfinite(self.s0):
            raise ValueError("s0 must be finite")

    @classmethod
    def gbm(cls, **kw):
        return cls(Family.GBM, kw.pop("params", {}), **kw)

    @classmethod
    def igbm(cls, **kw):
        return cls(Family.IGBM, kw.pop("params", {}), **kw)

    @classmethod
    def cir(cls, **kw):
        return cls(Family.CIR, kw.pop("params", {}), **kw)

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.horizon)

    def kernel_args(self):
        p = self.params
        if self.family is Family.GBM:
            return _KERNEL_CODE[self.family], p["mu"], 0.0, p["sigma"]
        return _KERNEL_CODE[self.family], p["kappa"], p["theta"], p["sigma"]


@dataclass(frozen=True)
class SchemeSpec:
    kind: SchemeKind = SchemeKind.EULER
    refinement: int = 2
    base_steps: int = 1
    antithetic: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", SchemeKind(self.kind))
        if int(self.refinement) != self.refinement or self.refinement < 2:
            raise ValueError("refinement M must be an integer >= 2")
        if int(self.base_steps) != self.base_steps or self.base_steps < 1:
            raise ValueError("base_steps J0 must be an integer >= 1")

    def steps(self, level: int) -> int:
        return self.base_steps * self.refinement ** level

    def check_model(self, model: ModelSpec):
        if self.kind is SchemeKind.MILSTEIN and model.family not in _MILSTEIN_FAMILIES:
            raise ValueError(f"Milstein needs an analytic b' for {model.family.value}")


@dataclass(frozen=True)
class PathSummary:
    """Aggregates of one discrete path (fields may be arrays for batches).

    ``running_mean`` is the right-endpoint average ``(1/J) sum_{j>=1} S_j``;
    ``time_average`` is the trapezoidal average used by the Asian payoff;
    ``bridge_average`` exists on coarse paths only and adds the Brownian
    bridge correction built from the fine increments.
    """

    terminal: float | np.ndarray
    running_mean: float | np.ndarray
    time_average: float | np.ndarray
    steps: int
    bridge_average: float | np.ndarray | None = None


@dataclass(frozen=True)
class CoupledSample:
    fine: PathSummary
    coarse: PathSummary | None
    cost_units: float
    fine_mirror: PathSummary | None = None
    coarse_mirror: PathSummary | None = None


@dataclass(frozen=True)
class CoupledBatch:
    """Samples ``start .. start+n-1`` of one level.

    Path fields have shape ``(n, P)`` with ``P = 2`` for antithetic pairs.
    Samples whose paths went non-finite are dropped; ``rejected`` counts them.
    """

    level: int
    start: int
    fine: PathSummary
    coarse: PathSummary | None
    cost_units: float
    rejected: int = 0
    indices: np.ndarray | None = None

    @property
    def n(self) -> int:
        return np.shape(self.fine.terminal)[0]


class Substream(NamedTuple):
    """Location of one sample in the counter-based stream."""

    seed: int
    index: int
    tag: int = 0


def eval_coefficients(model: ModelSpec, s: float):
    """Return ``(a, b, b')`` at ``s``.

    For CIR negative states are handled by full truncation: ``s`` is replaced
    by ``max(s, 0)`` in both coefficients, and ``b' = 0`` where ``b = 0``.
    """
    if not math.isfinite(s):
        raise ValueError("state must be finite")
    p = model.params
    sig = p["sigma"]
    if model.family is Family.GBM:
        return p["mu"] * s, sig * s, sig
    if model.family is Family.IGBM:
        return p["kappa"] * (p["theta"] - s), sig * s, sig
    sp = max(s, 0.0)
    b_prime = 0.5 * sig / math.sqrt(sp) if sp > 0 else 0.0
    return p["kappa"] * (p["theta"] - sp), sig * math.sqrt(sp), b_prime


def cost_units(scheme: SchemeSpec, level: int) -> float:
    """Deterministic per-sample cost: fine plus coarse steps, doubled for pairs."""
    steps = scheme.steps(level)
    if level > 0:
        steps += scheme.steps(level - 1)
    return float(steps * (2 if scheme.antithetic else 1))


def fine_cost_units(scheme: SchemeSpec, level: int) -> float:
    """Cost counting the fine path only (a ``Y_l`` sample priced like ``P_l``)."""
    return float(scheme.steps(level) * (2 if scheme.antithetic else 1))


def brownian_increments(scheme: SchemeSpec, model: ModelSpec, level: int,
                        seed: int, start: int, n: int, tag: int = 0) -> np.ndarray:
    """Increments ``dW`` of shape ``(n, J_l)`` for samples ``start..start+n-1``."""
    steps = scheme.steps(level)
    h = model.horizon / steps
    key = stream_key(seed, tag, level)
    return normals(key, start, n, steps) * math.sqrt(h)


def paths_from_increments(model: ModelSpec, scheme: SchemeSpec, level: int,
                          dW: np.ndarray, kernel=None) -> np.ndarray:
    """Run the kernel on given increments; returns the raw ``(7, n, P)`` array."""
    kernel = kernel or _kernels.coupled_paths
    dW = np.ascontiguousarray(dW, dtype=np.float64)
    n, steps = dW.shape
    if steps != scheme.steps(level):
        raise ValueError(f"expected {scheme.steps(level)} increments per sample, got {steps}")
    P = 2 if scheme.antithetic else 1
    out = np.full((N_OUTPUTS, n, P), np.nan)
    code, p0, p1, p2 = model.kernel_args()
    kernel(code, p0, p1, p2, float(model.s0), float(model.horizon), steps,
           scheme.refinement, level > 0, scheme.kind is SchemeKind.MILSTEIN,
           scheme.antithetic, dW, out)
    return out


def _summaries(raw: np.ndarray, scheme: SchemeSpec, level: int):
    fine = PathSummary(raw[F_TERMINAL], raw[F_RUNNING], raw[F_TRAPEZOID], scheme.steps(level))
    coarse = None
    if level > 0:
        coarse = PathSummary(raw[C_TERMINAL], raw[C_RUNNING], raw[C_TRAPEZOID],
                             scheme.steps(level - 1), raw[C_BRIDGE])
    return fine, coarse


def _chunk_bounds(start: int, n: int, steps: int):
    size = max(1, CHUNK_ELEMENTS // steps)
    # aligned to absolute sample index so the partition never depends on `start` history
    bounds = []
    lo = start
    end = start + n
    while lo < end:
        hi = min(end, (lo // size + 1) * size)
        bounds.append((lo, hi))
        lo = hi
    return bounds


def simulate_batch(model: ModelSpec, scheme: SchemeSpec, level: int, seed: int,
                   start: int, n: int, *, tag: int = 0, threads: int = 1,
                   kernel=None, cost_model: str = "steps") -> CoupledBatch:
    """Simulate samples ``start .. start+n-1`` of ``level``.

    Results depend only on ``(model, scheme, level, seed, tag)`` and the
    sample indices, never on ``threads`` or on how earlier calls split the
    index range.  ``cost_model`` is ``"steps"`` (fine + coarse steps),
    ``"fine"`` (fine steps only) or ``"measured"`` (wall-clock ns).
    """
    if level < 0:
        raise ValueError("level must be >= 0")
    scheme.check_model(model)
    steps = scheme.steps(level)
    if level > 0 and steps % scheme.refinement:
        raise ValueError("fine grid must refine the coarse grid")
    bounds = _chunk_bounds(start, n, steps)

    def run(bound):
        lo, hi = bound
        dW = brownian_increments(scheme, model, level, seed, lo, hi - lo, tag)
        return paths_from_increments(model, scheme, level, dW, kernel)

    t0 = time.perf_counter()
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, bounds))
    else:
        parts = [run(b) for b in bounds]
    elapsed = time.perf_counter() - t0
    P = 2 if scheme.antithetic else 1
    raw = np.concatenate(parts, axis=1) if parts else np.empty((N_OUTPUTS, 0, P))

    cols = [F_TERMINAL, F_RUNNING, F_TRAPEZOID]
    if level > 0:
        cols += [C_TERMINAL, C_RUNNING, C_TRAPEZOID, C_BRIDGE]
    ok = np.all(np.isfinite(raw[cols]), axis=(0, 2))
    rejected = int(ok.size - np.count_nonzero(ok))
    indices = np.arange(start, start + n)
    if rejected:
        raw = raw[:, ok, :]
        indices = indices[ok]

    if cost_model == "steps":
        cost = cost_units(scheme, level)
    elif cost_model == "fine":
        cost = fine_cost_units(scheme, level)
    elif cost_model == "measured":
        cost = max(elapsed * 1e9 / max(n, 1), 1e-9)
    else:
        raise ValueError(f"unknown cost model {cost_model!r}")
    fine, coarse = _summaries(raw, scheme, level)
    return CoupledBatch(level, start, fine, coarse, cost, rejected, indices)


def simulate_coupled(model: ModelSpec, scheme: SchemeSpec, level: int,
                     stream: Substream, kernel=None) -> CoupledSample:
    """One coupled sample at ``level`` from its substream.

    Raises :class:`NonFiniteSampleError` if either path overflows.
    """
    batch = simulate_batch(model, scheme, level, stream.seed, stream.index, 1,
                           tag=stream.tag, kernel=kernel)
    if batch.rejected:
        raise NonFiniteSampleError(
            f"non-finite path at level {level}, sample {stream.index}")

    def pick(summary, m):
        if summary is None:
            return None
        bridge = None if summary.bridge_average is None else float(summary.bridge_average[0, m])
        return PathSummary(float(summary.terminal[0, m]), float(summary.running_mean[0, m]),
                           float(summary.time_average[0, m]), summary.steps, bridge)

    mirror = scheme.antithetic
    return CoupledSample(
        fine=pick(batch.fine, 0),
        coarse=pick(batch.coarse, 0),
        cost_units=batch.cost_units,
        fine_mirror=pick(batch.fine, 1) if mirror else None,
        coarse_mirror=pick(batch.coarse, 1) if mirror else None,
    )
