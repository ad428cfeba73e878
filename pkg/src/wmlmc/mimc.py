"""Weighted multi-index Monte Carlo on tensor-product boxes ``0 <= lam <= Lam``.

Each node ``lam`` carries local weights ``t[nu]`` on its backward box
``{nu >= 0 : 0 < lam - nu <= 1}`` and the estimator

    P_lam = <alpha_lam> Y_lam + sum_nu t[nu] <beta_lam / beta_nu> P_nu,
    Y_lam = P_lam - sum_nu t[nu] P^lam_nu,

(``<n> X`` is an average over ``n`` samples).  Expanding gives weights
``Theta^lam_nu`` on every ``Y_nu``, the sums of products of local weights
along all lattice paths from ``nu`` up to ``lam``.  Unit weights with the
inclusion-exclusion signs reproduce plain MIMC.

A node whose optimal weight vector is exactly zero restarts the estimator
there: it is planned like the root (``beta = alpha``) and nothing below it
is sampled for the indices above it.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import OptimizerError, PlanningError

Index = tuple


# -- index helpers ------------------------------------------------------------

def as_index(lam) -> Index:
    if isinstance(lam, (int, np.integer)):
        lam = (int(lam),)
    out = tuple(int(x) for x in lam)
    if not out or any(x < 0 for x in out):
        raise ValueError(f"bad multi-index {lam!r}")
    return out


def backward_box(lam) -> list[Index]:
    """All ``nu >= 0`` with ``0 < lam - nu <= 1`` entrywise, in sorted order."""
    lam = as_index(lam)
    choices = [(x - 1, x) if x > 0 else (x,) for x in lam]
    return sorted(nu for nu in itertools.product(*choices) if nu != lam)


def forward_box(lam, upper=None) -> list[Index]:
    lam = as_index(lam)
    out = []
    for step in itertools.product((0, 1), repeat=len(lam)):
        if any(step):
            nu = tuple(a + b for a, b in zip(lam, step))
            if upper is None or leq(nu, upper):
                out.append(nu)
    return sorted(out)


def epsilon_sign(lam, nu) -> int:
    """Inclusion-exclusion sign ``(-1)**(1 + |lam - nu|)``."""
    diff = sum(a - b for a, b in zip(lam, nu))
    return 1 if diff % 2 == 1 else -1


def leq(a, b) -> bool:
    return all(x <= y for x, y in zip(a, b))


def meet(a, b) -> Index:
    return tuple(min(x, y) for x, y in zip(a, b))


def box(upper) -> list[Index]:
    """All indices ``0 <= nu <= upper`` in lexicographic order (a linear extension)."""
    upper = as_index(upper)
    return list(itertools.product(*(range(x + 1) for x in upper)))


def theta_tables(weights: Mapping, order: Sequence[Index]) -> dict:
    """``Theta^lam_nu`` for every ``lam`` in ``order``.

    ``weights[lam]`` maps each backward neighbour of ``lam`` to its local
    weight.  Plain arithmetic only, so symbolic weights work too.
    """
    tables = {}
    for lam in order:
        tab = {lam: 1}
        for kappa, w in weights.get(lam, {}).items():
            if w == 0:
                continue
            for nu, th in tables[kappa].items():
                tab[nu] = tab.get(nu, 0) + w * th
        tables[lam] = tab
    return tables


# -- covariance oracles -------------------------------------------------------

class CovarianceOracle:
    """Provider of ``sigma^2_lam``, ``c_lam``, ``C_lam`` and ``eta_lam``.

    ``c`` and ``C`` follow the order of ``backward_box(lam)``.
    """

    def blocks(self, lam):
        raise NotImplementedError

    def eta(self, lam) -> float:
        raise NotImplementedError


class TableOracle(CovarianceOracle):
    def __init__(self, table: Mapping):
        self._t = {as_index(k): v for k, v in table.items()}

    def _row(self, lam):
        try:
            return self._t[as_index(lam)]
        except KeyError:
            raise PlanningError(f"no covariance data for index {tuple(lam)}") from None

    def blocks(self, lam):
        row = self._row(lam)
        n = len(backward_box(lam))
        c = np.asarray(row["c"], dtype=float).reshape(n)
        C = np.asarray(row["C"], dtype=float).reshape(n, n)
        return float(row["sigma2"]), c, C

    def eta(self, lam):
        return float(self._row(lam)["eta"])

    def to_json(self) -> dict:
        return {"nodes": [dict(index=list(k), **_listify(v)) for k, v in sorted(self._t.items())]}

    @classmethod
    def from_json(cls, doc):
        if not isinstance(doc, dict) or not isinstance(doc.get("nodes"), list):
            raise ValueError("oracle file must hold an object with a 'nodes' list")
        table = {}
        for row in doc["nodes"]:
            try:
                table[as_index(row["index"])] = {k: row[k] for k in ("sigma2", "c", "C", "eta")}
            except (KeyError, TypeError) as exc:
                raise ValueError(f"bad oracle row {row!r}") from exc
        return cls(table)

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))


def _listify(row):
    return {k: (np.asarray(v).tolist() if not np.isscalar(v) else v) for k, v in row.items()}


def oracle_from_level_moments(moments) -> TableOracle:
    """One-dimensional oracle built from single-index level moments."""
    table = {}
    for l, m in enumerate(moments):
        if l == 0:
            table[(0,)] = dict(sigma2=m.sigma_fine ** 2, c=[], C=[], eta=m.eta)
        else:
            table[(l,)] = dict(sigma2=m.sigma_fine ** 2,
                               c=[m.rho * m.sigma_fine * m.sigma_coarse],
                               C=[[m.sigma_coarse ** 2]], eta=m.eta)
    return TableOracle(table)


@dataclass
class SeparableModel(CovarianceOracle):
    """Synthetic product model with analytic moments.

    Per dimension ``i``: ``X_i^(k) = m_i(k) + sum_{j<=k} a_ij xi_ij`` with
    independent standard normals ``xi``, ``m_i(k) = 1 + bias[i] 2^{-k}`` and
    ``a_ij^2 = scale[i]^2 2^{-decay[i] j}``.  ``P_lam = prod_i X_i^(lam_i)``
    and all coarse values in a sample share the same ``xi``.  Cost per
    sample is ``prod_i refine[i]^{lam_i}``.
    """

    bias: Sequence[float]
    scale: Sequence[float]
    decay: Sequence[float]
    refine: Sequence[float] = None
    base: float = 1.0

    def __post_init__(self):
        d = len(self.bias)
        if not (len(self.scale) == len(self.decay) == d) or d < 1:
            raise ValueError("bias, scale and decay need one entry per dimension")
        if self.refine is None:
            self.refine = [2.0] * d

    @property
    def dim(self):
        return len(self.bias)

    def _m(self, i, k):
        return self.base + self.bias[i] * 2.0 ** (-k)

    def _a2(self, i, j):
        return self.scale[i] ** 2 * 2.0 ** (-self.decay[i] * j)

    def _v(self, i, k):
        return sum(self._a2(i, j) for j in range(k + 1))

    def mean(self, lam):
        return math.prod(self._m(i, k) for i, k in enumerate(lam))

    def cov(self, a, b):
        second = math.prod(self._m(i, x) * self._m(i, y) + self._v(i, min(x, y))
                           for i, (x, y) in enumerate(zip(a, b)))
        return second - self.mean(a) * self.mean(b)

    def blocks(self, lam):
        lam = as_index(lam)
        nbrs = backward_box(lam)
        c = np.array([self.cov(nu, lam) for nu in nbrs])
        C = np.array([[self.cov(a, b) for b in nbrs] for a in nbrs]).reshape(len(nbrs), len(nbrs))
        return self.cov(lam, lam), c, C

    def eta(self, lam):
        return math.sqrt(math.prod(self.refine[i] ** k for i, k in enumerate(lam)))

    def sample(self, lam, n, rng):
        """``(n, 1 + |box|)`` array: ``P_lam`` then ``P^lam_nu`` in box order."""
        lam = as_index(lam)
        parts = []
        for i, k in enumerate(lam):
            a = np.sqrt([self._a2(i, j) for j in range(k + 1)])
            xi = rng.standard_normal((n, k + 1))
            cum = np.cumsum(xi * a, axis=1)
            parts.append(cum)
        cols = [lam] + backward_box(lam)
        out = np.empty((n, len(cols)))
        for j, nu in enumerate(cols):
            val = np.ones(n)
            for i, k in enumerate(nu):
                val = val * (self._m(i, k) + parts[i][:, k])
            out[:, j] = val
        return out


class EstimatedOracle(CovarianceOracle):
    """Covariances estimated from pilot draws of a coupled sampler.

    ``sampler(lam, n, rng)`` must return the ``(n, 1 + |box|)`` layout of
    :meth:`SeparableModel.sample`.
    """

    def __init__(self, sampler: Callable, eta: Callable, n_pilot: int = 1000, seed: int = 0):
        if n_pilot < 2:
            raise ValueError("n_pilot must be at least 2")
        self._sampler = sampler
        self._eta = eta
        self.n_pilot = n_pilot
        self.seed = seed
        self._cache = {}

    def blocks(self, lam):
        lam = as_index(lam)
        if lam not in self._cache:
            rng = np.random.default_rng([self.seed, *lam])
            x = np.asarray(self._sampler(lam, self.n_pilot, rng), dtype=float)
            S = np.atleast_2d(np.cov(x, rowvar=False))
            self._cache[lam] = (float(S[0, 0]), S[1:, 0].copy(), S[1:, 1:].copy())
        return self._cache[lam]

    def eta(self, lam):
        return float(self._eta(as_index(lam)))


# -- node optimisation --------------------------------------------------------

@dataclass(frozen=True)
class MimcNode:
    index: Index
    neighbours: tuple
    t: tuple
    theta_table: dict
    delta: float
    delta_hat: float
    w: float
    alpha: float
    beta: float
    eta: float
    eta_hat: float
    support: frozenset
    reset: bool = False


def build_r_matrix(lam, nodes: Mapping) -> np.ndarray:
    """``R[k, k'] = sum_{nu <= k ^ k'} Theta^k_nu Theta^k'_nu Delta_nu^2 beta_nu / alpha_nu``."""
    nbrs = backward_box(lam)
    for k in nbrs:
        if k not in nodes:
            raise PlanningError(f"node {k} must be optimised before {tuple(lam)}")
    n = len(nbrs)
    R = np.zeros((n, n))
    for a in range(n):
        for b in range(a, n):
            ka, kb = nbrs[a], nbrs[b]
            ta, tb = nodes[ka].theta_table, nodes[kb].theta_table
            s = 0.0
            for nu in sorted(set(ta) & set(tb)):
                node = nodes[nu]
                s += ta[nu] * tb[nu] * node.delta ** 2 * node.beta / node.alpha
            R[a, b] = R[b, a] = s
    return R


def node_objective(t, lam, oracle, r, eta, eta_hat) -> float:
    """``v W = eta sqrt(sigma^2 - 2 c't + t'Ct) + eta_hat sqrt(t'Rt)``."""
    sigma2, c, C = oracle.blocks(lam) if not isinstance(oracle, tuple) else oracle
    t = np.asarray(t, dtype=float)
    var_y = sigma2 - 2.0 * (c @ t) + t @ C @ t
    var_hat = t @ r @ t
    return eta * math.sqrt(max(var_y, 0.0)) + eta_hat * math.sqrt(max(var_hat, 0.0))


def _minimize(f, starts, tol=1e-10, restarts=8):
    """Nelder-Mead from each start, restarted on a fresh simplex until a
    restart no longer lowers the value by more than ``tol`` (relative)."""
    best_x, best_f = None, math.inf
    settled = False
    for x0 in starts:
        x = np.asarray(x0, dtype=float)
        n = x.size
        fx = f(x)
        if fx < best_f:
            best_x, best_f = x.copy(), fx
        span = 0.05
        for k in range(restarts):
            init = np.vstack([x] + [x + span * np.eye(n)[i] for i in range(n)])
            res = minimize(f, x, method="Nelder-Mead",
                           options={"xatol": 1e-12, "fatol": 1e-15 * max(abs(fx), 1e-300),
                                    "maxiter": 2000 * n, "maxfev": 4000 * n,
                                    "initial_simplex": init})
            gain = fx - res.fun
            if res.fun < fx:
                x, fx = res.x, float(res.fun)
            if fx < best_f:
                best_x, best_f = x.copy(), fx
            if k > 0 and gain <= tol * abs(fx):
                settled = True
                break
            span = max(1e-7, 10.0 * float(np.max(np.abs(res.final_simplex[0] - res.x))))
    if not settled:
        raise OptimizerError("simplex search did not settle", best_x, best_f)
    return best_x, best_f


def _eta_hat2(support_below, nodes):
    s = 0.0
    for nu in sorted(support_below):
        node = nodes[nu]
        s += node.alpha / node.beta * node.eta ** 2
    return s


def optimize_node(lam, oracle, nodes: Mapping, v: float, weights: str = "optimal",
                  fixed_t=None) -> MimcNode:
    """Choose the local weights and effort parameters of node ``lam``.

    ``weights`` is ``"optimal"`` (minimise ``W``), ``"mimc"`` (inclusion-
    exclusion signs) or ``"fixed"`` (use ``fixed_t``).
    """
    lam = as_index(lam)
    nbrs = tuple(backward_box(lam))
    eta = oracle.eta(lam)
    sigma2, c, C = oracle.blocks(lam)
    if not (sigma2 >= 0 and eta > 0 and np.all(np.isfinite(c)) and np.all(np.isfinite(C))):
        raise PlanningError(f"bad covariance data at {lam}")
    if not nbrs:
        d0 = math.sqrt(sigma2)
        a0 = sigma2 / v ** 2
        return MimcNode(lam, (), (), {lam: 1.0}, d0, 0.0, d0 * eta / v, a0, a0, eta, 0.0,
                        frozenset([lam]), reset=True)

    R = build_r_matrix(lam, nodes)
    eps = np.array([epsilon_sign(lam, nu) for nu in nbrs], dtype=float)
    # every node reachable below lam through neighbours with nonzero weight
    def below(t):
        sup = set()
        for k, tk in zip(nbrs, t):
            if tk != 0.0:
                sup |= nodes[k].support
        return sup

    full_support = below(np.ones(len(nbrs)))
    eta_hat = math.sqrt(_eta_hat2(full_support, nodes))
    blocks = (sigma2, c, C)
    f = lambda t: node_objective(t, lam, blocks, R, eta, eta_hat)

    if weights == "optimal":
        zero = np.zeros(len(nbrs))
        t, ft = _minimize(f, [eps, zero])
        if f(zero) <= ft * (1.0 + 1e-12):
            t = zero
    elif weights == "mimc":
        t = eps
    elif weights == "fixed":
        t = np.asarray(fixed_t, dtype=float).reshape(len(nbrs))
    else:
        raise ValueError(f"unknown weights mode {weights!r}")

    t = np.asarray(t, dtype=float)
    delta = math.sqrt(max(sigma2 - 2.0 * (c @ t) + t @ C @ t, 0.0))
    if not np.any(t != 0.0):
        alpha = sigma2 / v ** 2
        return MimcNode(lam, nbrs, tuple(t.tolist()), {lam: 1.0}, delta, 0.0, delta * eta / v,
                        alpha, alpha, eta, 0.0, frozenset([lam]), reset=True)
    support = below(t)
    eta_hat = math.sqrt(_eta_hat2(support, nodes))
    delta_hat = math.sqrt(max(t @ R @ t, 0.0))
    w = (eta * delta + eta_hat * delta_hat) / v
    alpha = delta * w / (v * eta)
    beta = delta_hat * w / (v * eta_hat)
    table = {lam: 1.0}
    for k, tk in zip(nbrs, t.tolist()):
        if tk == 0.0:
            continue
        for nu, th in nodes[k].theta_table.items():
            table[nu] = table.get(nu, 0.0) + tk * th
    return MimcNode(lam, nbrs, tuple(t.tolist()), dict(sorted(table.items())), delta, delta_hat,
                    w, alpha, beta, eta, eta_hat, frozenset(support | {lam}))


# -- lattice plan -------------------------------------------------------------

@dataclass(frozen=True)
class MimcPlan:
    upper: Index
    v: float
    nodes: dict
    big_theta: dict
    n_samples: dict
    weights: str = "optimal"

    @property
    def top(self) -> MimcNode:
        return self.nodes[self.upper]

    @property
    def planned_cost(self) -> float:
        return self.top.w ** 2

    def realized_cost(self) -> float:
        return float(sum(n * self.nodes[nu].eta ** 2 for nu, n in sorted(self.n_samples.items())))

    def predicted_variance(self) -> float:
        var = 0.0
        for nu, n in sorted(self.n_samples.items()):
            if n > 0:
                var += (self.big_theta.get(nu, 0.0) * self.nodes[nu].delta) ** 2 / n
        return var

    def to_dict(self) -> dict:
        key = lambda nu: ",".join(str(x) for x in nu)
        return {
            "upper": list(self.upper),
            "v": self.v,
            "weights": self.weights,
            "planned_cost": self.planned_cost,
            "realized_cost": self.realized_cost(),
            "predicted_variance": self.predicted_variance(),
            "nodes": {
                key(nu): {
                    "t": dict(zip((key(k) for k in node.neighbours), node.t)),
                    "Theta": self.big_theta.get(nu, 0.0),
                    "n_samples": self.n_samples[nu],
                    "delta": node.delta, "w": node.w, "alpha": node.alpha, "beta": node.beta,
                    "eta": node.eta, "eta_hat": node.eta_hat, "reset": node.reset,
                }
                for nu, node in sorted(self.nodes.items())
            },
        }


def mimc_plan(upper, oracle: CovarianceOracle, v: float, *, weights: str = "optimal",
              order: Sequence | None = None) -> MimcPlan:
    """Optimise every node of ``0 <= lam <= upper`` and size the samples.

    ``order`` may give any linear extension of the partial order; the
    result does not depend on it.
    """
    upper = as_index(upper)
    if not (v > 0 and math.isfinite(v)):
        raise PlanningError("v must be positive and finite")
    if len(upper) > 3:
        raise PlanningError("at most 3 index dimensions are supported")
    lattice = box(upper)
    if order is None:
        order = lattice
    else:
        order = [as_index(x) for x in order]
        if sorted(order) != sorted(lattice):
            raise PlanningError("order must list every index of the box exactly once")
        seen = set()
        for lam in order:
            if any(nu not in seen for nu in backward_box(lam)):
                raise PlanningError(f"order visits {lam} before one of its neighbours")
            seen.add(lam)
    nodes = {}
    for lam in order:
        nodes[lam] = optimize_node(lam, oracle, nodes, v, weights=weights)
    top = nodes[upper]
    n_samples = {}
    for nu in lattice:
        if nu in top.support:
            node = nodes[nu]
            x = node.alpha * top.beta / node.beta
            n_samples[nu] = max(1, int(math.floor(x + 0.5)))
        else:
            n_samples[nu] = 0
    big_theta = {nu: top.theta_table.get(nu, 0.0) for nu in lattice}
    return MimcPlan(upper, v, dict(sorted(nodes.items())), big_theta, n_samples, weights)


def mimc_estimate(plan: MimcPlan, sampler: Callable, rng) -> float:
    """One realisation of ``sum_nu Theta_nu * mean(Y_nu)`` with planned sample counts."""
    total = 0.0
    for nu, n in sorted(plan.n_samples.items()):
        if n == 0:
            continue
        node = plan.nodes[nu]
        x = np.asarray(sampler(nu, n, rng), dtype=float)
        y = x[:, 0] - (x[:, 1:] @ np.asarray(node.t) if node.t else 0.0)
        total += plan.big_theta[nu] * float(np.mean(y))
    return total
