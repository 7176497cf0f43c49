"""Bounded population-based optimizers: PSO, ABC, GWO and I-GWO.

All four share one calling convention::

    result = pso(f, space, config, init=positions, map_fn=pool.map)

``f`` maps a position vector to a scalar cost. Each generation draws all of
its random numbers from the seeded generator first and only then evaluates
the whole batch through ``map_fn``, so results do not depend on how the
evaluations are scheduled. Non-finite costs are replaced by ``+inf``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional

import numpy as np

__all__ = [
    "SearchSpace", "SwarmConfig", "OptResult", "center_spawn", "uniform_spawn",
    "pso", "abc", "gwo", "igwo", "convergence_iteration", "ALGORITHMS", "DEFAULT_PARAMS",
]

DEFAULT_PARAMS: Dict[str, Dict[str, float]] = {
    "pso": {"c1": 1.49, "c2": 1.49, "inertia_min": 0.1, "inertia_max": 1.1, "vmax_fraction": 0.2},
    "abc": {"abandonment_limit": 90, "acceleration": 1.0},
    "gwo": {},
    "igwo": {},
}


@dataclass(frozen=True)
class SearchSpace:
    """Box ``[lower, upper]^dim``."""

    lower: float
    upper: float
    dim: int

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError("lower must be < upper")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def spawn_radius(self) -> float:
        return abs(max(self.lower, self.upper)) / 2.0

    def clip(self, X):
        return np.clip(X, self.lower, self.upper)


@dataclass(frozen=True)
class SwarmConfig:
    agents: int = 50
    max_iterations: int = 100
    seed: int = 0
    algorithm_params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.agents < 4:
            raise ValueError("agents must be >= 4")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def params(self, algorithm: str) -> Dict[str, float]:
        """Defaults for ``algorithm`` updated by overrides.

        Overrides are either nested per algorithm (``{"pso": {"c1": 2}}``) or
        flat, in which case only keys the algorithm knows are applied.
        """
        p = dict(DEFAULT_PARAMS[algorithm])
        for k, v in self.algorithm_params.items():
            if k in DEFAULT_PARAMS:
                if k == algorithm:
                    p.update(v)
            elif k in p:
                p[k] = v
            elif not any(k in d for d in DEFAULT_PARAMS.values()):
                raise ValueError(f"unknown algorithm parameter {k!r}")
        return p


@dataclass
class OptResult:
    best_position: np.ndarray
    best_cost: float
    history: np.ndarray
    evaluations: int
    algorithm: str = ""
    archive_positions: Optional[np.ndarray] = None
    archive_costs: Optional[np.ndarray] = None


def center_spawn(center, space: SearchSpace, agents: int, seed) -> np.ndarray:
    """Agents at ``center + R * U(0, 1)^dim`` with ``R`` the space's spawn radius, clipped to the box."""
    center = np.asarray(center, dtype=float).ravel()
    if center.size != space.dim:
        raise ValueError("center dimension does not match the search space")
    rng = np.random.default_rng(seed)
    X = space.spawn_radius * rng.random((agents, space.dim)) + center
    return space.clip(X)


def uniform_spawn(space: SearchSpace, agents: int, rng) -> np.ndarray:
    return space.lower + (space.upper - space.lower) * rng.random((agents, space.dim))


class _Evaluator:
    def __init__(self, f, map_fn):
        self.f = f
        self.map_fn = map if map_fn is None else map_fn
        self.count = 0
        self.X = []
        self.c = []

    def __call__(self, X):
        c = np.array(list(self.map_fn(self.f, list(X))), dtype=float)
        c[~np.isfinite(c)] = np.inf
        self.count += len(X)
        self.X.append(np.array(X, dtype=float))
        self.c.append(c.copy())
        return c


def _setup(space, config, init, rng):
    if init is None:
        X = uniform_spawn(space, config.agents, rng)
    else:
        X = space.clip(np.array(init, dtype=float))
        if X.shape != (config.agents, space.dim):
            raise ValueError(f"init must have shape {(config.agents, space.dim)}")
    return X


class _Best:
    """Running global best."""

    def __init__(self, dim):
        self.x = np.full(dim, np.nan)
        self.c = np.inf

    def update(self, X, c):
        i = int(np.argmin(c))
        if c[i] < self.c or np.isnan(self.x[0]):
            self.c = float(c[i])
            self.x = X[i].copy()


def _result(best, history, ev, name):
    return OptResult(best.x, best.c, np.asarray(history, dtype=float), ev.count, name,
                     np.vstack(ev.X), np.concatenate(ev.c))


# --------------------------------------------------------------------------


def pso(f: Callable, space: SearchSpace, config: SwarmConfig, init=None, map_fn=None) -> OptResult:
    """Particle swarm with linearly decreasing inertia and velocity clamping.

    ``v <- w v + c1 r1 (p - x) + c2 r2 (g - x)``, ``|v| <= vmax_fraction * (upper - lower)``,
    with ``w`` going from ``inertia_max`` to ``inertia_min`` over the run.
    """
    prm = config.params("pso")
    rng = np.random.default_rng(config.seed)
    ev = _Evaluator(f, map_fn)
    X = _setup(space, config, init, rng)
    n, d = X.shape
    vmax = prm["vmax_fraction"] * (space.upper - space.lower)
    V = rng.uniform(-vmax, vmax, (n, d))
    cost = ev(X)
    P, Pc = X.copy(), cost.copy()
    best = _Best(d)
    best.update(X, cost)
    T = config.max_iterations
    history = []
    for t in range(T):
        w = prm["inertia_max"] - (prm["inertia_max"] - prm["inertia_min"]) * (t / max(T - 1, 1))
        r1 = rng.random((n, d))
        r2 = rng.random((n, d))
        V = w * V + prm["c1"] * r1 * (P - X) + prm["c2"] * r2 * (best.x - X)
        V = np.clip(V, -vmax, vmax)
        X = space.clip(X + V)
        cost = ev(X)
        better = cost < Pc
        P[better], Pc[better] = X[better], cost[better]
        best.update(P, Pc)
        history.append(best.c)
    return _result(best, history, ev, "pso")


def _abc_fitness(c):
    c = np.asarray(c, dtype=float)
    fit = np.where(c >= 0, 1.0 / (1.0 + np.where(c >= 0, c, 0.0)), 1.0 + np.abs(c))
    return np.where(np.isinf(c), 0.0, fit)


def _partner(rng, n, size):
    """Random index ``k != i`` for each ``i`` in ``size``."""
    k = rng.integers(0, n - 1, size=len(size))
    return k + (k >= size)


def abc(f: Callable, space: SearchSpace, config: SwarmConfig, init=None, map_fn=None) -> OptResult:
    """Artificial bee colony with roulette-wheel onlookers and scout restarts.

    Candidates are ``x_i + phi (x_i - x_k)`` with ``phi ~ U(-a, a)`` per
    dimension and ``k != i`` random. A source is abandoned (replaced by a
    uniform draw in the box) once its failure counter exceeds ``L``.
    """
    prm = config.params("abc")
    a, L = prm["acceleration"], prm["abandonment_limit"]
    rng = np.random.default_rng(config.seed)
    ev = _Evaluator(f, map_fn)
    X = _setup(space, config, init, rng)
    n, d = X.shape
    cost = ev(X)
    trials = np.zeros(n, dtype=int)
    best = _Best(d)
    best.update(X, cost)
    history = []

    def forage(idx):
        k = _partner(rng, n, idx)
        phi = rng.uniform(-a, a, (len(idx), d))
        cand = space.clip(X[idx] + phi * (X[idx] - X[k]))
        cc = ev(cand)
        for j, i in enumerate(idx):
            if cc[j] < cost[i]:
                X[i], cost[i], trials[i] = cand[j], cc[j], 0
            else:
                trials[i] += 1
        best.update(cand, cc)

    for _ in range(config.max_iterations):
        forage(np.arange(n))
        fit = _abc_fitness(cost)
        prob = fit / fit.sum() if fit.sum() > 0 else np.full(n, 1.0 / n)
        forage(rng.choice(n, size=n, p=prob))
        scouts = np.flatnonzero(trials > L)
        if scouts.size:
            X[scouts] = uniform_spawn(space, scouts.size, rng)
            cost[scouts] = ev(X[scouts])
            trials[scouts] = 0
            best.update(X[scouts], cost[scouts])
        history.append(best.c)
    return _result(best, history, ev, "abc")


class _Leaders:
    """The three best positions seen so far (alpha, beta, delta)."""

    def __init__(self, d):
        self.X = np.zeros((0, d))
        self.c = np.zeros(0)

    def update(self, X, c):
        allX = np.vstack([self.X, X])
        allc = np.concatenate([self.c, c])
        order = np.argsort(allc, kind="stable")[:3]
        self.X, self.c = allX[order].copy(), allc[order].copy()


def _gwo_move(X, leaders, a, rng):
    n, d = X.shape
    cand = np.zeros_like(X)
    for lead in leaders:
        A = 2.0 * a * rng.random((n, d)) - a
        C = 2.0 * rng.random((n, d))
        cand += lead - A * np.abs(C * lead - X)
    return cand / len(leaders)


def gwo(f: Callable, space: SearchSpace, config: SwarmConfig, init=None, map_fn=None) -> OptResult:
    """Grey wolf optimizer: each wolf moves to the mean of three leader-guided points.

    The control scalar ``a`` decreases linearly from 2 to 0.
    """
    rng = np.random.default_rng(config.seed)
    ev = _Evaluator(f, map_fn)
    X = _setup(space, config, init, rng)
    n, d = X.shape
    cost = ev(X)
    lead = _Leaders(d)
    lead.update(X, cost)
    T = config.max_iterations
    history = []
    for t in range(T):
        a = 2.0 - 2.0 * t / T
        X = space.clip(_gwo_move(X, lead.X, a, rng))
        cost = ev(X)
        lead.update(X, cost)
        history.append(float(lead.c[0]))
    best = _Best(d)
    best.x, best.c = lead.X[0].copy(), float(lead.c[0])
    return _result(best, history, ev, "gwo")


def igwo(f: Callable, space: SearchSpace, config: SwarmConfig, init=None, map_fn=None) -> OptResult:
    """Improved grey wolf optimizer with dimension learning-based hunting (DLH).

    For wolf ``i`` the GWO candidate ``g_i`` sets the radius
    ``R_i = ||x_i - g_i||``; the neighbourhood is every other wolf within
    ``R_i`` (the nearest wolf if none). The DLH candidate takes, per
    dimension, ``x_i + r (x_n - x_r)`` with ``x_n`` a random neighbour and
    ``x_r`` a random wolf. The better candidate replaces ``x_i`` only if it
    improves on it.
    """
    rng = np.random.default_rng(config.seed)
    ev = _Evaluator(f, map_fn)
    X = _setup(space, config, init, rng)
    n, d = X.shape
    cost = ev(X)
    T = config.max_iterations
    history = []
    rows = np.arange(n)
    for t in range(T):
        a = 2.0 - 2.0 * t / T
        order = np.argsort(cost, kind="stable")[:3]
        G = space.clip(_gwo_move(X, X[order], a, rng))
        radius = np.linalg.norm(X - G, axis=1)
        dist = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=2)
        np.fill_diagonal(dist, np.inf)
        H = np.empty_like(X)
        for i in rows:
            nb = np.flatnonzero(dist[i] <= radius[i])
            if nb.size == 0:
                nb = np.array([int(np.argmin(dist[i]))])
            pick_n = nb[rng.integers(0, nb.size, d)]
            pick_r = rng.integers(0, n, d)
            H[i] = X[i] + rng.random(d) * (X[pick_n, np.arange(d)] - X[pick_r, np.arange(d)])
        H = space.clip(H)
        both = ev(np.vstack([G, H]))
        cg, ch = both[:n], both[n:]
        use_g = cg <= ch
        cand = np.where(use_g[:, None], G, H)
        cc = np.where(use_g, cg, ch)
        improve = cc < cost
        X[improve], cost[improve] = cand[improve], cc[improve]
        history.append(float(cost.min()))
    i = int(np.argmin(cost))
    best = _Best(d)
    best.x, best.c = X[i].copy(), float(cost[i])
    return _result(best, history, ev, "igwo")


ALGORITHMS = {"pso": pso, "abc": abc, "gwo": gwo, "igwo": igwo}


def convergence_iteration(history, delta: float = 1e-3) -> int:
    """First iteration after which every step decreases the cost by less than ``delta``.

    Returns ``len(history) - 1`` if the last step is still at least ``delta``
    and 0 for a single-entry history.
    """
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        raise ValueError("history must be nonempty")
    if h.size == 1:
        return 0
    big = np.flatnonzero((h[:-1] - h[1:]) >= delta)
    if big.size == 0:
        return 1
    i = int(big[-1]) + 2
    return min(i, h.size - 1)
