"""Simulated annealing for 2-D sparse subarrays on a parent grid.

The objective is the inverse-distance coupling cost ``sum_{i<j} 1/|m_i - m_j|``
over the selected sensors, optionally under a hard bound ``|m_i - m_j| <= B``
on every selected pair. Moves swap one selected sensor for one unselected
sensor; infeasible moves are rejected outright.
"""

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import InfeasibleConstraint
from .seeding import derive_int, derive_rng


@dataclass(frozen=True)
class SaConfig:
    """Annealing schedule.

    ``iterations`` is the number of temperature levels, each running
    ``moves_per_temperature`` proposals before ``T <- cooling_factor * T``.
    ``initial_temperature=None`` starts at the cost of the initial state.
    """

    iterations: int = 200
    initial_temperature: float | None = None
    cooling_factor: float = 0.95
    moves_per_temperature: int = 50
    distance_bound: float = math.inf
    seed: int = 0
    init_attempts: int = 1000

    def __post_init__(self):
        if not 0.0 < self.cooling_factor < 1.0:
            raise ValueError("cooling_factor must be in (0, 1)")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.moves_per_temperature < 1:
            raise ValueError("moves_per_temperature must be >= 1")
        if not self.distance_bound > 0:
            raise ValueError("distance_bound must be positive")
        if self.initial_temperature is not None and not self.initial_temperature > 0:
            raise ValueError("initial_temperature must be positive")


def _pairwise(positions):
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff**2).sum(-1))


def coupling_cost(g_sub):
    """``sum_{i<j} 1 / |m_i - m_j|`` for a geometry or an ``(K, 3)`` array."""
    pos = g_sub.positions if hasattr(g_sub, "positions") else np.asarray(g_sub, dtype=np.float64)
    d = _pairwise(pos)[np.triu_indices(pos.shape[0], 1)]
    if np.any(d <= 0):
        raise ValueError("coincident sensors")
    return float((1.0 / d).sum())


def temperature_schedule(cfg, initial_cost):
    t0 = cfg.initial_temperature if cfg.initial_temperature is not None else max(initial_cost, 1e-12)
    return t0 * cfg.cooling_factor ** np.arange(cfg.iterations)


def _initial_label(dist, K, bound, rng, attempts):
    M = dist.shape[0]
    if math.isinf(bound):
        return np.sort(rng.choice(M, size=K, replace=False))
    for _ in range(attempts):
        chosen = [int(rng.integers(M))]
        for m in rng.permutation(M):
            if len(chosen) == K:
                break
            if m not in chosen and np.all(dist[m, chosen] <= bound):
                chosen.append(int(m))
        if len(chosen) == K:
            return np.sort(np.array(chosen, dtype=np.int64))
    raise InfeasibleConstraint(f"no feasible {K}-subset found within B={bound} after {attempts} attempts")


def sa_optimize(parent, K, cfg, *, seed=None, numba=None):
    """Anneal one K-subarray of ``parent``. Returns ``(label, cost)``.

    The returned state is the best one visited; with ``iterations=0`` it is the
    feasible random initial state.
    """
    M = parent.M
    if not 1 <= K <= M:
        raise ValueError(f"need 1 <= K <= M, got K={K}, M={M}")
    seed = cfg.seed if seed is None else seed
    pos = parent.positions
    dist = _pairwise(pos)
    if K == M:
        return tuple(range(M)), coupling_cost(pos)
    with np.errstate(divide="ignore"):
        inv = np.where(dist > 0, 1.0 / dist, 0.0)
    rng = derive_rng(seed, "sa")
    sel = _initial_label(dist, K, cfg.distance_bound, rng, cfg.init_attempts)
    unsel = np.setdiff1d(np.arange(M), sel)
    init_cost = coupling_cost(pos[sel])
    temps = temperature_schedule(cfg, init_cost)
    n = temps.size * cfg.moves_per_temperature
    pick_out = rng.integers(K, size=n)
    pick_in = rng.integers(M - K, size=n)
    uniforms = rng.random(n)
    best, _, _ = _kernels.anneal(inv, dist, sel, unsel, pick_out, pick_in, uniforms, temps,
                                 cfg.moves_per_temperature, cfg.distance_bound, numba=numba)
    label = tuple(int(i) for i in np.sort(best))
    cost = coupling_cost(pos[list(label)])
    # the incumbent is tracked with incremental deltas; never report worse than the start
    if cost > init_cost:
        label, cost = tuple(int(i) for i in sel), init_cost
    return label, cost


@dataclass
class CandidateSet:
    labels: list
    parent: object
    costs: list = field(default_factory=list)

    def __len__(self):
        return len(self.labels)

    def combos(self):
        return np.array(self.labels, dtype=np.int64)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["candidate_id", "indices", "k_o"])
        for i, (lab, c) in enumerate(zip(self.labels, self.costs)):
            w.writerow([i, " ".join(str(x) for x in lab), repr(float(c))])
        return buf.getvalue()


def generate_candidates(parent, K, count, cfg, *, max_attempts=None, numba=None):
    """``count`` distinct annealed subarrays from independent restarts.

    Restart ``r`` uses seed ``cfg.seed || "restart" || r``; a duplicate result
    moves on to the next restart index until ``max_attempts`` (default
    ``20 * count``) restarts have been spent.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    max_attempts = 20 * count if max_attempts is None else max_attempts
    labels, costs, seen = [], [], set()
    for r in range(max_attempts):
        label, cost = sa_optimize(parent, K, cfg, seed=derive_int(cfg.seed, "restart", r), numba=numba)
        if label in seen:
            continue
        seen.add(label)
        labels.append(label)
        costs.append(cost)
        if len(labels) == count:
            return CandidateSet(labels, parent, costs)
    raise InfeasibleConstraint(f"only {len(labels)} distinct candidates after {max_attempts} restarts")
