"""K-of-M subarray enumeration, CRB-optimal labels and baseline selectors.

A subarray label is a sorted tuple of sensor indices. Ties between candidates
whose absolute bound agrees to a relative tolerance are broken towards the
lexicographically smallest label, so results never depend on evaluation order.
"""

import csv
import io
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import crb_batch
from .errors import AllDegenerate, BudgetExceeded
from .seeding import as_rng

DEFAULT_BUDGET = 10**6
TIE_TOL = {"asymptotic": 1e-9, "empirical": 1e-3}


def as_label(indices, M=None):
    label = tuple(int(i) for i in indices)
    if list(label) != sorted(set(label)):
        raise ValueError(f"label {indices} must be sorted and distinct")
    if M is not None and label and (label[0] < 0 or label[-1] >= M):
        raise IndexError(f"label {indices} out of range for M={M}")
    return label


def enumerate_subarrays(M, K):
    """All K-subsets of ``range(M)`` in lexicographic order."""
    if not 1 <= K <= M:
        raise ValueError(f"need 1 <= K <= M, got K={K}, M={M}")
    return itertools.combinations(range(M), K)


def combos_array(M, K, budget=DEFAULT_BUDGET):
    n = math.comb(M, K)
    if n > budget:
        raise BudgetExceeded(f"C({M},{K}) = {n} exceeds the enumeration budget {budget}")
    return np.array(list(enumerate_subarrays(M, K)), dtype=np.int64).reshape(n, K)


def argmin_label(values, combos, tol):
    """Index of the canonical minimiser of ``values`` over the rows of ``combos``."""
    values = np.asarray(values)
    finite = np.isfinite(values)
    if not finite.any():
        raise AllDegenerate("every candidate subarray has an unbounded CRB")
    best = values[finite].min()
    tied = np.flatnonzero(finite & (values <= best * (1.0 + tol)))
    if tied.size == 1:
        return int(tied[0])
    rows = combos[tied]
    # lexsort keys are given last-to-first
    order = np.lexsort(rows.T[::-1])
    return int(tied[order[0]])


def best_subarray(g, d, K, snr_db, T, R=None, *, combos=None, tol=None, estimate="joint",
                  form="fim", budget=DEFAULT_BUDGET, numba=None):
    """CRB-optimal K-subarray for direction ``d``.

    ``R`` is the full-array covariance for empirical mode, None for asymptotic.
    ``combos`` restricts the search to a candidate set (defaults to all
    C(M, K) subsets). Returns ``(label, CrbResult)``.
    """
    from .bounds import CrbResult

    if combos is None:
        combos = combos_array(g.M, K, budget)
    if tol is None:
        tol = TIE_TOL["asymptotic" if R is None else "empirical"]
    kt, kp, ka = crb_batch(g, d, combos, snr_db, T, R, form=form, estimate=estimate, numba=numba)
    i = argmin_label(ka, combos, tol)
    return tuple(int(x) for x in combos[i]), CrbResult(float(kt[i]), float(kp[i]), float(ka[i]))


@dataclass
class ClassCatalog:
    """The C(M, K) candidates and the distinct best labels over a direction set.

    ``best`` is sorted lexicographically; a class id is a position in ``best``.
    ``assignments`` maps each grid direction to its class id and ``crb`` holds
    the representative (first-seen) absolute bound of each class.
    """

    M: int
    K: int
    best: list
    crb_tolerance: float
    crb: list = field(default_factory=list)
    assignments: list = field(default_factory=list)

    @property
    def n_all(self):
        return math.comb(self.M, self.K)

    @property
    def all(self):
        return enumerate_subarrays(self.M, self.K)

    def __len__(self):
        return len(self.best)

    def index(self, label):
        return self.best.index(tuple(label))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class_id", "indices", "representative_crb"])
        for cid, label in enumerate(self.best):
            rep = self.crb[cid] if cid < len(self.crb) else float("nan")
            w.writerow([cid, " ".join(str(i) for i in label), repr(float(rep))])
        return buf.getvalue()


def reduce_classes(g, K, directions, snr_db, T, tol=None, *, mode="asymptotic", estimate="joint",
                   budget=DEFAULT_BUDGET, seed=None, numba=None):
    """Collapse the C(M, K) classes to the distinct CRB-optimal labels on a direction grid.

    In empirical mode one realisation of ``T`` snapshots per direction is drawn
    from ``seed`` (derivation label ``"reduce", i``).
    """
    from .seeding import derive_rng
    from .simulation import sample_covariance, simulate_snapshots

    directions = list(directions)
    if not directions:
        raise ValueError("empty direction grid")
    if tol is None:
        tol = TIE_TOL[mode]
    combos = combos_array(g.M, K, budget)
    winners, values = [], []
    for i, d in enumerate(directions):
        R = None
        if mode == "empirical":
            snaps = simulate_snapshots(g, d, snr_db, T, derive_rng(0 if seed is None else seed, "reduce", i))
            R = sample_covariance(snaps)
        label, res = best_subarray(g, d, K, snr_db, T, R, combos=combos, tol=tol, estimate=estimate, numba=numba)
        winners.append(label)
        values.append(res.kappa_abs)
    best = sorted(set(winners))
    crb = [values[winners.index(lab)] for lab in best]
    assignments = [best.index(lab) for lab in winners]
    return ClassCatalog(g.M, K, best, tol, crb, assignments)


def greedy_select(g, d, K, snr_db, T, R=None, *, estimate="joint", form="fim", tol=None, numba=None):
    """Greedy CRB-driven selection.

    Starts from the best pair (or the best triple when no pair is
    identifiable, as happens for joint estimation, since two sensors form a
    line) and repeatedly adds the sensor that minimises the absolute bound.
    """
    M = g.M
    if K < 2:
        raise ValueError("greedy selection needs K >= 2")
    if tol is None:
        tol = TIE_TOL["asymptotic" if R is None else "empirical"]
    if K == M:
        return tuple(range(M))
    start = 2
    while True:
        combos = combos_array(M, start)
        _, _, ka = crb_batch(g, d, combos, snr_db, T, R, form=form, estimate=estimate, numba=numba)
        if np.isfinite(ka).any() or start >= K:
            break
        start += 1
    label = tuple(int(x) for x in combos[argmin_label(ka, combos, tol)])
    while len(label) < K:
        rest = [m for m in range(M) if m not in label]
        cands = np.array([sorted(label + (m,)) for m in rest], dtype=np.int64)
        _, _, ka = crb_batch(g, d, cands, snr_db, T, R, form=form, estimate=estimate, numba=numba)
        label = tuple(int(x) for x in cands[argmin_label(ka, cands, tol)])
    return label


def random_select(M, K, seed):
    """Uniformly random K-subset (sorted)."""
    rng = as_rng(seed)
    return tuple(int(i) for i in np.sort(rng.choice(M, size=K, replace=False)))


def selection_histogram(labels, M):
    """Percentage of labels in which each sensor index appears.

    Percentages are per element, so they sum to ``100 K`` for K-sensor labels;
    uniform random selection gives ``100 K / M`` for every index.
    """
    labels = list(labels)
    if not labels:
        raise ValueError("no labels")
    counts = np.zeros(M)
    for lab in labels:
        counts[list(lab)] += 1
    return 100.0 * counts / len(labels)
