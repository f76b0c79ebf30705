"""Narrowband snapshot simulation, sample covariances and CNN input features."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .geometry import ArrayGeometry, Direction, steering_vector
from .seeding import as_rng

SIGNAL_POWER = 1.0


def noise_power(snr_db):
    """``sigma_n^2`` for unit signal power; ``inf`` dB means noise off."""
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return SIGNAL_POWER * 10.0 ** (-snr_db / 10.0)


def complex_normal(rng, shape, power=1.0):
    """Circular complex Gaussian draws with ``E|x|^2 = power``."""
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return math.sqrt(power / 2.0) * (re + 1j * im)


@dataclass(frozen=True, eq=False)
class SnapshotSet:
    """``samples`` is ``(M, T)``: column ``i`` is the array output at snapshot ``i``."""

    samples: np.ndarray
    truth: Direction | None
    snr_db: float
    seed: object = None

    @property
    def M(self):
        return self.samples.shape[0]

    @property
    def T(self):
        return self.samples.shape[1]


def simulate_snapshots(g, d, snr_db, T, seed):
    """Single-source snapshots ``y_i = a(d) s_i + n_i``.

    The source draws come first from the stream, then the ``(M, T)`` noise
    block, so a given ``seed`` always produces the same bits. ``seed`` may be
    an int or a ``np.random.Generator``.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    rng = as_rng(seed)
    a = steering_vector(g, d)
    s = complex_normal(rng, T, SIGNAL_POWER)
    y = np.outer(a, s)
    sn2 = noise_power(snr_db)
    if sn2 > 0:
        y = y + complex_normal(rng, (a.size, T), sn2)
    return SnapshotSet(y, d, float(snr_db), seed if not isinstance(seed, np.random.Generator) else None)


def simulate_multi(g, directions, snr_db, T, seed):
    """Uncorrelated equal-power sources; used by the estimator tests and sweeps."""
    rng = as_rng(seed)
    A = np.stack([steering_vector(g, d) for d in directions], axis=1)
    S = complex_normal(rng, (len(directions), T), SIGNAL_POWER)
    y = A @ S
    sn2 = noise_power(snr_db)
    if sn2 > 0:
        y = y + complex_normal(rng, (A.shape[0], T), sn2)
    return SnapshotSet(y, None, float(snr_db), None)


def _as_matrix(x):
    if isinstance(x, SnapshotSet):
        return x.samples
    if isinstance(x, np.ndarray) and x.ndim == 2:
        return x
    # a list of M-vectors
    Y = np.stack([np.asarray(v) for v in x], axis=1)
    if Y.shape[1] == 0:
        raise ValueError("no snapshots")
    return Y


def sample_covariance(x):
    """``R = (1/T) sum y y^H``, symmetrised so it is Hermitian to the last bit."""
    Y = _as_matrix(x)
    if Y.shape[1] < 1:
        raise ValueError("no snapshots")
    # einsum reduces each entry over t in a fixed order, so restricting R to a
    # subarray gives the same bits as estimating from restricted snapshots
    R = np.einsum("it,jt->ij", Y, Y.conj(), optimize=False) / Y.shape[1]
    return 0.5 * (R + R.conj().T)


def asymptotic_covariance(a, snr_db):
    """Model covariance ``sigma_s^2 a a^H + sigma_n^2 I``."""
    return SIGNAL_POWER * np.outer(a, a.conj()) + noise_power(snr_db) * np.eye(a.size)


def covariance_features(R):
    """``(M, M, 3)`` real tensor of real part, imaginary part and phase of ``R``.

    Phase follows ``atan2`` with ``angle(0) = 0`` and is mapped into ``(-pi, pi]``.
    """
    R = np.asarray(R)
    if R.ndim != 2 or R.shape[0] != R.shape[1]:
        raise ShapeMismatch(f"covariance must be square, got {R.shape}")
    re, im = R.real, R.imag
    ang = np.arctan2(im, re)
    ang[ang == -math.pi] = math.pi
    return np.stack([re, im, ang], axis=-1)


def subarray_restrict(x, sel):
    """Restrict snapshots, a covariance or a geometry to ``sel`` (order kept)."""
    idx = np.asarray(sel, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("selection must be a non-empty index list")
    if isinstance(x, SnapshotSet):
        M = x.M
    elif isinstance(x, ArrayGeometry):
        M = x.M
    else:
        x = np.asarray(x)
        if x.ndim != 2 or x.shape[0] != x.shape[1]:
            raise ShapeMismatch("expected a square covariance matrix")
        M = x.shape[0]
    if idx.min() < 0 or idx.max() >= M:
        raise IndexError(f"selection {sel} out of range for M={M}")
    if np.unique(idx).size != idx.size:
        raise ValueError("selection has repeated indices")
    if isinstance(x, SnapshotSet):
        return SnapshotSet(x.samples[idx], x.truth, x.snr_db, x.seed)
    if isinstance(x, ArrayGeometry):
        return x.subarray(idx)
    return x[np.ix_(idx, idx)]
