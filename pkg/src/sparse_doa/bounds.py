"""Single-source Cramer-Rao bounds on (theta, phi) for subarrays.

Two evaluators share the same ingredients:

* ``form="fim"`` (default, used for labels): the stochastic single-source
  bound obtained by inverting the 2x2 Fisher matrix

      FIM = (2T / sigma_n^2) * sigma_s^4 * (a^H R^-1 a) * Re{D^H P_perp D},

  with ``D = [da/dtheta, da/dphi]`` and ``P_perp = I - a a^H / (a^H a)``.
* ``form="cross"``: a closed form whose projection terms pair
  ``da/dtheta`` with ``da/dphi``. It is kept for comparison only
  (see the ``crb-diff`` CLI command).

``R`` is either the empirical subarray covariance ("empirical" mode) or the
model covariance ``a a^H + sigma_n^2 I`` ("asymptotic" mode, ``R=None``).
Unidentifiable directions get ``+inf`` instead of raising, so argmin logic
stays total.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DegenerateDirection, SingularCovariance
from .geometry import steering_derivatives, steering_vector
from .simulation import SIGNAL_POWER, noise_power

DEGENERATE_TOL = 1e-10

MODES = ("empirical", "asymptotic")
FORMS = ("fim", "cross")
ESTIMATES = ("joint", "azimuth")


@dataclass(frozen=True)
class CrbResult:
    kappa_theta: float
    kappa_phi: float
    kappa_abs: float

    @property
    def degenerate(self):
        return not math.isfinite(self.kappa_abs)


def absolute_crb(kappa_theta, kappa_phi=None):
    """RMS combination ``sqrt((k_theta^2 + k_phi^2) / 2)``.

    Accepts a :class:`CrbResult` or the two components (scalars or arrays).
    """
    if isinstance(kappa_theta, CrbResult):
        kappa_theta, kappa_phi = kappa_theta.kappa_theta, kappa_theta.kappa_phi
    kt = np.asarray(kappa_theta, dtype=np.float64)
    kp = np.asarray(kappa_phi, dtype=np.float64)
    out = np.sqrt(0.5 * (kt * kt + kp * kp))
    return float(out) if out.ndim == 0 else out


def _bounds_from_terms(q, gtt, gtp, gpp, sn2, T, form, estimate, dt_norm, dp_norm):
    """Vectorised bound evaluation from the kernel outputs."""
    scale = sn2 / (2.0 * T * SIGNAL_POWER**2 * q)
    inf = np.inf
    if form == "cross":
        # Pi_theta = dtheta^H P dphi, Pi_phi its conjugate: both have the same real part
        den = gtp
        ok = den > DEGENERATE_TOL * np.sqrt(np.maximum(dt_norm * dp_norm, 1e-300))
        kt = np.where(ok, scale / np.where(ok, den, 1.0), inf)
        if estimate == "azimuth":
            return np.zeros_like(kt), kt
        return kt, kt.copy()
    if estimate == "azimuth":
        ok = gpp > DEGENERATE_TOL * np.maximum(dp_norm, 1e-300)
        kp = np.where(ok, scale / np.where(ok, gpp, 1.0), inf)
        return np.zeros_like(kp), kp
    det = gtt * gpp - gtp * gtp
    ok = (det > DEGENERATE_TOL * np.maximum(dt_norm, 1e-300) * np.maximum(dp_norm, 1e-300)) & (gtt > 0) & (gpp > 0)
    safe = np.where(ok, det, 1.0)
    kt = np.where(ok, scale * gpp / safe, inf)
    kp = np.where(ok, scale * gtt / safe, inf)
    return kt, kp


def crb_batch(g, d, combos, snr_db, T, R=None, *, form="fim", estimate="joint", numba=None):
    """Bounds for every subarray in ``combos`` (``(C, K)`` indices into ``g``).

    ``R`` is the full-array covariance; each subarray uses its principal
    submatrix. ``R=None`` selects asymptotic mode. Returns ``(kappa_theta,
    kappa_phi, kappa_abs)`` arrays of length ``C``.
    """
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    if estimate not in ESTIMATES:
        raise ValueError(f"estimate must be one of {ESTIMATES}")
    combos = np.atleast_2d(np.asarray(combos, dtype=np.int64))
    K = combos.shape[1]
    a = steering_vector(g, d)
    dt, dp = steering_derivatives(g, d)
    sn2 = noise_power(snr_db)
    q, gtt, gtp, gpp, bad = _kernels.crb_terms(a, dt, dp, combos, R, numba=numba)
    if R is None:
        # a^H (a a^H + s I)^-1 a for unit-modulus a, by Sherman-Morrison
        n = (np.abs(a[combos]) ** 2).sum(1)
        q = n / (sn2 + SIGNAL_POWER * n) if sn2 > 0 else n / (SIGNAL_POWER * n)
    elif np.any(bad):
        raise SingularCovariance(f"{int(bad.sum())} subarray covariance(s) are not invertible")
    dt_norm = (np.abs(dt[combos]) ** 2).sum(1)
    dp_norm = (np.abs(dp[combos]) ** 2).sum(1)
    kt, kp = _bounds_from_terms(q, gtt, gtp, gpp, sn2, T, form, estimate, dt_norm, dp_norm)
    return kt, kp, absolute_crb(kt, kp)


def crb_pair(g_sub, d, snr_db, T, R_sub=None, *, form="fim", estimate="joint", strict=False):
    """Bounds for one subarray given as its own geometry.

    Args:
        g_sub: Subarray geometry (K >= 2 sensors).
        d: Source :class:`~sparse_doa.geometry.Direction`.
        snr_db: ``10 log10(sigma_s^2 / sigma_n^2)`` with ``sigma_s^2 = 1``.
        T: Number of snapshots.
        R_sub: ``K x K`` covariance (empirical mode) or None (asymptotic).
        form: ``"fim"`` or ``"cross"``.
        estimate: ``"joint"`` for (theta, phi); ``"azimuth"`` when theta is
            known, in which case ``kappa_theta`` is reported as 0.
        strict: Raise :class:`DegenerateDirection` instead of returning inf.
    """
    K = g_sub.M if hasattr(g_sub, "M") else np.atleast_2d(g_sub).shape[0]
    if K < 2:
        raise ValueError("a subarray needs K >= 2 sensors")
    combos = np.arange(K)[None, :]
    kt, kp, _ = crb_batch(g_sub, d, combos, snr_db, T, R_sub, form=form, estimate=estimate, numba=False)
    res = CrbResult(float(kt[0]), float(kp[0]), float(absolute_crb(kt[0], kp[0])))
    if strict and res.degenerate:
        raise DegenerateDirection(f"no {estimate} information at {d}")
    return res
