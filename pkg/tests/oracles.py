"""Independent reference computations used by the test-suite.

Nothing here imports the code paths it is used to check: steering vectors are
rebuilt from the plane-wave formula, derivatives come from finite differences
and the Fisher information from the general Gaussian (Slepian-Bangs) formula.
"""

import itertools
import math

import numpy as np


def plane_wave(positions, theta, phi, wavelength=1.0):
    out = []
    for x, y, z in positions:
        phase = (2 * math.pi / wavelength) * (
            x * math.cos(phi) * math.sin(theta) + y * math.sin(phi) * math.sin(theta) + z * math.cos(theta)
        )
        out.append(complex(math.cos(phase), -math.sin(phase)))
    return np.array(out)


def model_covariance(positions, theta, phi, sig_pow, noise_pow, wavelength=1.0):
    a = plane_wave(positions, theta, phi, wavelength)
    return sig_pow * np.outer(a, a.conj()) + noise_pow * np.eye(len(a))


def fisher_crb(positions, theta, phi, snr_db, T, wavelength=1.0, h=1e-5, azimuth_only=False):
    """CRB block for (theta, phi) from the numerical Gaussian FIM.

    Unknowns are (theta, phi, signal power, noise power); derivatives of the
    model covariance with respect to the angles use central differences.
    Returns (var_theta, var_phi).
    """
    sn2 = 10 ** (-snr_db / 10)
    params = np.array([theta, phi, 1.0, sn2])

    def cov(p):
        return model_covariance(positions, p[0], p[1], p[2], p[3], wavelength)

    R = cov(params)
    Ri = np.linalg.inv(R)
    names = [0, 1, 2, 3] if not azimuth_only else [1, 2, 3]
    derivs = []
    for i in names:
        e = np.zeros(4)
        e[i] = h if i < 2 else 1e-6
        derivs.append((cov(params + e) - cov(params - e)) / (2 * e[i]))
    n = len(names)
    F = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            F[i, j] = T * np.trace(Ri @ derivs[i] @ Ri @ derivs[j]).real
    C = np.linalg.inv(F)
    if azimuth_only:
        return 0.0, C[0, 0]
    return C[0, 0], C[1, 1]


def rms(kt, kp):
    return math.sqrt((kt * kt + kp * kp) / 2)


def brute_force_best(positions, K, theta, phi, snr_db, T, wavelength=1.0, azimuth_only=False, tol=1e-9):
    """Argmin over all K-subsets of the FIM-oracle absolute bound (lexicographic ties)."""
    best_val, best = math.inf, None
    vals = {}
    for combo in itertools.combinations(range(len(positions)), K):
        sub = [positions[i] for i in combo]
        try:
            kt, kp = fisher_crb(sub, theta, phi, snr_db, T, wavelength, azimuth_only=azimuth_only)
            v = rms(kt, kp) if kt >= 0 and kp > 0 else math.inf
        except np.linalg.LinAlgError:
            v = math.inf
        vals[combo] = v
        best_val = min(best_val, v)
    for combo in sorted(vals):
        if vals[combo] <= best_val * (1 + tol):
            return combo, vals[combo], vals
    return best, best_val, vals


def naive_covariance(snapshots):
    M, T = snapshots.shape
    R = np.zeros((M, M), dtype=complex)
    for t in range(T):
        for i in range(M):
            for j in range(M):
                R[i, j] += snapshots[i, t] * snapshots[j, t].conjugate()
    return R / T


def inverse_distance_cost(points):
    total = 0.0
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            total += 1.0 / math.dist(points[i], points[j])
    return total


def finite_difference_layer_errors(loss_fn, params, grads, h=1e-6, max_entries=None, seed=0):
    """Per-tensor relative error ``|g_fd - g| / max(|g_fd|, |g|)`` of central differences.

    ``loss_fn()`` re-evaluates the loss with ``params`` as mutated in place.
    ``max_entries`` probes a random subset of each tensor (the analytic side is
    restricted to the same entries).
    """
    rng = np.random.default_rng(seed)
    errors = {}
    for name, W in params.items():
        flat = W.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, max_entries, replace=False))
        num = np.empty(idx.size)
        for n, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn()
            flat[i] = old - h
            lm = loss_fn()
            flat[i] = old
            num[n] = (lp - lm) / (2 * h)
        ana = np.asarray(grads[name]).reshape(-1)[idx]
        scale = max(np.linalg.norm(num), np.linalg.norm(ana), 1e-12)
        errors[name] = float(np.linalg.norm(num - ana) / scale)
    return errors
