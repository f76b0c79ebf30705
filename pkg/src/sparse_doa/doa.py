"""MUSIC estimation on selected subarrays, Monte-Carlo RMSE and the scan loop.

Estimates are grid searches over a :class:`SearchGrid` (1 degree by default)
refined by a parabola through the log-spectrum at each peak and its two
neighbours along every angular axis. Angular errors are wrapped into
``(-180, 180]`` degrees before squaring.
"""

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationFailure
from .geometry import TWO_PI, Direction, steering_matrix
from .seeding import derive_rng
from .selection import best_subarray, greedy_select, random_select
from .simulation import covariance_features, sample_covariance, simulate_multi, simulate_snapshots

POLICIES = ("cnn", "best_crb", "greedy", "random", "full_array", "fixed")
EIG_TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SearchGrid:
    """Product grid of elevations and azimuths, radians."""

    thetas: np.ndarray
    phis: np.ndarray

    def __post_init__(self):
        th = np.atleast_1d(np.asarray(self.thetas, dtype=np.float64))
        ph = np.atleast_1d(np.asarray(self.phis, dtype=np.float64))
        if th.size == 0 or ph.size == 0:
            raise ValueError("empty search grid")
        object.__setattr__(self, "thetas", th)
        object.__setattr__(self, "phis", ph)

    @classmethod
    def azimuth(cls, step_deg=1.0, theta_deg=90.0, sector=(0.0, 360.0)):
        n = int(round((sector[1] - sector[0]) / step_deg))
        return cls(np.radians([theta_deg]), np.radians(sector[0] + step_deg * np.arange(n)))

    @classmethod
    def hemisphere(cls, step_deg=1.0, theta_range=(0.0, 90.0), sector=(0.0, 360.0)):
        nt = int(round((theta_range[1] - theta_range[0]) / step_deg)) + 1
        n = int(round((sector[1] - sector[0]) / step_deg))
        return cls(np.radians(theta_range[0] + step_deg * np.arange(nt)),
                   np.radians(sector[0] + step_deg * np.arange(n)))

    @property
    def shape(self):
        return self.thetas.size, self.phis.size

    @property
    def phi_wraps(self):
        """True when the azimuth axis closes the circle at the grid spacing."""
        if self.phis.size < 3:
            return False
        step = self.phis[1] - self.phis[0]
        return abs(step * self.phis.size - TWO_PI) < 1e-9

    def directions(self):
        return [Direction.wrap(t, p) for t in self.thetas for p in self.phis]


@dataclass(eq=False)
class Spectrum:
    grid: SearchGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(self.grid.shape)
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("spectrum values must be finite and non-negative")

    def normalized(self):
        return self.values / self.values.max()


def _noise_weights(w, n_noise):
    """Projector weights per eigenvector (ascending eigenvalues).

    When the eigenvalues at the signal/noise boundary are tied the split is
    not defined; the tied eigenspace then enters with the fraction of it that
    belongs to the noise subspace, which keeps the spectrum rotation invariant
    (``R = sigma^2 I`` gives a flat spectrum).
    """
    K = w.size
    weights = np.zeros(K)
    weights[:n_noise] = 1.0
    scale = max(abs(w[-1]), abs(w[0]), np.finfo(float).tiny)
    if n_noise < K and w[n_noise] - w[n_noise - 1] <= EIG_TIE_TOL * scale:
        tied = np.flatnonzero(np.abs(w - w[n_noise - 1]) <= EIG_TIE_TOL * scale)
        weights[tied] = np.count_nonzero(tied < n_noise) / tied.size
    return weights


def _noise_basis(R_sub, n_sources):
    R_sub = 0.5 * (R_sub + R_sub.conj().T)
    w, U = np.linalg.eigh(R_sub)
    weights = _noise_weights(w, R_sub.shape[0] - n_sources)
    return U * np.sqrt(weights)


def _pseudo(E, g_sub, thetas, phis):
    A = steering_matrix(g_sub, thetas, phis)
    den = (np.abs(A @ E.conj()) ** 2).sum(-1)
    return 1.0 / np.maximum(den, np.finfo(float).tiny)


def _check_music(R_sub, g_sub, n_sources):
    R_sub = np.asarray(R_sub)
    K = R_sub.shape[0]
    if R_sub.shape != (K, K) or g_sub.M != K:
        raise ValueError(f"covariance {R_sub.shape} does not match a {g_sub.M}-sensor subarray")
    if not 1 <= n_sources < K:
        raise ValueError(f"need 1 <= n_sources < K, got n_sources={n_sources}, K={K}")
    return R_sub


def music_spectrum(R_sub, g_sub, n_sources, grid):
    """Pseudo-spectrum ``1 / ||E_n^H a(d)||^2`` over ``grid``."""
    R_sub = _check_music(R_sub, g_sub, n_sources)
    E = _noise_basis(R_sub, n_sources)
    return Spectrum(grid, _pseudo(E, g_sub, grid.thetas, grid.phis))


def local_maxima(values, wrap):
    """Flat indices of 8-neighbour local maxima in grid order.

    A point qualifies when it is ``>=`` every neighbour and ``>`` every
    neighbour that precedes it in flat order, so a plateau yields one point.
    """
    nt, nf = values.shape
    flat = np.arange(nt * nf).reshape(nt, nf)
    ok = np.ones((nt, nf), dtype=bool)
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            I = np.arange(nt)[:, None] + di + np.zeros((1, nf), dtype=np.int64)
            J = np.arange(nf)[None, :] + dj + np.zeros((nt, 1), dtype=np.int64)
            valid = (I >= 0) & (I < nt)
            if not wrap:
                valid &= (J >= 0) & (J < nf)
            Ic, Jc = np.clip(I, 0, nt - 1), J % nf
            u = values[Ic, Jc]
            later = Ic * nf + Jc
            bad = valid & ((u > values) | ((u == values) & (later < flat)))
            ok &= ~bad
    return np.flatnonzero(ok).tolist()


def _parabola(lm, c, rp):
    den = lm - 2.0 * c + rp
    if not den < 0:
        return 0.0
    return float(np.clip(0.5 * (lm - rp) / den, -0.5, 0.5))


def find_peaks(s, n):
    """The ``n`` largest local maxima, refined, returned in grid-index order."""
    if n < 1:
        raise ValueError("n must be >= 1")
    v = s.values
    nt, nf = v.shape
    wrap = s.grid.phi_wraps
    cands = local_maxima(v, wrap)
    if len(cands) < n:
        raise EstimationFailure(f"found {len(cands)} local maxima, need {n}")
    chosen = sorted(sorted(cands, key=lambda k: (-v.flat[k], k))[:n])
    logv = np.log(np.maximum(v, np.finfo(float).tiny))
    th, ph = s.grid.thetas, s.grid.phis
    out = []
    for k in chosen:
        i, j = divmod(k, nf)
        theta, phi = th[i], ph[j]
        if 0 < i < nt - 1:
            theta += _parabola(logv[i - 1, j], logv[i, j], logv[i + 1, j]) * (th[i + 1] - th[i - 1]) / 2
        if nf >= 3 and (wrap or 0 < j < nf - 1):
            lo, hi = (j - 1) % nf, (j + 1) % nf
            step = (ph[1] - ph[0])
            phi += _parabola(logv[i, lo], logv[i, j], logv[i, hi]) * step
        out.append(Direction.wrap(theta, phi))
    return out


def wrap_deg(x):
    """Wrap angle differences into ``(-180, 180]`` degrees."""
    return -(np.mod(180.0 - np.asarray(x, dtype=np.float64), 360.0) - 180.0)


def rmse_azimuth(est_deg, true_deg):
    """``sqrt(mean(wrap(phi_hat - phi)^2))``."""
    e = wrap_deg(np.asarray(est_deg) - np.asarray(true_deg))
    return float(np.sqrt(np.mean(e**2)))


def rmse_joint(est_deg, true_deg):
    """Joint form: the azimuth and elevation errors are added before squaring.

    ``est_deg``/``true_deg`` have shape ``(..., 2)`` as ``(theta, phi)``.
    """
    e = np.asarray(est_deg, dtype=np.float64) - np.asarray(true_deg, dtype=np.float64)
    s = wrap_deg(e[..., 1]) + e[..., 0]
    return float(np.sqrt(np.mean(s**2)))


def _match(est, truth):
    """Pair estimates to sources minimising the total absolute error (degrees)."""
    E = np.array([d.degrees for d in est])
    T = np.array([d.degrees for d in truth])
    D = len(truth)
    perms = itertools.permutations(range(D)) if D <= 6 else [tuple(range(D))]
    best, best_cost = None, math.inf
    for p in perms:
        diff = E[list(p)] - T
        cost = np.abs(wrap_deg(diff[:, 1])).sum() + np.abs(diff[:, 0]).sum()
        if cost < best_cost:
            best, best_cost = p, cost
    return E[list(best)]


def estimate_doa(R_sub, g_sub, n_sources, grid, zoom=3):
    """MUSIC estimates: grid search, then ``zoom`` levels of local 10x refinement.

    Every coarse local maximum is refined on successively finer local grids
    before the ``n_sources`` strongest are kept, so a sharp peak that falls
    between grid points is not outranked by a broad sidelobe. ``zoom=0`` is
    the plain :func:`find_peaks` estimate.
    """
    R_sub = _check_music(R_sub, g_sub, n_sources)
    if zoom == 0:
        return find_peaks(music_spectrum(R_sub, g_sub, n_sources, grid), n_sources)
    E = _noise_basis(R_sub, n_sources)
    values = _pseudo(E, g_sub, grid.thetas, grid.phis)
    cands = local_maxima(values, grid.phi_wraps)
    if len(cands) < n_sources:
        raise EstimationFailure(f"found {len(cands)} local maxima, need {n_sources}")
    nf = grid.shape[1]
    dth = grid.thetas[1] - grid.thetas[0] if grid.thetas.size > 1 else 0.0
    dph = grid.phis[1] - grid.phis[0] if grid.phis.size > 1 else 0.0
    refined = []
    for k in cands:
        i, j = divmod(k, nf)
        th, ph, best = grid.thetas[i], grid.phis[j], values.flat[k]
        st, sp = dth, dph
        for _ in range(zoom):
            off = np.linspace(-1.0, 1.0, 21)
            ths = np.clip(th + st * off, 0.0, math.pi) if st else np.array([th])
            phs = ph + sp * off if sp else np.array([ph])
            v = _pseudo(E, g_sub, ths, phs)
            a, b = np.unravel_index(np.argmax(v), v.shape)
            th, ph, best = ths[a], phs[b], v[a, b]
            st, sp = st / 10.0, sp / 10.0
        refined.append((best, k, th, ph))
    keep = sorted(sorted(refined, key=lambda r: (-r[0], r[1]))[:n_sources], key=lambda r: r[1])
    return [Direction.wrap(th, ph) for _, _, th, ph in keep]


@dataclass(eq=False)
class RmseReport:
    """RMSE per sweep value for one selection policy.

    ``errors[i]`` holds the per-trial error terms (degrees) of sweep point
    ``i`` for successful trials, in trial order; failed trials are counted in
    ``failures`` and excluded from the RMSE.
    """

    sweep: str
    values: list
    method: str
    rmse: list
    failures: list
    J_T: int
    errors: list = field(default_factory=list)
    labels: list = field(default_factory=list)

    def rows(self):
        return [[v, self.method, r, f, self.J_T] for v, r, f in zip(self.values, self.rmse, self.failures)]

    @staticmethod
    def header():
        return ["sweep_value", "method", "rmse_deg", "failures", "J_T"]

    def to_csv(self):
        from .io_utils import rows_to_csv

        return rows_to_csv(self.header(), self.rows())


def reports_csv(reports):
    from .io_utils import rows_to_csv

    rows = []
    for r in reports:
        rows.extend(r.rows())
    return rows_to_csv(RmseReport.header(), rows)


def select_label(policy, g, d, K, snr_db, T, R_full, *, model=None, label=None, rng=None,
                 estimate="azimuth", label_snr_db=20.0):
    """Subarray chosen by ``policy`` for one trial."""
    snr_crb = snr_db if math.isfinite(snr_db) else label_snr_db
    if policy == "full_array":
        return tuple(range(g.M))
    if policy == "fixed":
        if label is None:
            raise ValueError("the fixed policy needs a label")
        return tuple(int(i) for i in label)
    if policy == "random":
        return random_select(g.M, K, rng)
    if policy == "best_crb":
        return best_subarray(g, d, K, snr_crb, T, estimate=estimate)[0]
    if policy == "greedy":
        return greedy_select(g, d, K, snr_crb, T, estimate=estimate)
    if policy == "cnn":
        from .learner import predict_subarray

        if model is None:
            raise ValueError("the cnn policy needs a model")
        return tuple(predict_subarray(model, covariance_features(R_full))[1])
    raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def evaluate_rmse(g, policy, d_truth, *, K, snr_list=None, snapshots_list=None, snr_db=20.0, T=100,
                  J_T=100, seed=0, model=None, label=None, grid=None, estimate="azimuth",
                  sector=(0.0, 360.0), theta_deg=90.0, workers=1):
    """Monte-Carlo RMSE of MUSIC on the policy-selected subarray.

    Exactly one of ``snr_list`` / ``snapshots_list`` is swept; the other
    quantity is held at ``snr_db`` / ``T``. ``d_truth`` is a
    :class:`Direction`, a list of them (several uncorrelated sources), or
    ``None`` for one source at a fresh uniform azimuth per trial.

    Trial ``j`` draws its direction from ``seed || "direction" || j``, its
    snapshots from ``seed || "trial" || j`` and its random subarray from
    ``seed || "random" || j``, independently of the policy and sweep point,
    so reports for different policies are paired trial by trial.
    """
    if J_T < 1:
        raise ValueError("J_T must be >= 1")
    if (snr_list is None) == (snapshots_list is None):
        raise ValueError("sweep exactly one of snr_list or snapshots_list")
    if grid is None:
        grid = SearchGrid.azimuth(theta_deg=theta_deg) if estimate == "azimuth" else SearchGrid.hemisphere()
    sweep = "snr_db" if snr_list is not None else "snapshots"
    points = [(float(s), int(T)) for s in snr_list] if snr_list is not None else \
        [(float(snr_db), int(t)) for t in snapshots_list]

    def truth_for(j):
        if d_truth is None:
            phi = derive_rng(seed, "direction", j).uniform(*sector)
            return [Direction.from_degrees(theta_deg, phi)]
        if isinstance(d_truth, Direction):
            return [d_truth]
        return list(d_truth)

    def trial(args):
        snr, TT, j = args
        truth = truth_for(j)
        rng = derive_rng(seed, "trial", j)
        if len(truth) == 1:
            Y = simulate_snapshots(g, truth[0], snr, TT, rng)
        else:
            Y = simulate_multi(g, truth, snr, TT, rng)
        R = sample_covariance(Y)
        sel = select_label(policy, g, truth[0], K, snr, TT, R, model=model, label=label,
                           rng=derive_rng(seed, "random", j), estimate=estimate)
        idx = np.array(sel)
        try:
            est = estimate_doa(R[np.ix_(idx, idx)], g.subarray(idx), len(truth), grid)
        except (EstimationFailure, np.linalg.LinAlgError):
            return sel, None
        E = _match(est, truth)
        Tdeg = np.array([d.degrees for d in truth])
        if estimate == "azimuth":
            err = wrap_deg(E[:, 1] - Tdeg[:, 1])
        else:
            err = wrap_deg(E[:, 1] - Tdeg[:, 1]) + (E[:, 0] - Tdeg[:, 0])
        return sel, err

    tasks = [(snr, TT, j) for snr, TT in points for j in range(J_T)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(trial, tasks))
    else:
        results = [trial(t) for t in tasks]

    rmse, failures, errors, labels = [], [], [], []
    for p in range(len(points)):
        chunk = results[p * J_T:(p + 1) * J_T]
        errs = [e for _, e in chunk if e is not None]
        fails = sum(1 for _, e in chunk if e is None)
        flat = np.concatenate(errs) if errs else np.zeros(0)
        rmse.append(float(np.sqrt(np.mean(flat**2))) if flat.size else math.nan)
        failures.append(fails)
        errors.append([None if e is None else e.copy() for _, e in chunk])
        labels.append([s for s, _ in chunk])
    values = [s for s, _ in points] if sweep == "snr_db" else [t for _, t in points]
    method = policy if policy != "fixed" else "fixed:" + "-".join(str(i) for i in label)
    return RmseReport(sweep, values, method, rmse, failures, J_T, errors, labels)


def paired_bootstrap(err_a, err_b, n_boot=2000, seed=0):
    """Fraction of paired bootstrap resamples with ``RMSE(a) < RMSE(b)``.

    ``err_a``/``err_b`` are per-trial error arrays aligned by trial; trials
    where either side failed are dropped.
    """
    pairs = [(a, b) for a, b in zip(err_a, err_b) if a is not None and b is not None]
    if not pairs:
        raise ValueError("no paired trials")
    sa = np.array([np.sum(np.square(a)) for a, _ in pairs])
    sb = np.array([np.sum(np.square(b)) for _, b in pairs])
    rng = derive_rng(seed, "bootstrap")
    idx = rng.integers(len(pairs), size=(n_boot, len(pairs)))
    return float(np.mean(sa[idx].sum(1) < sb[idx].sum(1)))


@dataclass
class ScanRecord:
    scan: int
    kind: str
    label: tuple
    true_phi_deg: float
    est_phi_deg: float
    error_deg: float


def scan_log_csv(records):
    from .io_utils import rows_to_csv

    return rows_to_csv(["scan", "kind", "label", "true_phi_deg", "est_phi_deg", "error_deg"],
                       [[r.scan, r.kind, r.label, r.true_phi_deg, r.est_phi_deg, r.error_deg] for r in records])


def run_scan_loop(g, model, scans, refresh_period, target_trajectory, snr_db, T, seed, *,
                  fixed_label=None, grid=None, theta_deg=90.0):
    """Cognitive scan loop.

    Every ``refresh_period`` scans the radar listens with the full array,
    estimates the direction, and asks ``model`` for the subarray used by the
    following ``refresh_period - 1`` scans. ``model`` is a trained
    :class:`~sparse_doa.learner.ModelState` or a callable ``R_full -> label``;
    with ``model=None`` every scan uses ``fixed_label`` (the baseline).

    ``target_trajectory`` maps a scan index to a :class:`Direction` (or is a
    sequence of them). Scan ``s`` draws snapshots from ``seed || "scan" || s``.
    """
    if refresh_period < 1:
        raise ValueError("refresh_period must be >= 1")
    if model is None and fixed_label is None:
        raise ValueError("need a model or a fixed label")
    grid = SearchGrid.azimuth(theta_deg=theta_deg) if grid is None else grid
    traj = target_trajectory if callable(target_trajectory) else (lambda s: target_trajectory[s])
    if model is not None and not callable(model):
        from .learner import predict_subarray

        net = model
        model = lambda R: predict_subarray(net, covariance_features(R))[1]  # noqa: E731

    records = []
    current = tuple(fixed_label) if fixed_label is not None else None
    for s in range(scans):
        d = traj(s)
        Y = simulate_snapshots(g, d, snr_db, T, derive_rng(seed, "scan", s))
        R = sample_covariance(Y)
        if model is not None and s % refresh_period == 0:
            kind = "full"
            sel = tuple(range(g.M))
            current = tuple(int(i) for i in model(R))
        else:
            kind = "sub"
            sel = current
        idx = np.array(sel)
        try:
            est = estimate_doa(R[np.ix_(idx, idx)], g.subarray(idx), 1, grid)[0]
            est_phi = est.degrees[1]
            err = float(wrap_deg(est_phi - d.degrees[1]))
        except EstimationFailure:
            est_phi, err = math.nan, math.nan
        records.append(ScanRecord(s, kind, sel, d.degrees[1], est_phi, err))
    return records
