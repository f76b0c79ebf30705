import math

import numpy as np
import pytest

from oracles import plane_wave
from sparse_doa.doa import (
    SearchGrid,
    Spectrum,
    estimate_doa,
    evaluate_rmse,
    find_peaks,
    local_maxima,
    music_spectrum,
    paired_bootstrap,
    reports_csv,
    rmse_azimuth,
    rmse_joint,
    run_scan_loop,
    scan_log_csv,
    select_label,
    wrap_deg,
)
from sparse_doa.errors import EstimationFailure
from sparse_doa.geometry import Direction, make_geometry, steering_vector
from sparse_doa.selection import best_subarray

AZ = SearchGrid.azimuth()


def test_grid_construction():
    assert AZ.shape == (1, 360) and AZ.phi_wraps
    sec = SearchGrid.azimuth(sector=(0, 90))
    assert sec.shape == (1, 90) and not sec.phi_wraps
    assert SearchGrid.hemisphere(step_deg=10).shape == (10, 36)
    with pytest.raises(ValueError):
        SearchGrid([], [0.0])


def test_noiseless_peak_lands_on_nearest_grid_point():
    g = make_geometry("UCA", M=6, spacing=0.5)
    for phi in (40.3, 123.7, 359.6):
        a = steering_vector(g, Direction.from_degrees(90, phi))
        R = np.outer(a, a.conj())
        s = music_spectrum(R, g, 1, AZ)
        assert np.argmax(s.values[0]) == round(phi) % 360


def test_white_noise_gives_flat_spectrum():
    g = make_geometry("UCA", M=5, spacing=0.5)
    s = music_spectrum(0.3 * np.eye(5, dtype=complex), g, 1, AZ)
    assert s.values.max() / s.values.min() - 1 < 1e-9


def test_two_source_spectrum_matches_projector_oracle():
    g = make_geometry("ULA", M=6, spacing=0.5)
    d1, d2 = Direction.from_degrees(90, 60), Direction.from_degrees(90, 100)
    A = np.stack([plane_wave(g.positions, d.theta, d.phi) for d in (d1, d2)], 1)
    R = A @ A.conj().T + 0.1 * np.eye(6)
    P = np.eye(6) - A @ np.linalg.solve(A.conj().T @ A, A.conj().T)
    grid = SearchGrid.azimuth(sector=(0, 180))
    # compare denominators: at the source angles both are roundoff-level
    ref = [np.real(plane_wave(g.positions, math.pi / 2, p).conj() @ P @ plane_wave(g.positions, math.pi / 2, p))
           for p in grid.phis]
    got = 1 / music_spectrum(R, g, 2, grid).values[0]
    assert np.allclose(got, ref, rtol=1e-8, atol=1e-12)
    est = estimate_doa(R, g, 2, grid)
    assert [round(d.degrees[1], 6) for d in est] == [60.0, 100.0]


def gaussian_log_spectrum(grid, centre_deg, width_deg=5.0):
    phi = np.degrees(grid.phis)
    return Spectrum(grid, np.exp(-0.5 * (wrap_deg(phi - centre_deg) / width_deg) ** 2)[None, :])


def test_parabolic_refinement_is_exact_for_a_gaussian_peak():
    for c in (20.3, 200.75, 359.8):
        est = find_peaks(gaussian_log_spectrum(AZ, c), 1)[0]
        assert wrap_deg(est.degrees[1] - c) == pytest.approx(0.0, abs=1e-9)


def test_two_equal_peaks_returned_in_grid_order():
    phi = np.degrees(AZ.phis)
    v = (np.exp(-0.5 * (wrap_deg(phi - 30) / 20) ** 2) + np.exp(-0.5 * (wrap_deg(phi - 250) / 20) ** 2))[None]
    est = find_peaks(Spectrum(AZ, v), 2)
    assert [round(d.degrees[1]) for d in est] == [30, 250]
    with pytest.raises(EstimationFailure):
        find_peaks(Spectrum(AZ, v), 3)


def brute_local_maxima(v, wrap):
    nt, nf = v.shape
    out = []
    for i in range(nt):
        for j in range(nf):
            k = i * nf + j
            ok = True
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    if (di, dj) == (0, 0):
                        continue
                    a, b = i + di, j + dj
                    if not 0 <= a < nt:
                        continue
                    if wrap:
                        b %= nf
                    elif not 0 <= b < nf:
                        continue
                    u = v[a, b]
                    if u > v[i, j] or (u == v[i, j] and a * nf + b < k):
                        ok = False
            if ok:
                out.append(k)
    return out


def test_local_maxima_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(30):
        shape = (int(rng.integers(1, 6)), int(rng.integers(3, 12)))
        v = rng.integers(0, 4, size=shape).astype(float)  # plenty of ties
        wrap = bool(rng.integers(2))
        assert local_maxima(v, wrap) == brute_local_maxima(v, wrap)


def test_plateau_gives_one_peak():
    v = np.array([[0.0, 1, 2, 3, 3, 3, 2, 1, 0, -1]])
    assert local_maxima(v, False) == [3]
    # a flat floor is a plateau too, and its first point counts
    assert local_maxima(np.zeros((1, 5)), False) == [0]


def test_rmse_examples():
    assert rmse_azimuth([10.0, 20.0], [10.0, 20.0]) == 0.0
    assert rmse_azimuth([11.0, 19.0, 31.0], [10.0, 20.0, 30.0]) == pytest.approx(1.0)
    assert rmse_azimuth([359.0], [1.0]) == pytest.approx(2.0)
    assert wrap_deg(180.0) == 180.0 and wrap_deg(-180.0) == 180.0 and wrap_deg(-179.0) == -179.0
    assert rmse_joint([[41.0, 31.0]], [[40.0, 30.0]]) == pytest.approx(2.0)
    assert rmse_joint([[41.0, 29.0]], [[40.0, 30.0]]) == pytest.approx(0.0)


def test_select_label_policies():
    g = make_geometry("UCA", M=6, spacing=0.5)
    d = Direction.from_degrees(90, 30)
    assert select_label("full_array", g, d, 3, 10, 100, None) == tuple(range(6))
    assert select_label("fixed", g, d, 3, 10, 100, None, label=(0, 2, 4)) == (0, 2, 4)
    assert select_label("best_crb", g, d, 3, 10, 100, None) == best_subarray(g, d, 3, 10, 100, estimate="azimuth")[0]
    assert len(select_label("random", g, d, 3, 10, 100, None, rng=np.random.default_rng(0))) == 3
    with pytest.raises(ValueError):
        select_label("fixed", g, d, 3, 10, 100, None)
    with pytest.raises(ValueError):
        select_label("oracle", g, d, 3, 10, 100, None)


def test_best_crb_beats_random_on_uca16():
    g = make_geometry("UCA", M=16, spacing=0.5)
    kw = dict(K=6, snr_list=[10.0], T=100, J_T=40, seed=3)
    best = evaluate_rmse(g, "best_crb", None, **kw)
    rand = evaluate_rmse(g, "random", None, **kw)
    assert best.rmse[0] <= rand.rmse[0]
    assert paired_bootstrap(best.errors[0], rand.errors[0], 500) > 0.5
    text = reports_csv([best, rand]).splitlines()
    assert text[0] == "sweep_value,method,rmse_deg,failures,J_T" and len(text) == 3


def test_evaluation_is_paired_and_worker_independent():
    g = make_geometry("UCA", M=8, spacing=0.5)
    kw = dict(K=4, snapshots_list=[20, 80], snr_db=5.0, J_T=12, seed=1)
    a = evaluate_rmse(g, "greedy", None, **kw)
    b = evaluate_rmse(g, "greedy", None, workers=3, **kw)
    assert a.rmse == b.rmse and a.labels == b.labels
    assert a.sweep == "snapshots" and a.values == [20, 80]
    full = evaluate_rmse(g, "full_array", Direction.from_degrees(90, 77), **kw)
    assert all(lab == tuple(range(8)) for lab in full.labels[0])


def test_failures_are_counted_and_excluded():
    g = make_geometry("UCA", M=6, spacing=0.5)
    one_point = SearchGrid([math.pi / 2], [0.0])
    two = [Direction.from_degrees(90, 20), Direction.from_degrees(90, 140)]
    rep = evaluate_rmse(g, "full_array", two, K=6, snr_list=[10.0], J_T=5, grid=one_point)
    assert rep.failures == [5] and math.isnan(rep.rmse[0])


def test_paired_bootstrap_extremes():
    a = [np.array([0.1])] * 20
    b = [np.array([1.0])] * 20
    assert paired_bootstrap(a, b, 200) == 1.0
    assert paired_bootstrap(b, a, 200) == 0.0
    with pytest.raises(ValueError):
        paired_bootstrap([None], [None])


def test_scan_loop_refresh_every_scan_uses_full_array():
    g = make_geometry("UCA", M=8, spacing=0.5)
    d = Direction.from_degrees(90, 45)
    recs = run_scan_loop(g, lambda R: (0, 1, 2), 5, 1, lambda s: d, 10.0, 50, 0)
    assert all(r.kind == "full" and r.label == tuple(range(8)) for r in recs)


def test_scan_loop_static_target_keeps_its_subarray():
    g = make_geometry("UCA", M=8, spacing=0.5)
    d = Direction.from_degrees(90, 45)
    best = best_subarray(g, d, 3, 20.0, 50, estimate="azimuth")[0]
    recs = run_scan_loop(g, lambda R: best, 12, 4, [d] * 12, 20.0, 50, 0)
    assert [r.kind for r in recs[:4]] == ["full", "sub", "sub", "sub"]
    assert {r.label for r in recs if r.kind == "sub"} == {best}
    assert scan_log_csv(recs).splitlines()[0] == "scan,kind,label,true_phi_deg,est_phi_deg,error_deg"


def test_scan_loop_tracks_a_drifting_target_better_than_a_fixed_subarray():
    g = make_geometry("UCA", M=12, spacing=0.5)
    # above the ambiguity threshold; at low SNR the sparse subarrays produce
    # occasional grating-lobe outliers that a compact fixed block does not
    K, snr, T = 4, 15.0, 50
    grid = SearchGrid.azimuth()

    def cognitive(R):
        d = estimate_doa(R, g, 1, grid)[0]
        return best_subarray(g, d, K, snr, T, estimate="azimuth")[0]

    traj = lambda s: Direction.from_degrees(90, (3.0 * s) % 360)  # noqa: E731
    fixed = (0, 1, 2, 3)
    adaptive = run_scan_loop(g, cognitive, 60, 5, traj, snr, T, 7)
    baseline = run_scan_loop(g, None, 60, 5, traj, snr, T, 7, fixed_label=fixed)
    err = lambda recs: np.sqrt(np.nanmean([r.error_deg**2 for r in recs if r.kind == "sub"]))  # noqa: E731
    assert err(adaptive) < err(baseline)
    with pytest.raises(ValueError):
        run_scan_loop(g, None, 3, 1, traj, snr, T, 0)
