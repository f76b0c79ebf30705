import math

import numpy as np
import pytest

from oracles import brute_force_best, naive_covariance
from sparse_doa.dataset import (
    TrainingDataset,
    dataset_bytes,
    direction_grid,
    generate_training_data,
    load_dataset,
    parse_dataset,
    save_dataset,
    split_train_val,
    summary,
)
from sparse_doa.errors import ChecksumError, FormatError, ShapeMismatch
from sparse_doa.geometry import make_geometry
from sparse_doa.sa2d import CandidateSet
from sparse_doa.seeding import derive_rng
from sparse_doa.selection import best_subarray
from sparse_doa.simulation import simulate_snapshots

UCA4 = make_geometry("UCA", M=4, spacing=0.5)


def test_single_sample_label_is_best_subarray():
    ds = generate_training_data(UCA4, 2, 1, 1, 50, [10.0], seed=1, mode="asymptotic")
    d = direction_grid(1)[0]
    assert ds.catalog[ds.labels[0]] == best_subarray(UCA4, d, 2, 10.0, 50, estimate="azimuth")[0]


def test_sample_count_and_shapes():
    ds = generate_training_data(UCA4, 2, 5, 3, 20, [0.0, 10.0, 20.0], seed=0)
    assert len(ds) == 5 * 3 * 3
    assert ds.features.shape == (45, 4, 4, 3) and ds.features.dtype == np.float32
    assert ds.labels.dtype == np.int32
    assert ds.catalog == sorted(ds.catalog)
    assert set(ds.labels.tolist()) == set(range(ds.n_classes))


def test_replay_matches_independent_oracle():
    P, L, T, snr = 3, 2, 30, 5.0
    ds = generate_training_data(UCA4, 2, P, L, T, [snr], seed=42, mode="asymptotic")
    dirs = direction_grid(P)
    n = 0
    for p in range(P):
        for l in range(L):
            Y = simulate_snapshots(UCA4, dirs[p], snr, T, derive_rng(42, "dataset", 0, p, l)).samples
            R = naive_covariance(Y)
            x = ds.features[n]
            assert np.allclose(x[..., 0], R.real, atol=1e-5)
            assert np.allclose(x[..., 1], R.imag, atol=1e-5)
            ref, _, _ = brute_force_best(UCA4.positions, 2, dirs[p].theta, dirs[p].phi, snr, T, azimuth_only=True)
            assert ds.catalog[ds.labels[n]] == ref
            assert ds.directions[n, 1] == pytest.approx(dirs[p].phi)
            n += 1


def test_noise_free_samples_use_asymptotic_labels():
    ds = generate_training_data(UCA4, 2, 4, 2, 10, [math.inf], seed=0)
    lab = ds.labels.reshape(4, 2)
    assert np.all(lab[:, 0] == lab[:, 1])


def test_empirical_labels_vary_with_realisation():
    g = make_geometry("UCA", M=8, spacing=0.5)
    ds = generate_training_data(g, 3, 4, 10, 10, [0.0], seed=0, mode="empirical")
    per_dir = ds.labels.reshape(4, 10)
    assert any(len(set(row)) > 1 for row in per_dir.tolist())


def test_candidate_set_restricts_classes():
    g = make_geometry("URA", rows=3, cols=3, spacing=0.5)
    cands = CandidateSet([(0, 1, 3), (1, 5, 7), (2, 3, 8)], g, [0, 0, 0])
    ds = generate_training_data(g, 3, 6, 1, 20, [10.0], seed=0, label_source=cands, theta_deg=45.0,
                                estimate="joint")
    assert set(ds.catalog) <= set(cands.labels)
    assert ds.meta["generator"] == "sa"


def test_split_is_disjoint_and_seeded():
    ds = generate_training_data(UCA4, 2, 10, 5, 10, [10.0], seed=0)
    ds.features[:, 0, 0, 0] = np.arange(len(ds))  # tag each sample
    tr, va = split_train_val(ds, 0.8, seed=1)
    assert len(tr) == 40 and len(va) == 10
    ids = np.r_[tr.features[:, 0, 0, 0], va.features[:, 0, 0, 0]]
    assert sorted(ids.tolist()) == list(range(50))
    tr2, _ = split_train_val(ds, 0.8, seed=1)
    assert np.array_equal(tr.features, tr2.features)
    h = np.bincount(ds.labels, minlength=ds.n_classes)
    assert np.array_equal(np.bincount(tr.labels, minlength=ds.n_classes)
                          + np.bincount(va.labels, minlength=ds.n_classes), h)


def test_save_load_roundtrip(tmp_path):
    ds = generate_training_data(UCA4, 2, 4, 2, 10, [0.0, 10.0], seed=3)
    path = tmp_path / "d.bin"
    save_dataset(ds, path)
    back = load_dataset(path, expected_M=4)
    assert np.array_equal(back.features, ds.features)
    assert np.array_equal(back.labels, ds.labels)
    assert back.catalog == ds.catalog
    assert np.array_equal(back.directions, ds.directions)
    assert back.meta == ds.meta
    assert dataset_bytes(back) == path.read_bytes()


def test_corruption_detected(tmp_path):
    ds = generate_training_data(UCA4, 2, 3, 1, 10, [10.0], seed=0)
    blob = bytearray(dataset_bytes(ds))
    flipped = bytearray(blob)
    flipped[-40] ^= 0x01
    with pytest.raises(ChecksumError):
        parse_dataset(bytes(flipped))
    with pytest.raises(FormatError):
        parse_dataset(bytes(blob[:-10]))
    bad_version = bytearray(blob)
    bad_version[4] = 99
    with pytest.raises(FormatError):
        parse_dataset(bytes(bad_version))
    with pytest.raises(FormatError):
        parse_dataset(b"XXXX" + bytes(blob[4:]))
    with pytest.raises(ShapeMismatch):
        parse_dataset(bytes(blob), expected_M=5)


def test_worker_count_does_not_change_output():
    g = make_geometry("UCA", M=6, spacing=0.5)
    a = generate_training_data(g, 3, 6, 3, 20, [5.0, 15.0], seed=9, workers=1)
    b = generate_training_data(g, 3, 6, 3, 20, [5.0, 15.0], seed=9, workers=4)
    assert dataset_bytes(a) == dataset_bytes(b)


def test_random_direction_sampling_is_seeded():
    a = generate_training_data(UCA4, 2, 5, 1, 10, [10.0], seed=2, sampling="random")
    b = generate_training_data(UCA4, 2, 5, 1, 10, [10.0], seed=2, sampling="random")
    assert np.array_equal(a.directions, b.directions)
    assert len(set(a.directions[:, 1].tolist())) == 5


def test_shape_checks_and_relabel():
    with pytest.raises(ShapeMismatch):
        TrainingDataset(np.zeros((3, 4, 4, 3)), np.zeros(2), [(0, 1)])
    ds = TrainingDataset(np.zeros((3, 2, 2, 3)), [0, 1, 1], [(0, 1), (0, 2)])
    r = ds.relabel([(0, 2), (1, 2)])
    assert r.labels.tolist() == [-1, 0, 0]


def test_summary():
    ds = generate_training_data(UCA4, 2, 4, 2, 10, [10.0], seed=0)
    s = summary(ds)
    assert s["N"] == 8 and s["M"] == 4
    assert sum(s["class_histogram"].values()) == 8
    assert len(s["catalog"]) == s["n_classes"]
