"""Labelled training corpora: covariance features paired with CRB-optimal subarrays.

Generation walks ``snr -> direction p -> realisation l`` and every realisation
draws from its own stream ``seed || "dataset" || snr_idx || p || l``, so the
corpus is identical for any worker count. Stored order is generation order;
shuffling is the trainer's job.

On-disk layout (all little-endian)::

    b"SPDS" | u32 version | u32 header_len | header JSON (utf-8)
    features f32[N, M, M, 3] | labels i32[N] | directions f64[N, 2] | snr f64[N]
    sha256 of everything above (32 bytes)
"""

import hashlib
import json
import math
import struct
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ChecksumError, FormatError, ShapeMismatch
from .geometry import Direction
from .seeding import derive_rng
from .selection import TIE_TOL, argmin_label, combos_array
from .bounds import crb_batch
from .simulation import covariance_features, sample_covariance, simulate_snapshots

MAGIC = b"SPDS"
VERSION = 1


@dataclass(eq=False)
class TrainingDataset:
    features: np.ndarray
    labels: np.ndarray
    catalog: list
    meta: dict = field(default_factory=dict)
    directions: np.ndarray | None = None
    snr_db: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int32)
        self.catalog = [tuple(int(i) for i in lab) for lab in self.catalog]
        n = self.labels.shape[0]
        if self.features.ndim != 4 or self.features.shape[0] != n or self.features.shape[3] != 3:
            raise ShapeMismatch(f"features {self.features.shape} do not match {n} labels")
        if self.directions is None:
            self.directions = np.full((n, 2), np.nan)
        if self.snr_db is None:
            self.snr_db = np.full(n, np.nan)
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(n, 2)
        self.snr_db = np.asarray(self.snr_db, dtype=np.float64).reshape(n)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def M(self):
        return self.features.shape[1]

    @property
    def n_classes(self):
        return len(self.catalog)

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return TrainingDataset(self.features[idx], self.labels[idx], list(self.catalog), dict(self.meta),
                               self.directions[idx], self.snr_db[idx])

    def relabel(self, catalog):
        """Express labels in another catalog; labels it lacks become ``-1``."""
        catalog = [tuple(c) for c in catalog]
        lookup = {lab: i for i, lab in enumerate(catalog)}
        new = np.array([lookup.get(self.catalog[i], -1) if i >= 0 else -1 for i in self.labels], dtype=np.int32)
        return TrainingDataset(self.features, new, catalog, dict(self.meta), self.directions, self.snr_db)

    def class_histogram(self):
        c = Counter(int(x) for x in self.labels)
        return {str(k): c[k] for k in sorted(c)}


def direction_grid(P, sector=(0.0, 360.0), theta_deg=90.0):
    """``P`` equally spaced azimuths ``lo + (hi - lo) p / P`` at a fixed elevation."""
    lo, hi = sector
    return [Direction.from_degrees(theta_deg, lo + (hi - lo) * p / P) for p in range(P)]


def random_directions(P, rng, sector=(0.0, 360.0), theta_deg=90.0):
    lo, hi = sector
    return [Direction.from_degrees(theta_deg, x) for x in rng.uniform(lo, hi, size=P)]


def _label_for(g, d, combos, K, snr, T, R, mode, estimate, form, tol, label_snr_db):
    if mode == "empirical" and math.isfinite(snr):
        _, _, ka = crb_batch(g, d, combos, snr, T, R, form=form, estimate=estimate)
        t = TIE_TOL["empirical"] if tol is None else tol
    else:
        # noise-free data carries no CRB information at sigma_n = 0; the
        # asymptotic argmin does not depend on SNR so any finite one works
        s = snr if math.isfinite(snr) else label_snr_db
        _, _, ka = crb_batch(g, d, combos, s, T, None, form=form, estimate=estimate)
        t = TIE_TOL["asymptotic"] if tol is None else tol
    i = argmin_label(ka, combos, t)
    return tuple(int(x) for x in combos[i])


def generate_training_data(g, K, P, L, T, snr_list, seed, label_source="exhaustive", *,
                           mode="empirical", estimate="azimuth", form="fim", theta_deg=90.0,
                           sector=(0.0, 360.0), sampling="grid", label_snr_db=20.0, tol=None,
                           workers=1, budget=10**6):
    """Synthesize ``P * L * len(snr_list)`` labelled samples.

    For each realisation: simulate ``T`` snapshots, compute the full-array
    sample covariance, evaluate every candidate subarray's absolute CRB
    (from the subarray block of that covariance in empirical mode, from the
    model covariance in asymptotic mode), take the canonical argmin as the
    label and store the full-array covariance features.

    Args:
        label_source: ``"exhaustive"`` for all C(M, K) subsets or a
            :class:`~sparse_doa.sa2d.CandidateSet` restricting the classes.
        sampling: ``"grid"`` (equally spaced azimuths over ``sector``) or
            ``"random"`` (uniform, seed label ``"directions"``).
        workers: Thread count for realisation-level parallelism. Output does
            not depend on it.
    """
    if P < 1 or L < 1:
        raise ValueError("P and L must be >= 1")
    snr_list = [float(s) for s in snr_list]
    if label_source == "exhaustive":
        combos = combos_array(g.M, K, budget)
        generator = "exhaustive"
    else:
        combos = label_source.combos()
        generator = "sa"
        if combos.shape[1] != K:
            raise ValueError("candidate set has a different K")
    if sampling == "grid":
        dirs = direction_grid(P, sector, theta_deg)
    elif sampling == "random":
        dirs = random_directions(P, derive_rng(seed, "directions"), sector, theta_deg)
    else:
        raise ValueError(f"unknown sampling {sampling!r}")

    tasks = [(si, p, l) for si in range(len(snr_list)) for p in range(P) for l in range(L)]
    asym_cache = {}

    def run(task):
        si, p, l = task
        snr = snr_list[si]
        snaps = simulate_snapshots(g, dirs[p], snr, T, derive_rng(seed, "dataset", si, p, l))
        R = sample_covariance(snaps)
        if mode == "asymptotic" or not math.isfinite(snr):
            key = (si, p)
            if key not in asym_cache:
                asym_cache[key] = _label_for(g, dirs[p], combos, K, snr, T, None, "asymptotic",
                                             estimate, form, tol, label_snr_db)
            label = asym_cache[key]
        else:
            label = _label_for(g, dirs[p], combos, K, snr, T, R, mode, estimate, form, tol, label_snr_db)
        return covariance_features(R).astype(np.float32), label

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    labels_raw = [lab for _, lab in results]
    catalog = sorted(set(labels_raw))
    index = {lab: i for i, lab in enumerate(catalog)}
    feats = np.stack([f for f, _ in results])
    labels = np.array([index[lab] for lab in labels_raw], dtype=np.int32)
    directions = np.array([[dirs[p].theta, dirs[p].phi] for _, p, _ in tasks])
    snrs = np.array([snr_list[si] for si, _, _ in tasks])
    meta = {
        "geometry": g.descriptor(),
        "M": g.M,
        "K": int(K),
        "P": int(P),
        "L": int(L),
        "T": int(T),
        "snr_list": snr_list,
        "seed": int(seed),
        "generator": generator,
        "mode": mode,
        "estimate": estimate,
        "form": form,
        "sampling": sampling,
        "sector": [float(sector[0]), float(sector[1])],
        "theta_deg": float(theta_deg),
    }
    return TrainingDataset(feats, labels, catalog, meta, directions, snrs)


def split_train_val(ds, fraction=0.8, seed=0):
    """Seeded shuffle split into disjoint train/validation parts."""
    n = len(ds)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    n_train = min(max(int(round(fraction * n)), 1), n - 1)
    perm = derive_rng(seed, "split").permutation(n)
    return ds.subset(np.sort(perm[:n_train])), ds.subset(np.sort(perm[n_train:]))


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(type(o))


def dataset_bytes(ds):
    header = dict(ds.meta)
    header["N"] = len(ds)
    header["M"] = ds.M
    header["catalog"] = [list(c) for c in ds.catalog]
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":"), default=_json_default).encode("utf-8")
    parts = [
        MAGIC,
        struct.pack("<II", VERSION, len(hjson)),
        hjson,
        np.ascontiguousarray(ds.features, dtype="<f4").tobytes(),
        np.ascontiguousarray(ds.labels, dtype="<i4").tobytes(),
        np.ascontiguousarray(ds.directions, dtype="<f8").tobytes(),
        np.ascontiguousarray(ds.snr_db, dtype="<f8").tobytes(),
    ]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_dataset(ds, path):
    from .io_utils import atomic_write_bytes

    atomic_write_bytes(path, dataset_bytes(ds))


def load_dataset(path, expected_M=None):
    with open(path, "rb") as fh:
        blob = fh.read()
    return parse_dataset(blob, expected_M)


def parse_dataset(blob, expected_M=None):
    if len(blob) < 12 + 32 or blob[:4] != MAGIC:
        raise FormatError("not a dataset file (bad magic or too short)")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise FormatError(f"dataset format version {version}, expected {VERSION}")
    if 12 + hlen > len(blob) - 32:
        raise FormatError("truncated dataset header")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError("dataset checksum mismatch (corrupt or truncated file)")
    try:
        header = json.loads(blob[12:12 + hlen].decode("utf-8"))
        N, M = int(header["N"]), int(header["M"])
    except (ValueError, KeyError) as exc:
        raise FormatError(f"unreadable dataset header: {exc}") from exc
    sizes = [N * M * M * 3 * 4, N * 4, N * 16, N * 8]
    expected = 12 + hlen + sum(sizes) + 32
    if len(blob) != expected:
        raise FormatError(f"dataset file has {len(blob)} bytes, expected {expected} (truncated?)")
    if expected_M is not None and M != expected_M:
        raise ShapeMismatch(f"dataset is for M={M}, expected M={expected_M}")
    off = 12 + hlen
    feats = np.frombuffer(blob, dtype="<f4", count=N * M * M * 3, offset=off).reshape(N, M, M, 3)
    off += sizes[0]
    labels = np.frombuffer(blob, dtype="<i4", count=N, offset=off)
    off += sizes[1]
    dirs = np.frombuffer(blob, dtype="<f8", count=2 * N, offset=off).reshape(N, 2)
    off += sizes[2]
    snr = np.frombuffer(blob, dtype="<f8", count=N, offset=off)
    catalog = [tuple(c) for c in header.pop("catalog")]
    header.pop("N")
    if labels.size and (labels.max() >= len(catalog)):
        raise FormatError("label id outside the catalog")
    return TrainingDataset(feats.astype(np.float32), labels.astype(np.int32), catalog, header,
                           dirs.copy(), snr.copy())


def summary(ds):
    """Counts and class histogram for the JSON sidecar."""
    return {
        "N": len(ds),
        "M": ds.M,
        "n_classes": ds.n_classes,
        "catalog": [list(c) for c in ds.catalog],
        "class_histogram": ds.class_histogram(),
        "meta": {k: v for k, v in ds.meta.items() if k != "geometry"},
    }
