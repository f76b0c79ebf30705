"""A small convolutional classifier from covariance features to subarray classes.

Layout: ``conv3x3 -> ReLU`` blocks (valid padding, stride 1), flatten, fully
connected ``-> ReLU -> dropout`` blocks, and a softmax output over the catalog
of best subarrays. Parameters are float64 numpy arrays; training is plain SGD
with momentum on the two-term cross-entropy

    CE = -(1/N) sum_t sum_c [ y_tc ln p_tc + (1 - y_tc) ln(1 - p_tc) ].

Transfer learning copies and freezes the convolutional tensors of a source
model, re-initialises the fully connected head for the target catalog and
trains only the head.
"""

import copy
import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .errors import CatalogMismatch, ChecksumError, DivergenceError, FormatError, ShapeMismatch
from .seeding import derive_rng

EPS = 1e-12
MAGIC = b"SPMD"
VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Architecture. ``fc`` holds ``(width, dropout_rate)`` pairs."""

    input_shape: tuple
    n_classes: int
    conv_filters: tuple = (16, 16)
    kernel: int = 3
    fc: tuple = ((128, 0.5),)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(x) for x in self.input_shape))
        object.__setattr__(self, "conv_filters", tuple(int(x) for x in self.conv_filters))
        object.__setattr__(self, "fc", tuple((int(w), float(r)) for w, r in self.fc))
        if len(self.input_shape) != 3 or self.input_shape[2] != 3:
            raise ShapeMismatch(f"input shape must be (M, M, 3), got {self.input_shape}")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        for _, r in self.fc:
            if not 0.0 <= r < 1.0:
                raise ValueError("dropout rate must be in [0, 1)")
        if self.conv_out_size < 1:
            raise ShapeMismatch("too many valid convolutions for this input size")

    @classmethod
    def large(cls, M, n_classes):
        """The large variant: four 256-filter conv layers, two 1024-unit FC layers."""
        return cls((M, M, 3), n_classes, (256, 256, 256, 256), 3, ((1024, 0.5), (1024, 0.5)))

    @property
    def conv_out_size(self):
        return self.input_shape[0] - len(self.conv_filters) * (self.kernel - 1)

    def with_classes(self, n):
        return NetworkSpec(self.input_shape, n, self.conv_filters, self.kernel, self.fc)

    def to_dict(self):
        return {"input_shape": list(self.input_shape), "n_classes": self.n_classes,
                "conv_filters": list(self.conv_filters), "kernel": self.kernel,
                "fc": [list(x) for x in self.fc]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["input_shape"]), int(d["n_classes"]), tuple(d["conv_filters"]),
                   int(d["kernel"]), tuple(tuple(x) for x in d["fc"]))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 512
    lr_decay: float = 0.9
    decay_every: int = 10
    patience: int = 3
    max_epochs: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("invalid training configuration")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.patience < 1 or self.decay_every < 1 or not 0 < self.lr_decay <= 1:
            raise ValueError("invalid schedule")


def catalog_fingerprint(catalog):
    blob = json.dumps([list(c) for c in catalog], separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(eq=False)
class ModelState:
    spec: NetworkSpec
    params: dict
    catalog: list
    frozen: frozenset = frozenset()
    log: list = field(default_factory=list)

    @property
    def fingerprint(self):
        return catalog_fingerprint(self.catalog)

    def conv_names(self):
        return [n for n in self.params if n.startswith("conv")]

    def head_names(self):
        return [n for n in self.params if not n.startswith("conv")]


def _init_layer(rng, fan_in, shape):
    lim = math.sqrt(6.0 / fan_in)
    return rng.uniform(-lim, lim, size=shape)


def _head_params(spec, rng, flat):
    params = {}
    width_in = flat
    for j, (w, _) in enumerate(spec.fc):
        params[f"fc{j}.W"] = _init_layer(rng, width_in, (width_in, w))
        params[f"fc{j}.b"] = np.zeros(w)
        width_in = w
    params["out.W"] = _init_layer(rng, width_in, (width_in, spec.n_classes))
    params["out.b"] = np.zeros(spec.n_classes)
    return params


def init_model(spec, catalog, seed=0):
    """Fan-in scaled uniform weights, zero biases."""
    if len(catalog) != spec.n_classes:
        raise CatalogMismatch(f"spec has {spec.n_classes} outputs, catalog has {len(catalog)} classes")
    rng = derive_rng(seed, "init")
    params = {}
    c_in = 3
    k = spec.kernel
    for i, f in enumerate(spec.conv_filters):
        params[f"conv{i}.W"] = _init_layer(rng, c_in * k * k, (f, c_in, k, k))
        params[f"conv{i}.b"] = np.zeros(f)
        c_in = f
    flat = c_in * spec.conv_out_size**2
    params.update(_head_params(spec, rng, flat))
    return ModelState(spec, params, [tuple(c) for c in catalog])


def softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _check_input(model, X):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 3:
        X = X[None]
    if X.shape[1:] != model.spec.input_shape:
        raise ShapeMismatch(f"input {X.shape[1:]} does not match network input {model.spec.input_shape}")
    return X


def _forward(model, X, train=False, rng=None, numba=None):
    p = model.params
    spec = model.spec
    h = np.ascontiguousarray(X.transpose(0, 3, 1, 2))
    cache = []
    for i in range(len(spec.conv_filters)):
        z = _kernels.conv_forward(h, p[f"conv{i}.W"], p[f"conv{i}.b"], numba=numba)
        cache.append((h, z))
        h = np.maximum(z, 0.0)
    conv_shape = h.shape
    h = h.reshape(h.shape[0], -1)
    fc_cache = []
    for j, (_, rate) in enumerate(spec.fc):
        z = h @ p[f"fc{j}.W"] + p[f"fc{j}.b"]
        a = np.maximum(z, 0.0)
        mask = None
        if train and rate > 0.0:
            mask = (rng.random(a.shape) >= rate) / (1.0 - rate)
            a = a * mask
        fc_cache.append((h, z, mask))
        h = a
    logits = h @ p["out.W"] + p["out.b"]
    return logits, (cache, conv_shape, fc_cache, h)


def forward(model, x, numba=None):
    """Class probabilities (inference mode, dropout off). Shape ``(N, C)``."""
    X = _check_input(model, x)
    logits, _ = _forward(model, X, numba=numba)
    return softmax(logits)


def cross_entropy(pred, target):
    """Two-term cross-entropy averaged over the batch.

    ``target`` is one-hot ``(N, C)`` or integer class ids.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    y = _one_hot(target, pred.shape[1])
    if pred.shape[0] == 0:
        raise ValueError("empty batch")
    eta = np.clip(pred, EPS, 1.0 - EPS)
    return float(-(y * np.log(eta) + (1.0 - y) * np.log(1.0 - eta)).sum(1).mean())


def _one_hot(target, C):
    t = np.asarray(target)
    if t.ndim == 2:
        return t.astype(np.float64)
    y = np.zeros((t.size, C))
    y[np.arange(t.size), t] = 1.0
    return y


def loss_and_grads(model, X, y, rng=None, train=True, numba=None):
    """Loss and gradients for every parameter tensor (dropout masks from ``rng``)."""
    X = _check_input(model, X)
    logits, (cache, conv_shape, fc_cache, h_last) = _forward(model, X, train=train, rng=rng, numba=numba)
    prob = softmax(logits)
    Y = _one_hot(y, prob.shape[1])
    N = X.shape[0]
    eta = np.clip(prob, EPS, 1.0 - EPS)
    loss = float(-(Y * np.log(eta) + (1.0 - Y) * np.log(1.0 - eta)).sum(1).mean())
    inside = (prob > EPS) & (prob < 1.0 - EPS)
    dp = np.where(inside, -(Y / eta - (1.0 - Y) / (1.0 - eta)) / N, 0.0)
    dz = prob * (dp - (dp * prob).sum(1, keepdims=True))

    p = model.params
    grads = {"out.W": h_last.T @ dz, "out.b": dz.sum(0)}
    dh = dz @ p["out.W"].T
    for j in reversed(range(len(model.spec.fc))):
        h_in, z, mask = fc_cache[j]
        if mask is not None:
            dh = dh * mask
        dh = dh * (z > 0)
        grads[f"fc{j}.W"] = h_in.T @ dh
        grads[f"fc{j}.b"] = dh.sum(0)
        dh = dh @ p[f"fc{j}.W"].T
    dh = dh.reshape(conv_shape)
    for i in reversed(range(len(model.spec.conv_filters))):
        h_in, z = cache[i]
        dh = dh * (z > 0)
        dx, dW, db = _kernels.conv_backward(h_in, p[f"conv{i}.W"], dh, numba=numba)
        grads[f"conv{i}.W"] = dW
        grads[f"conv{i}.b"] = db
        dh = dx
    return loss, grads


def predict_proba(model, X, batch=1024, numba=None):
    X = np.asarray(X)
    out = [forward(model, X[i:i + batch], numba=numba) for i in range(0, X.shape[0], batch)]
    return np.concatenate(out) if out else np.zeros((0, model.spec.n_classes))


def predict_subarray(model, x, numba=None):
    """``(class_id, label, confidence)``; argmax ties go to the lowest class id."""
    prob = forward(model, x, numba=numba)[0]
    cid = int(np.argmax(prob))
    return cid, model.catalog[cid], float(prob[cid])


def accuracy(model, ds, numba=None):
    """Percentage of samples whose predicted class equals the stored label."""
    if len(ds) == 0:
        raise ValueError("empty dataset")
    if list(ds.catalog) != list(model.catalog):
        ds = ds.relabel(model.catalog)
    pred = predict_proba(model, ds.features, numba=numba).argmax(1)
    return 100.0 * float(np.mean(pred == ds.labels))


def _check_catalogs(a, b):
    if [tuple(c) for c in a.catalog] != [tuple(c) for c in b.catalog]:
        raise CatalogMismatch("training and validation datasets use different catalogs")


def fit(model, ds_train, ds_val, cfg, numba=None):
    """SGD with momentum, per-epoch shuffling, step decay and early stopping.

    Frozen tensors are never updated. Training stops once validation
    accuracy has not improved for ``cfg.patience`` epochs; the parameters of
    the best validation epoch are kept. Returns the updated model (a copy).
    """
    _check_catalogs(ds_train, ds_val)
    if list(ds_train.catalog) != list(model.catalog):
        raise CatalogMismatch("model and dataset catalogs differ")
    if np.any(ds_train.labels < 0):
        raise CatalogMismatch("training labels outside the catalog")
    model = copy.deepcopy(model)
    rng = derive_rng(cfg.seed, "train")
    X = ds_train.features
    y = ds_train.labels
    N = len(ds_train)
    trainable = [n for n in model.params if n not in model.frozen]
    velocity = {n: np.zeros_like(model.params[n]) for n in trainable}
    lr = cfg.learning_rate
    best_acc, best_params, since = -1.0, None, 0
    log = []
    for epoch in range(1, cfg.max_epochs + 1):
        perm = rng.permutation(N)
        total, seen = 0.0, 0
        for start in range(0, N, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, X[idx], y[idx], rng=rng, numba=numba)
            if not math.isfinite(loss):
                raise DivergenceError(epoch)
            for n in trainable:
                v = velocity[n]
                v *= cfg.momentum
                v -= lr * grads[n]
                model.params[n] += v
            total += loss * idx.size
            seen += idx.size
        train_loss = total / max(seen, 1)
        if not math.isfinite(train_loss):
            raise DivergenceError(epoch)
        val_acc = accuracy(model, ds_val, numba=numba) if len(ds_val) else float("nan")
        log.append({"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_accuracy": val_acc})
        if val_acc > best_acc:
            best_acc, since = val_acc, 0
            best_params = {n: a.copy() for n, a in model.params.items()}
        else:
            since += 1
            if since >= cfg.patience:
                break
        if epoch % cfg.decay_every == 0:
            lr *= cfg.lr_decay
    if best_params is not None:
        model.params = best_params
    model.log = list(model.log) + log
    return model


def train(ds_train, ds_val, spec=None, cfg=TrainConfig(), numba=None):
    """Train a fresh network; ``spec=None`` uses the desk-scale default."""
    _check_catalogs(ds_train, ds_val)
    M = ds_train.M
    if spec is None:
        spec = NetworkSpec((M, M, 3), ds_train.n_classes)
    elif spec.n_classes != ds_train.n_classes:
        spec = spec.with_classes(ds_train.n_classes)
    model = init_model(spec, ds_train.catalog, cfg.seed)
    return fit(model, ds_train, ds_val, cfg, numba=numba)


def transfer_learn(source, ds_train, ds_val, cfg=TrainConfig(), numba=None):
    """Freeze the source convolution tensors and train a fresh head on target data."""
    _check_catalogs(ds_train, ds_val)
    if (ds_train.M, ds_train.M, 3) != source.spec.input_shape:
        raise ShapeMismatch(
            f"target input {(ds_train.M, ds_train.M, 3)} differs from source {source.spec.input_shape}")
    spec = source.spec.with_classes(ds_train.n_classes)
    fresh = init_model(spec, ds_train.catalog, derive_rng(cfg.seed, "transfer").integers(2**62))
    params = {}
    for n in source.conv_names():
        params[n] = source.params[n].copy()
    for n in fresh.head_names():
        params[n] = fresh.params[n]
    ordered = {n: params[n] for n in fresh.params}
    model = ModelState(spec, ordered, list(ds_train.catalog), frozenset(source.conv_names()))
    return fit(model, ds_train, ds_val, cfg, numba=numba)


def tensor_digest(model, names=None):
    h = hashlib.sha256()
    for n in names if names is not None else model.params:
        h.update(n.encode())
        h.update(np.ascontiguousarray(model.params[n]).tobytes())
    return h.hexdigest()


def model_bytes(model):
    header = {
        "spec": model.spec.to_dict(),
        "catalog": [list(c) for c in model.catalog],
        "fingerprint": model.fingerprint,
        "frozen": sorted(model.frozen),
        "log": model.log,
        "tensors": [[n, list(a.shape)] for n, a in model.params.items()],
    }
    hjson = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = MAGIC + struct.pack("<II", VERSION, len(hjson)) + hjson + b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in model.params.values())
    return body + hashlib.sha256(body).digest()


def save_model(model, path):
    from .io_utils import atomic_write_bytes

    atomic_write_bytes(path, model_bytes(model))


def load_model(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 44 or blob[:4] != MAGIC:
        raise FormatError("not a model file")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != VERSION:
        raise FormatError(f"model format version {version}, expected {VERSION}")
    if hashlib.sha256(blob[:-32]).digest() != blob[-32:]:
        raise ChecksumError("model checksum mismatch")
    header = json.loads(blob[12:12 + hlen])
    off = 12 + hlen
    params = {}
    for name, shape in header["tensors"]:
        n = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
        off += 8 * n
    if off != len(blob) - 32:
        raise FormatError("model tensor block size mismatch")
    catalog = [tuple(c) for c in header["catalog"]]
    if catalog_fingerprint(catalog) != header["fingerprint"]:
        raise FormatError("catalog fingerprint mismatch")
    return ModelState(NetworkSpec.from_dict(header["spec"]), params, catalog,
                      frozenset(header["frozen"]), header["log"])


def log_csv(model):
    from .io_utils import rows_to_csv

    return rows_to_csv(["epoch", "lr", "train_loss", "val_accuracy"],
                       [[r["epoch"], float(r["lr"]), float(r["train_loss"]), float(r["val_accuracy"])]
                        for r in model.log])


def config_dict(cfg):
    return asdict(cfg)
