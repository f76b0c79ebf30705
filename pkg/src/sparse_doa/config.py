"""Experiment configuration: YAML file -> validated, frozen dataclasses.

Precedence, highest first: ``--set``/``--seed``/``--out`` flags, the config
file, the ``SPARSE_DOA_OUT`` environment variable (output directory only),
built-in defaults. Unknown keys anywhere are rejected.
"""

import copy
import dataclasses
import hashlib
import math
import os
from dataclasses import dataclass, field

import yaml

from .errors import SparseDoaError

OUT_ENV = "SPARSE_DOA_OUT"


class ConfigParseError(SparseDoaError):
    category = "parse"


class ConfigError(SparseDoaError, ValueError):
    category = "validation"


GEOMETRY_KEYS = {"kind", "wavelength", "seed", "sigma", "M", "spacing", "radius", "rows", "cols",
                 "dx", "dy", "aperture", "min_separation", "positions"}


@dataclass(frozen=True)
class SelectionBlock:
    K: int = 4
    mode: str = "empirical"
    estimate: str = "azimuth"
    form: str = "fim"
    tolerance: float | None = None
    budget: int = 10**6
    grid_points: int = 100
    snr_db: float = 20.0
    T: int = 100
    theta_deg: float = 90.0

    def validate(self):
        _check(self.K >= 1, "selection.K must be >= 1")
        _check(self.mode in ("empirical", "asymptotic"), "selection.mode must be empirical or asymptotic")
        _check(self.estimate in ("joint", "azimuth"), "selection.estimate must be joint or azimuth")
        _check(self.form in ("fim", "cross"), "selection.form must be fim or cross")
        _check(self.tolerance is None or self.tolerance >= 0, "selection.tolerance must be >= 0")
        _check(self.budget >= 1 and self.grid_points >= 1 and self.T >= 1, "selection sizes must be positive")


@dataclass(frozen=True)
class DatasetBlock:
    P: int = 60
    L: int = 20
    T: int = 100
    snr_list: tuple = (15.0, 20.0)
    sector: tuple = (0.0, 360.0)
    sampling: str = "grid"
    label_source: str = "exhaustive"
    label_snr_db: float = 20.0
    val_fraction: float = 0.2
    workers: int = 1

    def validate(self):
        _check(self.P >= 1 and self.L >= 1 and self.T >= 1, "dataset.P, L, T must be >= 1")
        _check(len(self.snr_list) >= 1, "dataset.snr_list must be non-empty")
        _check(len(self.sector) == 2 and self.sector[0] < self.sector[1], "dataset.sector must be [lo, hi]")
        _check(self.sampling in ("grid", "random"), "dataset.sampling must be grid or random")
        _check(self.label_source in ("exhaustive", "sa"), "dataset.label_source must be exhaustive or sa")
        _check(0.0 < self.val_fraction < 1.0, "dataset.val_fraction must be in (0, 1)")
        _check(self.workers >= 1, "dataset.workers must be >= 1")


@dataclass(frozen=True)
class TrainingBlock:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    lr_decay: float = 0.9
    decay_every: int = 10
    patience: int = 3
    max_epochs: int = 100
    architecture: str = "desk"
    conv_filters: tuple = (16, 16)
    kernel: int = 3
    fc: tuple = ((128, 0.5),)

    def validate(self):
        _check(self.architecture in ("desk", "large"), "training.architecture must be desk or large")
        _check(self.kernel >= 1, "training.kernel must be >= 1")
        for item in self.fc:
            _check(len(item) == 2, "training.fc entries are [width, dropout]")

    def train_config(self, seed):
        from .learner import TrainConfig

        return TrainConfig(self.learning_rate, self.momentum, self.batch_size, self.lr_decay,
                           self.decay_every, self.patience, self.max_epochs, seed)

    def network_spec(self, M, n_classes):
        from .learner import NetworkSpec

        if self.architecture == "large":
            return NetworkSpec.large(M, n_classes)
        return NetworkSpec((M, M, 3), n_classes, tuple(self.conv_filters), self.kernel,
                           tuple(tuple(x) for x in self.fc))


@dataclass(frozen=True)
class SaBlock:
    iterations: int = 200
    initial_temperature: float | None = None
    cooling_factor: float = 0.95
    moves_per_temperature: int = 50
    distance_bound: float = math.inf
    candidates: int = 8
    K: int | None = None

    def sa_config(self, seed):
        from .sa2d import SaConfig

        return SaConfig(self.iterations, self.initial_temperature, self.cooling_factor,
                        self.moves_per_temperature, self.distance_bound, seed)

    def validate(self):
        try:
            self.sa_config(0)
        except ValueError as exc:
            raise ConfigError(f"sa: {exc}") from exc
        _check(self.candidates >= 1, "sa.candidates must be >= 1")


@dataclass(frozen=True)
class EvaluationBlock:
    policies: tuple = ("best_crb", "greedy", "random", "full_array")
    snr_list: tuple | None = (20.0,)
    snapshots_list: tuple | None = None
    snr_db: float = 20.0
    T: int = 100
    J_T: int = 100
    direction_deg: tuple | None = None
    grid_step_deg: float = 1.0
    fixed_label: tuple | None = None
    test_snr_list: tuple = (0.0, 10.0, 20.0)
    test_P: int = 60
    test_L: int = 5
    workers: int = 1

    def validate(self):
        from .doa import POLICIES

        for p in self.policies:
            _check(p in POLICIES, f"evaluation.policies: unknown policy {p!r}")
        _check((self.snr_list is None) != (self.snapshots_list is None),
               "evaluation: give exactly one of snr_list or snapshots_list")
        _check(self.J_T >= 1 and self.T >= 1, "evaluation.J_T and T must be >= 1")
        _check(self.grid_step_deg > 0, "evaluation.grid_step_deg must be positive")
        _check("fixed" not in self.policies or self.fixed_label is not None,
               "evaluation.fixed_label is required for the fixed policy")
        _check(self.workers >= 1, "evaluation.workers must be >= 1")


@dataclass(frozen=True)
class ScanBlock:
    scans: int = 100
    refresh_period: int = 10
    start_phi_deg: float = 30.0
    drift_deg_per_scan: float = 0.5
    snr_db: float = 20.0
    T: int = 100
    fixed_label: tuple | None = None
    selector: str = "best_crb"

    def validate(self):
        _check(self.scans >= 1 and self.refresh_period >= 1 and self.T >= 1, "scan sizes must be >= 1")
        _check(self.selector in ("cnn", "best_crb", "fixed"), "scan.selector must be cnn, best_crb or fixed")


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: dict = field(default_factory=lambda: {"kind": "UCA", "M": 10, "spacing": 0.5})
    selection: SelectionBlock = SelectionBlock()
    dataset: DatasetBlock = DatasetBlock()
    training: TrainingBlock = TrainingBlock()
    sa: SaBlock = SaBlock()
    evaluation: EvaluationBlock = EvaluationBlock()
    scan: ScanBlock = ScanBlock()
    seed: int = 0
    output_dir: str | None = None

    def validate(self):
        unknown = set(self.geometry) - GEOMETRY_KEYS
        _check(not unknown, f"geometry: unknown keys {sorted(unknown)}")
        _check("kind" in self.geometry, "geometry.kind is required")
        for block in (self.selection, self.dataset, self.training, self.sa, self.evaluation, self.scan):
            block.validate()
        _check(isinstance(self.seed, int) and self.seed >= 0, "seed must be a non-negative integer")
        self.make_geometry()
        return self

    def make_geometry(self):
        from .geometry import geometry_from_config

        try:
            return geometry_from_config(self.geometry)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"geometry: {exc}") from exc

    def to_dict(self):
        return _plain(dataclasses.asdict(self))


BLOCKS = {"selection": SelectionBlock, "dataset": DatasetBlock, "training": TrainingBlock, "sa": SaBlock,
          "evaluation": EvaluationBlock, "scan": ScanBlock}


def _check(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def _coerce(value, default, name):
    """Shape YAML values like the dataclass default (lists -> tuples, 'inf' -> float)."""
    if isinstance(value, str) and value.lower() in ("inf", "+inf", "-inf", ".inf"):
        return float(value.replace(".", ""))
    if isinstance(value, list):
        return tuple(_coerce(v, None, name) for v in value)
    if isinstance(default, float) and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if default is not None and value is not None:
        num = (int, float)
        if isinstance(default, bool) != isinstance(value, bool):
            raise ConfigError(f"{name}: expected {type(default).__name__}, got {value!r}")
        if isinstance(default, num) and not isinstance(value, num):
            raise ConfigError(f"{name}: expected a number, got {value!r}")
        if isinstance(default, str) and not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string, got {value!r}")
    return value


def _build_block(cls, data, name):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{name} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"{name}: unknown keys {sorted(unknown)}")
    defaults = cls()
    kwargs = {k: _coerce(v, getattr(defaults, k), f"{name}.{k}") for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def from_dict(data):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    allowed = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown top-level keys {sorted(unknown)}")
    kwargs = {}
    for name, cls in BLOCKS.items():
        if name in data:
            kwargs[name] = _build_block(cls, data[name], name)
    if "geometry" in data:
        if not isinstance(data["geometry"], dict):
            raise ConfigError("geometry must be a mapping")
        kwargs["geometry"] = {k: _coerce(v, None, f"geometry.{k}") for k, v in data["geometry"].items()}
    if "seed" in data:
        if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
            raise ConfigError("seed must be an integer")
        kwargs["seed"] = data["seed"]
    if "output_dir" in data:
        kwargs["output_dir"] = None if data["output_dir"] is None else str(data["output_dir"])
    return ExperimentConfig(**kwargs).validate()


def parse_text(text):
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"config is not valid YAML: {exc}") from exc
    return {} if data is None else data


def apply_override(data, assignment):
    """Apply ``a.b.c=value`` (value parsed as YAML) to a nested mapping in place."""
    if "=" not in assignment:
        raise ConfigParseError(f"override {assignment!r} is not key=value")
    key, raw = assignment.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigParseError(f"override {assignment!r}: {exc}") from exc
    parts = key.strip().split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key}: {p} is not a mapping")
    node[parts[-1]] = value


def load(path=None, overrides=(), seed=None, out=None):
    """Read, override and validate. Returns ``(config, digest)``.

    ``digest`` is the sha256 of the canonical effective configuration.
    """
    data = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = parse_text(fh.read())
        except OSError as exc:
            raise ConfigParseError(f"cannot read config {path}: {exc}") from exc
    data = copy.deepcopy(data)
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    for ov in overrides:
        apply_override(data, ov)
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output_dir"] = out
    elif data.get("output_dir") is None and os.environ.get(OUT_ENV):
        data["output_dir"] = os.environ[OUT_ENV]
    cfg = from_dict(data)
    if cfg.output_dir is None:
        cfg = dataclasses.replace(cfg, output_dir="out")
    return cfg, digest(cfg)


def digest(cfg):
    # the output location does not change any numeric result
    d = cfg.to_dict()
    d.pop("output_dir", None)
    text = yaml.safe_dump(d, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()
