"""Declarative run configuration.

A run is described by one YAML (or JSON) mapping with an explicit
schema_version. Parsing is strict: unknown keys are errors, scalar per-client
settings broadcast to the client count, and short per-client lists cycle.
`RunConfig.resolved()` returns the fully expanded form, and serialization is
canonical, so parse -> serialize -> parse is the identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import yaml

from .errors import ConfigError
from .variants import VARIANTS

SCHEMA_VERSION = 1

# Nominal MB/s speed profile for ten heterogeneous clients; download speeds
# cycle when the client count exceeds the list.
DEFAULT_CLIENT_UPLOAD = [5.0, 4.0, 3.0, 2.5, 1.5, 1.0, 0.6, 0.5, 0.5, 0.4]
DEFAULT_CLIENT_DOWNLOAD = [20.0, 18.0, 12.0, 10.0, 6.0, 4.0]


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_keys(section: str, d: dict, allowed: set[str]) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {section}: {sorted(unknown)}")


def _per_client(name: str, value: Any, count: int,
                lo: float = 0.0, lo_inclusive: bool = False,
                hi: float | None = None) -> list[float]:
    """Broadcast a scalar, or cycle/truncate a list, to one value per client.

    One rule for every list length: entry i goes to client i mod len. That
    lets the bundled 10-entry speed profiles serve any client count.
    """
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        out = [float(value)] * count
    elif isinstance(value, (list, tuple)):
        vals = [float(v) for v in value]
        _require(len(vals) >= 1, f"{name} cannot be empty")
        out = [vals[i % len(vals)] for i in range(count)]
    else:
        raise ConfigError(f"{name} must be a number or a list of numbers")
    for v in out:
        ok = v >= lo if lo_inclusive else v > lo
        _require(ok, f"{name} entries must be {'>=' if lo_inclusive else '>'} {lo}")
        if hi is not None:
            _require(v <= hi, f"{name} entries must be <= {hi}")
    return out


@dataclass
class ModelConfig:
    features: int = 16
    hidden: list[int] = field(default_factory=lambda: [64])
    classes: int = 4


@dataclass
class DataConfig:
    seed: int | None = None          # None: use the master seed
    samples_per_client: int = 200
    test_samples: int = 1000
    separation: float = 4.0
    modes_per_class: int = 2
    noise: float = 1.0
    partition: str = "label-skew"
    skew_alpha: float = 0.5


@dataclass
class TrainConfig:
    lr_schedule: dict = field(default_factory=lambda: {"type": "constant", "lr": 0.25})
    batch_size: int = 20
    local_iterations: int = 5


@dataclass
class DensityConfig:
    rho_min: Any = 0.1               # scalar or per-client list
    delta_rho: float = 0.2
    pruning_interval: int = 50
    patience: int = 10               # per-client stall detectors (recovery)
    global_patience: int | None = None   # run-termination detector; None: same
    min_delta: float = 0.001
    policy: str = "global"


@dataclass
class AggregationConfig:
    beta: float = 0.5                # staleness discount exponent
    eta_g: float = 1.0               # server blend step for tick aggregation
    alpha: float = 0.6               # mixing rate for per-arrival / window updates


@dataclass
class NetworkConfig:
    server_upload: float = 20.0
    server_download: float = 100.0
    server_sigma: float = 0.1
    client_upload: Any = field(default_factory=lambda: list(DEFAULT_CLIENT_UPLOAD))
    client_download: Any = field(default_factory=lambda: list(DEFAULT_CLIENT_DOWNLOAD))
    client_sigma: float = 0.3


@dataclass
class ComputeConfig:
    per_iteration_cost: float = 0.0005   # seconds per local step on a dense model
    client_factors: Any = 1.0            # scalar or per-client list


@dataclass
class ScheduleConfig:
    delta_t: float | None = None     # None: median first-round latency
    t_merge: float = 0.0
    t_max: float | None = None
    round_budget: int | None = 200
    report_interval: int = 1


@dataclass
class RunConfig:
    variant: str = "PR-FL"
    seed: int = 0
    clients: int = 10
    name: str = "run"
    output: str = "runs"
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    density: DensityConfig = field(default_factory=DensityConfig)
    aggregation: AggregationConfig = field(default_factory=AggregationConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    compute: ComputeConfig = field(default_factory=ComputeConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)

    def resolved(self) -> "RunConfig":
        """Validated copy with every per-client field expanded to length
        `clients` and the data seed pinned."""
        cfg = dataclasses.replace(
            self,
            model=dataclasses.replace(self.model),
            data=dataclasses.replace(self.data),
            train=dataclasses.replace(self.train),
            density=dataclasses.replace(self.density),
            aggregation=dataclasses.replace(self.aggregation),
            network=dataclasses.replace(self.network),
            compute=dataclasses.replace(self.compute),
            schedule=dataclasses.replace(self.schedule),
        )
        _require(cfg.variant in VARIANTS,
                 f"unknown variant {cfg.variant!r}; pick one of {sorted(VARIANTS)}")
        _require(cfg.clients >= 1, "clients must be positive")
        _require(isinstance(cfg.seed, int), "seed must be an integer")
        _require(bool(cfg.name), "name cannot be empty")

        m = cfg.model
        _require(m.features >= 1, "model.features must be positive")
        _require(m.classes >= 2, "model.classes needs at least two classes")
        _require(isinstance(m.hidden, list) and len(m.hidden) >= 1,
                 "model.hidden must be a non-empty list")
        _require(all(isinstance(h, int) and h >= 1 for h in m.hidden),
                 "model.hidden entries must be positive integers")

        d = cfg.data
        if d.seed is None:
            d.seed = cfg.seed
        _require(isinstance(d.seed, int), "data.seed must be an integer")
        _require(d.samples_per_client >= 1, "data.samples_per_client must be positive")
        _require(d.test_samples >= 1, "data.test_samples must be positive")
        _require(d.separation >= 0, "data.separation must be non-negative")
        _require(d.modes_per_class >= 1, "data.modes_per_class must be positive")
        _require(d.noise >= 0, "data.noise must be non-negative")
        _require(d.partition in ("iid", "label-skew"),
                 f"unknown partition mode {d.partition!r}")
        _require(d.skew_alpha > 0, "data.skew_alpha must be positive")

        t = cfg.train
        make_lr_schedule(t.lr_schedule)  # raises on a malformed schedule
        _require(t.batch_size >= 1, "train.batch_size must be positive")
        _require(t.local_iterations >= 0, "train.local_iterations must be non-negative")

        dn = cfg.density
        dn.rho_min = _per_client("density.rho_min", dn.rho_min, cfg.clients, hi=1.0)
        _require(0 < dn.delta_rho <= 1, "density.delta_rho must be in (0, 1]")
        _require(dn.pruning_interval >= 1, "density.pruning_interval must be positive")
        _require(dn.patience >= 1, "density.patience must be positive")
        if dn.global_patience is None:
            dn.global_patience = dn.patience
        _require(dn.global_patience >= 1, "density.global_patience must be positive")
        _require(dn.min_delta >= 0, "density.min_delta must be non-negative")
        _require(dn.policy in ("global", "layer"),
                 f"unknown pruning policy {dn.policy!r}")

        a = cfg.aggregation
        _require(a.beta >= 0, "aggregation.beta must be non-negative")
        _require(0 < a.eta_g <= 1, "aggregation.eta_g must be in (0, 1]")
        _require(0 < a.alpha <= 1, "aggregation.alpha must be in (0, 1]")

        nw = cfg.network
        _require(nw.server_upload > 0 and nw.server_download > 0,
                 "server speeds must be positive")
        _require(nw.server_sigma >= 0, "network.server_sigma must be non-negative")
        _require(nw.client_sigma >= 0, "network.client_sigma must be non-negative")
        nw.client_upload = _per_client("network.client_upload", nw.client_upload,
                                       cfg.clients)
        nw.client_download = _per_client("network.client_download",
                                         nw.client_download, cfg.clients)

        cp = cfg.compute
        _require(cp.per_iteration_cost >= 0,
                 "compute.per_iteration_cost must be non-negative")
        cp.client_factors = _per_client("compute.client_factors", cp.client_factors,
                                        cfg.clients)

        s = cfg.schedule
        if s.delta_t is not None:
            _require(s.delta_t > 0, "schedule.delta_t must be positive")
        _require(s.t_merge >= 0, "schedule.t_merge must be non-negative")
        if s.t_max is not None:
            _require(s.t_max > 0, "schedule.t_max must be positive")
        if s.round_budget is not None:
            _require(s.round_budget >= 1, "schedule.round_budget must be positive")
        _require(s.t_max is not None or s.round_budget is not None,
                 "set schedule.round_budget or schedule.t_max; otherwise the run never ends")
        _require(s.report_interval >= 1, "schedule.report_interval must be positive")
        return cfg

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"schema_version": SCHEMA_VERSION}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = dataclasses.asdict(v) if dataclasses.is_dataclass(v) else v
        return out


_SECTIONS: dict[str, type] = {
    "model": ModelConfig,
    "data": DataConfig,
    "train": TrainConfig,
    "density": DensityConfig,
    "aggregation": AggregationConfig,
    "network": NetworkConfig,
    "compute": ComputeConfig,
    "schedule": ScheduleConfig,
}
_TOP_KEYS = {"schema_version", "variant", "seed", "clients", "name", "output",
             *_SECTIONS}


def config_from_dict(raw: dict) -> RunConfig:
    """Strict parse of a raw mapping into a resolved RunConfig."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    _check_keys("config", raw, _TOP_KEYS)
    _require("schema_version" in raw, "config must declare schema_version")
    _require(raw["schema_version"] == SCHEMA_VERSION,
             f"unsupported schema_version {raw['schema_version']!r} "
             f"(this build reads {SCHEMA_VERSION})")
    kwargs: dict[str, Any] = {}
    for key in ("variant", "seed", "clients", "name", "output"):
        if key in raw:
            kwargs[key] = raw[key]
    for key, cls in _SECTIONS.items():
        if key not in raw:
            continue
        section = raw[key]
        if not isinstance(section, dict):
            raise ConfigError(f"section {key!r} must be a mapping")
        names = {f.name for f in dataclasses.fields(cls)}
        _check_keys(key, section, names)
        kwargs[key] = cls(**section)
    try:
        cfg = RunConfig(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e)) from None
    return cfg.resolved()


def load_config(path: str | Path) -> RunConfig:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = yaml.safe_load(p.read_text())
    except yaml.YAMLError as e:
        raise ConfigError(f"could not parse {p}: {e}") from None
    return config_from_dict(raw)


def dumps_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True, default_flow_style=False)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(dumps_config(cfg))


def make_lr_schedule(spec: dict) -> Callable[[int], float]:
    """Learning-rate schedule from its declarative form.

    constant: {type: constant, lr}
    exp_decay: {type: exp_decay, lr, decay, decay_rounds}, giving
    lr * decay ** (round / decay_rounds).
    """
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigError("lr_schedule must be a mapping with a 'type'")
    kind = spec["type"]
    if kind == "constant":
        _check_keys("lr_schedule", spec, {"type", "lr"})
        lr = float(spec.get("lr", 0.25))
        _require(lr > 0, "lr must be positive")
        return lambda r: lr
    if kind == "exp_decay":
        _check_keys("lr_schedule", spec, {"type", "lr", "decay", "decay_rounds"})
        lr = float(spec.get("lr", 0.25))
        decay = float(spec.get("decay", 0.5))
        rounds = float(spec.get("decay_rounds", 10000))
        _require(lr > 0, "lr must be positive")
        _require(0 < decay <= 1, "decay must be in (0, 1]")
        _require(rounds > 0, "decay_rounds must be positive")
        return lambda r: lr * decay ** (r / rounds)
    raise ConfigError(f"unknown lr_schedule type {kind!r}")
