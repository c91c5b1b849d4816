"""Scenario configuration: dataclass tree, file loading, validation.

Config files are YAML (JSON works too) mirroring the dataclass fields;
unknown keys anywhere in the tree are errors. The default values mirror
the reference deployment: ten vehicles at 45 km/h on a 4x4 grid of
100 m cells, two stations at (50,50) and (350,350) with 300 m radius,
3.2/2.6 GHz MEC CPUs, 28/30 MHz bandwidth, 23 dBm devices, 34 dBm
stations, path-loss exponent 5 and -174 dBm noise.
"""

from __future__ import annotations

import dataclasses
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigError
from .mtdagent import AgentConfig

MODES = ("MTD-FL", "FL", "FL-Attack", "RND-MTD")


@dataclass
class NetConfig:
    cells_per_side: int = 4
    cell_width: float = 100.0
    speed_kmh: float = 45.0
    speed_jitter: float = 0.2  # per-device uniform fraction around the mean
    step_seconds: float = 1.0  # mobility advance per FL iteration
    bs_positions: list = field(default_factory=lambda: [[50.0, 50.0], [350.0, 350.0]])
    bs_radius: float = 300.0
    bs_cpu_ghz: list = field(default_factory=lambda: [3.2, 2.6])
    bs_bandwidth_mhz: list = field(default_factory=lambda: [28.0, 30.0])
    bs_tx_dbm: float = 34.0
    device_tx_dbm: float = 23.0
    device_cpu_ghz_min: float = 1.9
    device_cpu_ghz_max: float = 2.4
    path_loss_coeff: float = 1.0
    path_loss_exponent: float = 5.0
    noise_dbm: float = -174.0
    min_distance: float = 1.0
    rate_log: str = "ln"  # "ln" | "log2"
    backhaul_rate: float = 1e8  # units/s between each station and the cloud

    def validate(self) -> None:
        m = len(self.bs_positions)
        if len(self.bs_cpu_ghz) != m or len(self.bs_bandwidth_mhz) != m:
            raise ConfigError("bs_cpu_ghz and bs_bandwidth_mhz must match bs_positions")
        if self.rate_log not in ("ln", "log2"):
            raise ConfigError("rate_log must be 'ln' or 'log2'")
        if not 0.0 <= self.speed_jitter < 1.0:
            raise ConfigError("speed_jitter must lie in [0, 1)")


@dataclass
class TimeConfig:
    train_cycles_per_sample: float = 5e3
    aggregate_cycles_per_unit: float = 10.0
    inference_cycles: float = 1e4
    cloud_cpu_ghz: float = 5.0
    aggregation: str = "edge+cloud"  # "edge+cloud" | "edge-only"

    def validate(self) -> None:
        if self.aggregation not in ("edge+cloud", "edge-only"):
            raise ConfigError("aggregation must be 'edge+cloud' or 'edge-only'")


@dataclass
class FlConfig:
    feature_width: int = 16
    hidden_width: int = 0  # 0 = linear softmax classifier
    local_epochs: int = 1
    learning_rate: float = 0.2
    batch_size: int = 32
    optimizer: str = "sgd"
    loss: str = "mse"  # "mse" | "cross_entropy"
    weighted_aggregation: bool = True
    shard_total_min: int = 2000  # instances spread over the devices per iteration
    shard_total_max: int = 10000
    test_size: int = 2500
    class_balance: float = 0.5
    separation: float = 4.0  # distance between the synthetic class means
    persist_model: bool = False  # keep the global model across episodes

    def validate(self) -> None:
        if not 0 < self.shard_total_min <= self.shard_total_max:
            raise ConfigError("shard totals must satisfy 0 < min <= max")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError("class_balance must lie in (0, 1)")
        if self.loss not in ("cross_entropy", "mse"):
            raise ConfigError("loss must be 'cross_entropy' or 'mse'")


@dataclass
class AdversaryConfig:
    attack: str = "attack1"  # "attack1" | "attack2" | "none"
    min_targets: int = 2
    max_targets: int = 4
    learning_rate: float = 1.0
    target_scale: float = -10.0
    noise_std: float = 0.01
    deviation_fraction: object = 1.0  # number or "auto"
    estimate_source: str = "devices"  # "devices" | "global" | "uploads"

    def validate(self) -> None:
        if self.attack not in ("attack1", "attack2", "none"):
            raise ConfigError(f"unknown attack {self.attack!r}")
        if not 0 <= self.min_targets <= self.max_targets:
            raise ConfigError("target counts must satisfy 0 <= min <= max")


@dataclass
class AnticipatorConfig:
    kind: str = "trained"  # "trained" | "oracle" | "noisy"
    arch: str = "gru"
    hidden: int = 8
    window: int = 10
    epochs: int = 30
    learning_rate: float = 5e-3
    batch_size: int = 32
    loss: str = "mse"  # "mse" | "cross_entropy"
    noisy_fp: float = 0.24
    noisy_fn: float = 0.27
    train_sequences: int = 400  # per class, for the synthetic trainer
    snr: float = 3.0  # attack-family shift in the synthetic traffic
    feature_width: int = 16
    history_length: int = 30  # benign events per device at episode start
    benign_events_per_iteration: int = 2
    checkpoint: str | None = None  # load instead of training when set

    def validate(self) -> None:
        if self.kind not in ("trained", "oracle", "noisy"):
            raise ConfigError(f"unknown anticipator kind {self.kind!r}")
        if self.arch not in ("gru", "lstm"):
            raise ConfigError("arch must be 'gru' or 'lstm'")
        if self.history_length < self.window:
            raise ConfigError("history_length must cover at least one window")


@dataclass
class ScenarioConfig:
    seed: int  # mandatory: every stream in a run derives from it
    n_devices: int = 10
    episodes: int = 400
    iterations: int = 5  # FL rounds per episode
    runs: int = 1  # independent seeded repetitions
    modes: list = field(default_factory=lambda: ["MTD-FL"])
    rnd_block: int = 2  # devices blocked per iteration by RND-MTD
    out_dir: str | None = None
    net: NetConfig = field(default_factory=NetConfig)
    time: TimeConfig = field(default_factory=TimeConfig)
    fl: FlConfig = field(default_factory=FlConfig)
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    anticipator: AnticipatorConfig = field(default_factory=AnticipatorConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)

    def validate(self) -> None:
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        if self.n_devices < 1 or self.iterations < 1 or self.episodes < 1 or self.runs < 1:
            raise ConfigError("counts must be positive")
        for mode in self.modes:
            parse_mode(mode)
        if self.adversary.max_targets > self.n_devices:
            raise ConfigError("cannot compromise more devices than exist")
        if not 0 <= self.rnd_block <= self.n_devices:
            raise ConfigError("rnd_block must lie in [0, n_devices]")
        self.net.validate()
        self.time.validate()
        self.fl.validate()
        self.adversary.validate()
        self.anticipator.validate()


def parse_mode(mode: str) -> tuple[str, int | None]:
    """Split 'RND-MTD(4)' into ('RND-MTD', 4); plain modes carry None."""
    match = re.fullmatch(r"RND-MTD\((\d+)\)", mode)
    if match:
        return "RND-MTD", int(match.group(1))
    if mode in MODES:
        return mode, None
    raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES}")


def _build_dataclass(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'} must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        where = f" in {path}" if path else ""
        raise ConfigError(f"unknown config key(s){where}: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"bad {path or 'config'} section: {exc}") from exc


_SECTION_TYPES = {
    "net": NetConfig,
    "time": TimeConfig,
    "fl": FlConfig,
    "adversary": AdversaryConfig,
    "anticipator": AnticipatorConfig,
    "agent": AgentConfig,
}


def config_from_mapping(data: dict) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a mapping")
    top_names = {f.name for f in dataclasses.fields(ScenarioConfig)}
    unknown = sorted(set(data) - top_names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name in _SECTION_TYPES:
            kwargs[name] = _build_dataclass(_SECTION_TYPES[name], value, name)
        else:
            kwargs[name] = value
    if "seed" not in kwargs:
        raise ConfigError("seed is mandatory")
    try:
        cfg = ScenarioConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    cfg.validate()
    return cfg


def load_config(path) -> ScenarioConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if data is None:
        data = {}
    return config_from_mapping(data)


def config_to_mapping(cfg: ScenarioConfig) -> dict:
    return dataclasses.asdict(cfg)


def dump_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config_to_mapping(cfg), indent=2, sort_keys=True))
