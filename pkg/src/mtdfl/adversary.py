"""Device compromise, malicious traffic injection, and upload poisoning.

Two poisoning strategies:

* Attack 1 pulls the upload toward a scaled copy of the adversary's
  global-model estimate (default scale -10, full step, small Gaussian
  noise per compromised device).
* Attack 2 shifts every coordinate off the cross-device mean by a
  fraction of the per-coordinate standard deviation; the fraction can be
  fixed or derived from the participant/attacker counts through the
  supporter-quantile rule (all compromised devices then upload the same
  vector).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .anticipator import EventSequence
from .errors import ConfigError, DegenerateStatisticsError
from .flengine import ModelParams, RoundResult


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "attack1"  # "attack1" | "attack2" | "none"
    learning_rate: float = 1.0  # attack1 step toward the target model
    target_scale: float = -10.0  # attack1 target = scale * global estimate
    noise_std: float = 0.01  # attack1 per-dimension Gaussian noise
    deviation_fraction: float | str = 1.0  # attack2 z, or "auto"
    # What the adversary averages to estimate the global model:
    #   devices - every device's weights as the adversary knows them (its
    #             victims' freshly trained models, the distributed global
    #             for everyone else)
    #   uploads - honest post-training uploads it intercepts
    #   global  - the distributed global alone
    estimate_source: str = "devices"

    def __post_init__(self):
        if self.kind not in ("attack1", "attack2", "none"):
            raise ConfigError(f"unknown attack kind {self.kind!r}")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be >= 0")
        if isinstance(self.deviation_fraction, str) and self.deviation_fraction != "auto":
            raise ConfigError("deviation_fraction must be a number or 'auto'")
        if self.estimate_source not in ("devices", "global", "uploads"):
            raise ConfigError(f"unknown estimate source {self.estimate_source!r}")


@dataclass
class CompromisePlan:
    """Devices under adversary control for one episode."""

    compromised: tuple[int, ...]
    active_from: int = 1  # first iteration with poisoned uploads
    activation: dict[int, tuple[int, ...]] = field(default_factory=dict)

    def active_at(self, iteration: int) -> tuple[int, ...]:
        if iteration in self.activation:
            return self.activation[iteration]
        return self.compromised if iteration >= self.active_from else ()

    def to_json(self) -> dict:
        return {
            "compromised": list(self.compromised),
            "active_from": self.active_from,
            "activation": {str(k): list(v) for k, v in self.activation.items()},
        }

    @classmethod
    def from_json(cls, doc: dict) -> "CompromisePlan":
        return cls(
            compromised=tuple(doc["compromised"]),
            active_from=int(doc.get("active_from", 1)),
            activation={
                int(k): tuple(v) for k, v in doc.get("activation", {}).items()
            },
        )


def draw_compromise_plan(
    device_ids: list[int],
    rng: np.random.Generator,
    min_targets: int = 2,
    max_targets: int = 4,
) -> CompromisePlan:
    """Pick this episode's victim set uniformly among the devices."""
    if not (0 <= min_targets <= max_targets <= len(device_ids)):
        raise ConfigError("compromise counts must satisfy 0 <= min <= max <= N")
    count = int(rng.integers(min_targets, max_targets + 1))
    picked = rng.choice(len(device_ids), size=count, replace=False)
    return CompromisePlan(compromised=tuple(sorted(device_ids[i] for i in picked)))


def craft_attack1(
    global_estimate: ModelParams,
    cfg: AttackConfig,
    rng: np.random.Generator,
) -> ModelParams:
    """Step from the estimate toward scale*estimate, plus Gaussian noise."""
    g = global_estimate.vector
    if not np.all(np.isfinite(g)):
        raise DegenerateStatisticsError("global estimate contains non-finite values")
    target = cfg.target_scale * g
    poisoned = g + cfg.learning_rate * (target - g)
    if cfg.noise_std > 0:
        poisoned = poisoned + rng.normal(0.0, cfg.noise_std, size=g.shape)
    return ModelParams(poisoned, global_estimate.layout)


def little_enough_fraction(n_workers: int, n_corrupted: int) -> float:
    """Deviation fraction from the supporter-count quantile rule.

    With n workers of which m are corrupted, s = floor(n/2 + 1) - m benign
    supporters must stay within the deviation for a majority, giving
    z = Phi^-1((n - m - s) / (n - m)).
    """
    if n_workers < 2 or not (0 < n_corrupted < n_workers):
        raise DegenerateStatisticsError("need n >= 2 and 0 < m < n for the fraction rule")
    supporters = int(np.floor(n_workers / 2.0 + 1)) - n_corrupted
    quantile = (n_workers - n_corrupted - supporters) / (n_workers - n_corrupted)
    quantile = min(max(quantile, 1e-6), 1.0 - 1e-6)
    return NormalDist().inv_cdf(quantile)


def craft_attack2(
    device_models: list[ModelParams],
    z: float | str,
    n_corrupted: int | None = None,
) -> ModelParams:
    """mean - z*std per dimension over the devices' models (population std)."""
    if len(device_models) < 2:
        raise DegenerateStatisticsError("attack 2 needs at least two models")
    layout = device_models[0].layout
    stacked = np.stack([m.vector for m in device_models])
    if z == "auto":
        if n_corrupted is None:
            raise ConfigError("auto deviation fraction needs the corrupted count")
        z = little_enough_fraction(len(device_models) + n_corrupted, n_corrupted)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)  # population std
    return ModelParams(mean - float(z) * std, layout)


def inject_attack_traffic(
    log: EventSequence,
    flow_features: np.ndarray,
    flow_labels: np.ndarray,
    window: int = 10,
) -> EventSequence:
    """Append one attack flow (window+1 events, attack-labeled last) to a log."""
    flow_features = np.asarray(flow_features, dtype=float)
    flow_labels = np.asarray(flow_labels, dtype=int)
    if len(flow_features) != window + 1 or len(flow_labels) != window + 1:
        raise ConfigError(
            f"attack flow must have {window + 1} events, got {len(flow_features)}"
        )
    if flow_labels[-1] != 1:
        raise ConfigError("attack flow must end in an attack-labeled event")
    return log.extended(flow_features, flow_labels)


def estimate_global_model(
    cfg: AttackConfig,
    victim_models: list[ModelParams],
    honest_uploads: list[ModelParams],
    distributed_global: ModelParams | None,
    n_devices: int | None,
) -> ModelParams:
    """The adversary's view of the global model, per its estimate source.

    "devices" averages over every device: the victims' own trained
    weights (fully visible to the adversary) and, for every other
    device, the distributed global those devices are holding.
    """
    if cfg.estimate_source == "global" and distributed_global is not None:
        return distributed_global
    if (
        cfg.estimate_source == "devices"
        and distributed_global is not None
        and n_devices is not None
    ):
        known = np.stack([m.vector for m in victim_models])
        others = n_devices - len(victim_models)
        mixed = (known.sum(axis=0) + others * distributed_global.vector) / n_devices
        return ModelParams(mixed, victim_models[0].layout)
    basis = honest_uploads or victim_models
    stacked = np.stack([m.vector for m in basis])
    return ModelParams(stacked.mean(axis=0), basis[0].layout)


def poison_uploads(
    round_result: RoundResult,
    active_compromised: tuple[int, ...],
    cfg: AttackConfig,
    rng: np.random.Generator,
    distributed_global: ModelParams | None = None,
    n_devices: int | None = None,
) -> RoundResult:
    """Replace the uploads of compromised participants with crafted models.

    Attack 1 deviates from the adversary's global-model estimate (see
    estimate_global_model). Attack 2 works from the spread of the
    current honest uploads.
    """
    if cfg.kind == "none":
        return round_result
    victims = [u for u in active_compromised if u in round_result.uploads]
    if not victims:
        return round_result

    honest = [
        m for u, m in round_result.uploads.items() if u not in active_compromised
    ]
    victim_models = [round_result.uploads[v] for v in victims]

    if cfg.kind == "attack1":
        estimate = estimate_global_model(
            cfg, victim_models, honest, distributed_global, n_devices
        )
        for u in victims:
            round_result.uploads[u] = craft_attack1(estimate, cfg, rng)
    else:
        observable = honest or victim_models
        if len(observable) < 2:
            raise DegenerateStatisticsError(
                "attack 2 needs at least two observable models"
            )
        crafted = craft_attack2(
            observable, cfg.deviation_fraction, n_corrupted=len(victims)
        )
        for u in victims:
            round_result.uploads[u] = crafted.copy()
    return round_result
