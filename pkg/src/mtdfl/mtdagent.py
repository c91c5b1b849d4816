"""Topology-mutation agent: per-device Q-networks over the network state.

The state is a fixed-order concatenation of the normalized rate matrix,
station and device CPU vectors, the current participation vector and the
anticipation profile. Each device owns a two-headed Q-network (head 0:
participate, head 1: abstain). Selection is the scheme's inverted
epsilon-greedy: exploit the argmax head with probability epsilon,
otherwise draw a fair random bit. A hard confidence mask then zeroes
every device whose anticipated-Byzantine probability reaches the
threshold; the agent still learns from its unmasked proposal, with the
zero reward signalling the violation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensorkit as tk
from .anticipator import AnticipationProfile
from .errors import ConfigError, InvalidStateError, TrainingError
from .netmodel import NetworkSnapshot


@dataclass(frozen=True)
class AgentConfig:
    discount: float = 0.1
    exploit_start: float = 0.1  # epsilon at the first episode
    exploit_final: float = 0.98  # epsilon at the last episode
    loss_weight: float = 1.0  # alpha in the round objective
    time_weight: float = 1.0  # beta in the round objective
    confidence_threshold: float = 0.75  # C_H
    learning_rate: float = 1e-3
    hidden_width: int = 16
    reward_cap: float = 1e9  # reward when the round objective is ~0 (degenerate)
    force_participant: bool = True  # never execute an empty topology
    literal_softmax_head: bool = False  # softmax on the Q outputs instead of linear
    mask_next_max: bool = False  # exclude masked actions from the bootstrap max

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise ConfigError("discount must lie in [0, 1)")
        if not (0.0 <= self.exploit_start <= 1.0 and 0.0 <= self.exploit_final <= 1.0):
            raise ConfigError("exploit probabilities must lie in [0, 1]")
        if not 0.0 < self.confidence_threshold <= 1.0:
            raise ConfigError("confidence_threshold must lie in (0, 1]")


@dataclass
class TopologyVector:
    bits: np.ndarray  # (N,) 0/1
    iteration: int

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.int64)
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise InvalidStateError("topology bits must be 0/1")

    def participants(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.bits)]

    def copy(self) -> "TopologyVector":
        return TopologyVector(self.bits.copy(), self.iteration)


def state_length(n_devices: int, n_stations: int) -> int:
    return n_devices * n_stations + n_stations + 3 * n_devices


@dataclass(frozen=True)
class StateScales:
    """Normalization constants for the state features."""

    max_rate: float
    max_cpu: float

    def __post_init__(self):
        if self.max_rate <= 0 or self.max_cpu <= 0:
            raise ConfigError("state scales must be positive")


def build_state(
    snapshot: NetworkSnapshot,
    topology: TopologyVector,
    profile: AnticipationProfile,
    scales: StateScales,
) -> np.ndarray:
    """Flatten [rates || bs cpu || dev cpu || topology || profile] into [0,1]."""
    n, m = snapshot.rate_matrix.shape
    if len(topology.bits) != n or len(profile.probs) != n:
        raise InvalidStateError("topology and profile must cover every device")
    rates = np.clip(snapshot.rate_matrix.ravel() / scales.max_rate, 0.0, 1.0)
    bs_cpu = np.clip(snapshot.bs_cpu / scales.max_cpu, 0.0, 1.0)
    dev_cpu = np.clip(snapshot.dev_cpu / scales.max_cpu, 0.0, 1.0)
    state = np.concatenate(
        [rates, bs_cpu, dev_cpu, topology.bits.astype(float), profile.probs]
    )
    assert state.size == state_length(n, m)
    return state


class PolicySet:
    """One two-headed Q-network per device, with a private Adam state each."""

    def __init__(self, nets: list[tk.DenseNet], learning_rate: float):
        self.nets = nets
        self.opts = [tk.Adam(learning_rate) for _ in nets]

    @classmethod
    def new(
        cls,
        rng: np.random.Generator,
        n_devices: int,
        state_dim: int,
        cfg: AgentConfig,
    ) -> "PolicySet":
        head = "softmax" if cfg.literal_softmax_head else "identity"
        nets = [
            tk.DenseNet.new(rng, [state_dim, cfg.hidden_width, 2], ["softmax", head])
            for _ in range(n_devices)
        ]
        return cls(nets, cfg.learning_rate)

    def __len__(self) -> int:
        return len(self.nets)

    def q_values(self, device: int, state: np.ndarray) -> np.ndarray:
        return self.nets[device].predict(state[None, :])[0]

    def save(self, path_prefix) -> None:
        for i, net in enumerate(self.nets):
            tk.save_params(
                f"{path_prefix}.dev{i}.json",
                kind="policy",
                params=net.param_dict(),
                meta={"device": i},
            )


def select_topology(
    policies: PolicySet,
    state: np.ndarray,
    exploit_prob: float,
    rng: np.random.Generator,
    iteration: int = 0,
) -> TopologyVector:
    """Independent per-device decision: argmax head w.p. epsilon, else a fair bit.

    A Q-value tie resolves to participation (head 0).
    """
    if not 0.0 <= exploit_prob <= 1.0:
        raise ConfigError("exploit_prob must lie in [0, 1]")
    bits = np.zeros(len(policies), dtype=np.int64)
    for u in range(len(policies)):
        if rng.random() < 1.0 - exploit_prob:
            bits[u] = int(rng.integers(0, 2))
        else:
            q = policies.q_values(u, state)
            bits[u] = 1 if q[0] >= q[1] else 0
    return TopologyVector(bits, iteration)


def enforce_confidence(
    proposed: TopologyVector,
    profile: AnticipationProfile,
    threshold: float,
) -> TopologyVector:
    """Zero the bit of every device anticipated Byzantine at or above the threshold."""
    if len(proposed.bits) != len(profile.probs):
        raise InvalidStateError("topology and profile lengths differ")
    masked = proposed.bits * (profile.probs < threshold)
    return TopologyVector(masked.astype(np.int64), proposed.iteration)


def violates_confidence(
    topology: TopologyVector,
    profile: AnticipationProfile,
    threshold: float,
) -> bool:
    return bool(np.any((topology.bits == 1) & (profile.probs >= threshold)))


def compute_reward(
    losses: list[float],
    times: list[float],
    topology: TopologyVector,
    profile: AnticipationProfile,
    cfg: AgentConfig,
) -> float:
    """Zero on a confidence violation, else the inverse round objective.

    `losses` and `times` cover exactly the executed participants (already
    normalized by the caller's running maxima).
    """
    if violates_confidence(topology, profile, cfg.confidence_threshold):
        return 0.0
    total = sum(
        cfg.loss_weight * f + cfg.time_weight * t for f, t in zip(losses, times, strict=True)
    )
    if total < 1e-9:
        return cfg.reward_cap
    return 1.0 / total


@dataclass
class Transition:
    state: np.ndarray
    topology: TopologyVector  # the agent's unmasked proposal
    reward: float
    next_state: np.ndarray | None  # None marks a terminal transition


def bellman_update(
    policies: PolicySet,
    transition: Transition,
    discount: float,
    mask_next: np.ndarray | None = None,
) -> float:
    """One temporal-difference step on every device network.

    The taken head's target is r + discount * max_a Q(next, a), or r at
    a terminal transition; the squared error on that head alone drives
    the gradient step. Returns the mean TD loss across devices.
    """
    if not np.isfinite(transition.reward):
        raise TrainingError("reward is not finite")
    td_losses = []
    for u in range(len(policies)):
        net = policies.nets[u]
        if transition.next_state is None:
            target = transition.reward
        else:
            next_q = policies.q_values(u, transition.next_state)
            if mask_next is not None and mask_next[u]:
                # Participation is masked next step; bootstrap from abstain only.
                best = next_q[1]
            else:
                best = float(np.max(next_q))
            target = transition.reward + discount * best
        if not np.isfinite(target):
            raise TrainingError(f"non-finite Bellman target for device {u}")
        action = 0 if transition.topology.bits[u] == 1 else 1
        q, caches = net.forward(transition.state[None, :])
        diff = q[0, action] - target
        td_losses.append(diff * diff)
        dq = np.zeros_like(q)
        dq[0, action] = 2.0 * diff
        grads, _ = net.backward(caches, dq)
        policies.opts[u].step(net.param_dict(), grads)
    return float(np.mean(td_losses))


def epsilon_at(episode: int, episodes_total: int, cfg: AgentConfig) -> float:
    """Linear exploit-probability ramp across the training episodes."""
    if episodes_total <= 1:
        return cfg.exploit_final
    frac = min(max(episode / (episodes_total - 1), 0.0), 1.0)
    return cfg.exploit_start + (cfg.exploit_final - cfg.exploit_start) * frac
