"""Per-iteration recognition-time components.

A synchronous round: every participant waits for the slowest local
trainer, each base station waits for its slowest uploader before the
per-station combine, the cloud waits for the slowest forwarding station
before the final combine, and every device then downloads the new model
and runs one inference. `edge_only=True` zeroes the cloud and backhaul
legs (final aggregation happens at the edge at no extra cost).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleLinkError, InvalidStateError
from .netmodel import Device, NetworkSnapshot


@dataclass(frozen=True)
class ComputeCosts:
    train_cycles_per_sample: float  # cycles to train one sample for one epoch
    aggregate_cycles_per_unit: float  # cycles to combine one parameter unit
    inference_cycles: float  # cycles for one forward recognition
    local_epochs: int  # local passes per round
    model_size: float  # parameter units exchanged per transfer

    def __post_init__(self):
        if (
            self.train_cycles_per_sample <= 0
            or self.aggregate_cycles_per_unit <= 0
            or self.inference_cycles <= 0
            or self.model_size < 0
        ):
            raise InvalidStateError("compute costs must be positive")
        if self.local_epochs < 0:
            raise InvalidStateError("local_epochs must be >= 0")


@dataclass
class TimingBreakdown:
    """All components are seconds; per-device maps cover participants only."""

    local_train: float = 0.0
    partial_agg: dict[int, float] = field(default_factory=dict)  # BS id -> seconds
    total_agg: float = 0.0
    download: dict[int, float] = field(default_factory=dict)  # device id -> seconds
    inference: dict[int, float] = field(default_factory=dict)
    recognition: dict[int, float] = field(default_factory=dict)

    def to_record(self) -> dict:
        """Fixed metric field names used in the JSONL records."""
        return {
            "t_local": self.local_train,
            "t_agg": self.total_agg,
            "t_down": {str(k): v for k, v in sorted(self.download.items())},
            "t_inf": {str(k): v for k, v in sorted(self.inference.items())},
            "t_int": {str(k): v for k, v in sorted(self.recognition.items())},
        }

    def mean_recognition(self) -> float:
        if not self.recognition:
            return 0.0
        return float(np.mean(list(self.recognition.values())))


def partial_agg_time(
    bs_cpu_freq: float,
    upload_rates: list[float],
    costs: ComputeCosts,
) -> float:
    """Slowest upload into the station plus the per-station combine work."""
    if not upload_rates:
        return 0.0
    for r in upload_rates:
        if r <= 0:
            raise InfeasibleLinkError("participant has a non-positive upload rate")
    slowest = max(costs.model_size / r for r in upload_rates)
    combine = len(upload_rates) * costs.model_size * costs.aggregate_cycles_per_unit / bs_cpu_freq
    return slowest + combine


def total_agg_time(
    per_bs_times: list[float],
    backhaul_rates: list[float],
    costs: ComputeCosts,
    cloud_freq: float,
    active: list[bool] | None = None,
    edge_only: bool = False,
) -> float:
    """Slowest station-to-cloud forward plus the cloud-side combine.

    Only stations that actually produced a partial model (active) forward
    anything or add cloud work; with none active the result is 0.
    """
    if len(per_bs_times) != len(backhaul_rates):
        raise InvalidStateError("per-BS lists must align")
    if active is None:
        active = [t > 0 for t in per_bs_times]
    idx = [i for i, a in enumerate(active) if a]
    if not idx:
        return 0.0
    if edge_only:
        return max(per_bs_times[i] for i in idx)
    for i in idx:
        if backhaul_rates[i] <= 0:
            raise InfeasibleLinkError(f"station {i} has a non-positive backhaul rate")
    forward = max(per_bs_times[i] + costs.model_size / backhaul_rates[i] for i in idx)
    combine = len(idx) * costs.model_size * costs.aggregate_cycles_per_unit / cloud_freq
    return forward + combine


def download_time(
    cloud_rate: float,
    device_rate: float,
    costs: ComputeCosts,
    edge_only: bool = False,
) -> float:
    """Cloud-to-station hop plus station-to-device hop."""
    if costs.model_size == 0:
        return 0.0
    if device_rate <= 0 or (not edge_only and cloud_rate <= 0):
        raise InfeasibleLinkError("download requires positive link rates")
    first_hop = 0.0 if edge_only else costs.model_size / cloud_rate
    return first_hop + costs.model_size / device_rate


def recognition_time(
    participants: list[int],
    devices: list[Device],
    snapshot: NetworkSnapshot,
    costs: ComputeCosts,
    backhaul_rates: list[float],
    cloud_freq: float,
    edge_only: bool = False,
) -> TimingBreakdown:
    """Full per-round breakdown for the given participant device indices."""
    breakdown = TimingBreakdown()
    if not participants:
        return breakdown

    for u in participants:
        if not snapshot.covered(u):
            raise InfeasibleLinkError(f"device {devices[u].id} participates without coverage")

    # Straggler term: everyone waits for the slowest local trainer.
    breakdown.local_train = max(
        costs.local_epochs
        * devices[u].data_size
        * costs.train_cycles_per_sample
        / devices[u].cpu_freq
        for u in participants
    )

    by_station: dict[int, list[int]] = {}
    for u in participants:
        by_station.setdefault(snapshot.assignment[u], []).append(u)

    per_bs_times = [0.0] * len(snapshot.station_ids)
    active = [False] * len(snapshot.station_ids)
    for bs_id, members in by_station.items():
        col = snapshot.station_column(bs_id)
        rates = [float(snapshot.rate_matrix[u, col]) for u in members]
        per_bs_times[col] = partial_agg_time(float(snapshot.bs_cpu[col]), rates, costs)
        active[col] = True
        breakdown.partial_agg[bs_id] = per_bs_times[col]

    breakdown.total_agg = total_agg_time(
        per_bs_times, list(backhaul_rates), costs, cloud_freq, active, edge_only
    )

    for u in participants:
        col = snapshot.station_column(snapshot.assignment[u])
        down = download_time(
            float(backhaul_rates[col]),
            float(snapshot.downlink_matrix[u, col]),
            costs,
            edge_only,
        )
        infer = costs.inference_cycles / devices[u].cpu_freq
        dev_id = devices[u].id
        breakdown.download[dev_id] = down
        breakdown.inference[dev_id] = infer
        breakdown.recognition[dev_id] = breakdown.local_train + breakdown.total_agg + down + infer
    return breakdown
