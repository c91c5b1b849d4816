"""Mobile edge network: grid mobility, coverage, and link rates.

Devices drive on the bidirectional roads of a square Manhattan grid and
turn at junctions (straight 0.5, right 0.25, left 0.25; choices that
would leave the grid are renormalized away, so positions always stay on
a road). Each device attaches to the nearest base station that covers
it. A link's rate is B * ln(1 + Pt*g/eta) with power-law channel gain
g = C_g * d^-alpha.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidStateError

HEADINGS = ("N", "E", "S", "W")

_HEADING_VEC = {"N": (0.0, 1.0), "E": (1.0, 0.0), "S": (0.0, -1.0), "W": (-1.0, 0.0)}
_RIGHT_OF = {"N": "E", "E": "S", "S": "W", "W": "N"}
_LEFT_OF = {v: k for k, v in _RIGHT_OF.items()}
_REVERSE = {"N": "S", "S": "N", "E": "W", "W": "E"}

_ON_GRID_TOL = 1e-6


def dbm_to_watts(dbm: float) -> float:
    """Convert a dBm power figure to watts."""
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class GridWorld:
    """Square road grid; roads are the grid lines, spaced cell_width apart."""

    cells_per_side: int
    cell_width: float

    def __post_init__(self):
        if self.cells_per_side < 1:
            raise InvalidStateError("cells_per_side must be >= 1")
        if self.cell_width <= 0:
            raise InvalidStateError("cell_width must be positive")

    @property
    def extent(self) -> float:
        return self.cells_per_side * self.cell_width

    def on_grid(self, x: float, y: float) -> bool:
        if not (0.0 <= x <= self.extent and 0.0 <= y <= self.extent):
            return False
        on_vertical = abs(x - round(x / self.cell_width) * self.cell_width) <= _ON_GRID_TOL
        on_horizontal = abs(y - round(y / self.cell_width) * self.cell_width) <= _ON_GRID_TOL
        return on_vertical or on_horizontal


@dataclass(frozen=True)
class Device:
    id: int
    x: float
    y: float
    heading: str
    speed: float  # m/s
    cpu_freq: float  # cycles/s
    tx_power: float  # W
    data_size: int  # training samples currently held

    def __post_init__(self):
        if self.heading not in HEADINGS:
            raise InvalidStateError(f"bad heading {self.heading!r}")
        if self.speed < 0 or self.cpu_freq <= 0 or self.tx_power <= 0 or self.data_size < 0:
            raise InvalidStateError(f"device {self.id} has out-of-range fields")

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class BaseStation:
    id: int
    x: float
    y: float
    coverage_radius: float
    cpu_freq: float  # cycles/s
    bandwidth: float  # Hz
    backhaul_rate: float  # units/s to and from the cloud
    tx_power: float = 2.51  # W, ~34 dBm

    def __post_init__(self):
        if self.coverage_radius <= 0 or self.bandwidth <= 0 or self.backhaul_rate <= 0:
            raise InvalidStateError(f"base station {self.id} has out-of-range fields")


@dataclass(frozen=True)
class ChannelParams:
    path_loss_coeff: float = 1.0
    path_loss_exponent: float = 5.0
    noise_power: float = dbm_to_watts(-174.0)  # W
    min_distance: float = 1.0  # m, gain floor distance
    log_kind: str = "ln"  # "ln" | "log2"

    def __post_init__(self):
        if self.path_loss_coeff <= 0 or self.path_loss_exponent <= 0 or self.noise_power <= 0:
            raise InvalidStateError("channel parameters must be positive")
        if self.log_kind not in ("ln", "log2"):
            raise InvalidStateError(f"log_kind must be 'ln' or 'log2', not {self.log_kind!r}")


@dataclass(frozen=True)
class NetworkSnapshot:
    """Per-iteration view of the network used by timing and the agent.

    rate_matrix holds device-to-BS (uplink) rates; downlink_matrix the
    BS-to-device direction computed with BS transmit power. Entries are
    zero wherever the device is outside the station's coverage.
    """

    iteration: int
    positions: np.ndarray  # (N, 2) meters
    assignment: tuple  # per device: BS id or None
    station_ids: tuple  # column order of the rate matrices
    rate_matrix: np.ndarray  # (N, M) units/s
    downlink_matrix: np.ndarray  # (N, M) units/s
    bs_cpu: np.ndarray  # (M,) cycles/s
    dev_cpu: np.ndarray  # (N,) cycles/s

    @property
    def n_devices(self) -> int:
        return self.rate_matrix.shape[0]

    @property
    def n_stations(self) -> int:
        return self.rate_matrix.shape[1]

    def covered(self, device_index: int) -> bool:
        return self.assignment[device_index] is not None

    def station_column(self, bs_id) -> int:
        return self.station_ids.index(bs_id)


def sample_turn(rng: np.random.Generator) -> str:
    """Draw a junction decision: straight 0.5, right 0.25, left 0.25."""
    u = rng.random()
    if u < 0.5:
        return "straight"
    if u < 0.75:
        return "right"
    return "left"


def _feasible(world: GridWorld, x: float, y: float, heading: str) -> bool:
    """True when some forward travel along `heading` stays on a road."""
    w = world.cell_width
    on_vertical = abs(x - round(x / w) * w) <= _ON_GRID_TOL
    on_horizontal = abs(y - round(y / w) * w) <= _ON_GRID_TOL
    dx, dy = _HEADING_VEC[heading]
    if dy != 0.0:
        # North/south travel requires a vertical road and room ahead.
        if not on_vertical:
            return False
        return y < world.extent - _ON_GRID_TOL if dy > 0 else y > _ON_GRID_TOL
    if not on_horizontal:
        return False
    return x < world.extent - _ON_GRID_TOL if dx > 0 else x > _ON_GRID_TOL


def _resample_heading(world: GridWorld, x: float, y: float, heading: str, rng) -> str:
    choice = sample_turn(rng)
    by_turn = {
        "straight": heading,
        "right": _RIGHT_OF[heading],
        "left": _LEFT_OF[heading],
    }
    candidate = by_turn[choice]
    if _feasible(world, x, y, candidate):
        return candidate
    # Renormalize over the remaining feasible turns; at an edge this sends
    # the device along the boundary road, at a corner onto the only exit.
    feasible = [h for h in by_turn.values() if _feasible(world, x, y, h)]
    if not feasible:
        return _REVERSE[heading]  # dead end: turn back along the road
    weights = np.array([0.5 if h == heading else 0.25 for h in feasible])
    weights /= weights.sum()
    return feasible[rng.choice(len(feasible), p=weights)]


def _next_junction_distance(world: GridWorld, x: float, y: float, heading: str) -> float:
    """Distance to the next junction strictly ahead along the heading."""
    w = world.cell_width
    coord = x if heading in ("E", "W") else y
    if heading in ("E", "N"):
        nxt = math.floor(coord / w + 1e-12) * w + w
        return nxt - coord
    nxt = math.ceil(coord / w - 1e-12) * w - w
    return coord - nxt


def step_mobility(
    world: GridWorld,
    devices: list[Device],
    dt: float,
    rng: np.random.Generator,
) -> list[Device]:
    """Advance every device speed*dt along the roads, turning at junctions."""
    if dt < 0:
        raise InvalidStateError("dt must be >= 0")
    out = []
    for dev in devices:
        if not world.on_grid(dev.x, dev.y):
            raise InvalidStateError(f"device {dev.id} is off the road grid at {dev.position}")
        x, y, heading = dev.x, dev.y, dev.heading
        remaining = dev.speed * dt
        while remaining > 1e-12:
            if not _feasible(world, x, y, heading):
                heading = _resample_heading(world, x, y, heading, rng)
                continue
            gap = _next_junction_distance(world, x, y, heading)
            dx, dy = _HEADING_VEC[heading]
            if remaining < gap:
                x += dx * remaining
                y += dy * remaining
                remaining = 0.0
            else:
                # Land exactly on the junction to keep coordinates on the
                # grid lattice bit-for-bit.
                w = world.cell_width
                x = round((x + dx * gap) / w) * w if dx else x
                y = round((y + dy * gap) / w) * w if dy else y
                remaining -= gap
                heading = _resample_heading(world, x, y, heading, rng)
        out.append(replace(dev, x=x, y=y, heading=heading))
    return out


def assign_coverage(devices: list[Device], stations: list[BaseStation]) -> tuple:
    """Nearest covering station per device (ties to the lowest BS id), else None."""
    result = []
    for dev in devices:
        best = None
        best_dist = math.inf
        for bs in sorted(stations, key=lambda s: s.id):
            d = math.hypot(dev.x - bs.x, dev.y - bs.y)
            if d <= bs.coverage_radius and d < best_dist:
                best = bs.id
                best_dist = d
        result.append(best)
    return tuple(result)


def channel_gain(distance: float, params: ChannelParams) -> float:
    """Power-law gain C_g * d^-alpha; the d=0 singularity is a caller error."""
    if distance <= 0:
        raise InvalidStateError("channel gain is undefined at zero distance")
    return params.path_loss_coeff * distance ** (-params.path_loss_exponent)


def link_rate(
    bandwidth: float,
    tx_power: float,
    gain: float,
    noise: float,
    log_kind: str = "ln",
) -> float:
    """Rate B * ln(1 + Pt*g/eta); natural log by default, log2 optional."""
    if bandwidth <= 0 or noise <= 0:
        raise InvalidStateError("bandwidth and noise must be positive")
    if tx_power < 0 or gain < 0:
        raise InvalidStateError("power and gain must be non-negative")
    snr = tx_power * gain / noise
    if log_kind == "ln":
        return bandwidth * math.log1p(snr)
    if log_kind == "log2":
        return bandwidth * math.log1p(snr) / math.log(2.0)
    raise InvalidStateError(f"log_kind must be 'ln' or 'log2', not {log_kind!r}")


def build_snapshot(
    iteration: int,
    world: GridWorld,
    devices: list[Device],
    stations: list[BaseStation],
    params: ChannelParams,
) -> NetworkSnapshot:
    """Compose coverage, gain and rate into the per-iteration network view.

    Distances are floored at params.min_distance before the gain formula,
    since a vehicle can pass arbitrarily close to a station.
    """
    assignment = assign_coverage(devices, stations)
    n, m = len(devices), len(stations)
    uplink = np.zeros((n, m))
    downlink = np.zeros((n, m))
    station_by_id = {bs.id: bs for bs in stations}
    col_of = {bs.id: j for j, bs in enumerate(stations)}
    for i, dev in enumerate(devices):
        bs_id = assignment[i]
        if bs_id is None:
            continue
        bs = station_by_id[bs_id]
        d = max(math.hypot(dev.x - bs.x, dev.y - bs.y), params.min_distance)
        g = channel_gain(d, params)
        j = col_of[bs_id]
        uplink[i, j] = link_rate(bs.bandwidth, dev.tx_power, g, params.noise_power, params.log_kind)
        downlink[i, j] = link_rate(bs.bandwidth, bs.tx_power, g, params.noise_power, params.log_kind)
    return NetworkSnapshot(
        iteration=iteration,
        positions=np.array([[d.x, d.y] for d in devices]),
        assignment=assignment,
        station_ids=tuple(bs.id for bs in stations),
        rate_matrix=uplink,
        downlink_matrix=downlink,
        bs_cpu=np.array([bs.cpu_freq for bs in stations]),
        dev_cpu=np.array([d.cpu_freq for d in devices]),
    )


def peak_rate(stations: list[BaseStation], tx_power: float, params: ChannelParams) -> float:
    """Best achievable rate in this deployment; used as a normalization scale."""
    best_gain = channel_gain(params.min_distance, params)
    return max(
        link_rate(bs.bandwidth, tx_power, best_gain, params.noise_power, params.log_kind)
        for bs in stations
    )
