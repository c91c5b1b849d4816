"""Experiment driver: scenario assembly, episode loop, metrics persistence.

One run is a pure function of (config, mode, run index): every random
stream derives from a SeedSequence keyed on those three, so reruns
produce byte-identical metrics JSONL.

Defense modes:

* FL          full participation, adversary disabled (clean baseline)
* FL-Attack   full participation under the configured attack
* RND-MTD(k)  blocks k uniformly random devices per iteration
* MTD-FL      anticipation profile + confidence mask + per-device DQN

Per iteration the loop advances mobility, rebuilds the network snapshot,
appends arriving traffic (attack flows on actively compromised devices),
anticipates, selects and masks the topology, runs the federated round,
poisons compromised uploads, aggregates per station then globally,
evaluates, prices the round's recognition time, computes the reward and
applies the delayed one-step temporal-difference update.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import adversary as adv
from . import anticipator as ant
from . import datagen
from . import flengine as fl
from . import mtdagent as ag
from . import netmodel as nm
from . import timemodel as tm
from .config import ScenarioConfig, dump_config, parse_mode
from .errors import ConfigError

STREAM_NAMES = (
    "init",
    "mobility",
    "shards",
    "traffic",
    "adversary",
    "agent",
    "anticipator",
    "noisy",
)


def make_streams(seed: int, run_index: int) -> dict[str, np.random.Generator]:
    """Independent named generators, all derived from (seed, run).

    The defense mode is deliberately not part of the key: runs of
    different modes at the same (seed, run) share mobility, compromise
    plans and shard draws, so cross-mode comparisons are paired
    (common-random-numbers variance reduction).
    """
    root = np.random.SeedSequence([int(seed), int(run_index)])
    children = root.spawn(len(STREAM_NAMES))
    return {name: np.random.default_rng(child) for name, child in zip(STREAM_NAMES, children)}


@dataclass
class MetricsRecord:
    run_id: str
    episode: int
    iteration: int
    mode: str
    attack: str
    accuracy: float
    test_loss: float
    excluded_malicious_ratio: float
    constraint_violations: int
    reward: float
    cumulative_reward: float
    participants: list
    compromised: list
    t_local: float
    t_agg: float
    t_down: dict
    t_inf: dict
    t_int: dict

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        return cls(**json.loads(line))


@dataclass
class Scenario:
    """Static per-run world state built from the config."""

    world: nm.GridWorld
    devices: list
    stations: list
    channel: nm.ChannelParams
    costs: tm.ComputeCosts
    backhaul_rates: list
    cloud_freq: float
    edge_only: bool
    scales: ag.StateScales
    initial_model: fl.ModelParams


def build_scenario(cfg: ScenarioConfig, streams) -> Scenario:
    net = cfg.net
    rng = streams["init"]
    world = nm.GridWorld(net.cells_per_side, net.cell_width)
    speed_mean = net.speed_kmh / 3.6

    stations = [
        nm.BaseStation(
            id=i,
            x=float(pos[0]),
            y=float(pos[1]),
            coverage_radius=net.bs_radius,
            cpu_freq=net.bs_cpu_ghz[i] * 1e9,
            bandwidth=net.bs_bandwidth_mhz[i] * 1e6,
            backhaul_rate=net.backhaul_rate,
            tx_power=nm.dbm_to_watts(net.bs_tx_dbm),
        )
        for i, pos in enumerate(net.bs_positions)
    ]

    devices = []
    extent = world.extent
    for u in range(cfg.n_devices):
        # Spawn on a random road with a heading along it.
        line = int(rng.integers(0, net.cells_per_side + 1)) * net.cell_width
        offset = float(rng.uniform(0.0, extent))
        if rng.random() < 0.5:
            x, y = offset, float(line)
            heading = "E" if rng.random() < 0.5 else "W"
        else:
            x, y = float(line), offset
            heading = "N" if rng.random() < 0.5 else "S"
        jitter = 1.0 + net.speed_jitter * float(rng.uniform(-1.0, 1.0))
        devices.append(
            nm.Device(
                id=u,
                x=x,
                y=y,
                heading=heading,
                speed=speed_mean * jitter,
                cpu_freq=float(rng.uniform(net.device_cpu_ghz_min, net.device_cpu_ghz_max)) * 1e9,
                tx_power=nm.dbm_to_watts(net.device_tx_dbm),
                data_size=0,
            )
        )

    channel = nm.ChannelParams(
        path_loss_coeff=net.path_loss_coeff,
        path_loss_exponent=net.path_loss_exponent,
        noise_power=nm.dbm_to_watts(net.noise_dbm),
        min_distance=net.min_distance,
        log_kind=net.rate_log,
    )

    initial_model = fl.init_task_model(rng, cfg.fl.feature_width, cfg.fl.hidden_width)
    costs = tm.ComputeCosts(
        train_cycles_per_sample=cfg.time.train_cycles_per_sample,
        aggregate_cycles_per_unit=cfg.time.aggregate_cycles_per_unit,
        inference_cycles=cfg.time.inference_cycles,
        local_epochs=cfg.fl.local_epochs,
        model_size=float(initial_model.size),
    )

    device_power = nm.dbm_to_watts(cfg.net.device_tx_dbm)
    scales = ag.StateScales(
        max_rate=nm.peak_rate(stations, device_power, channel),
        max_cpu=max(
            max(bs.cpu_freq for bs in stations),
            cfg.net.device_cpu_ghz_max * 1e9,
            cfg.time.cloud_cpu_ghz * 1e9,
        ),
    )

    return Scenario(
        world=world,
        devices=devices,
        stations=stations,
        channel=channel,
        costs=costs,
        backhaul_rates=[bs.backhaul_rate for bs in stations],
        cloud_freq=cfg.time.cloud_cpu_ghz * 1e9,
        edge_only=cfg.time.aggregation == "edge-only",
        scales=scales,
        initial_model=initial_model,
    )


def prepare_predictor(cfg: ScenarioConfig, rng: np.random.Generator):
    """Train (or load) the recurrent anticipator once per experiment."""
    a = cfg.anticipator
    if a.checkpoint:
        return ant.RecurrentPredictor.load(a.checkpoint)
    dataset = datagen.traffic_dataset(
        a.train_sequences, a.feature_width, rng, snr=a.snr, window=a.window
    )
    return ant.train_anticipator(
        dataset,
        arch=a.arch,
        hidden=a.hidden,
        epochs=a.epochs,
        rng=rng,
        learning_rate=a.learning_rate,
        batch_size=a.batch_size,
        loss=a.loss,
    )


@dataclass
class RunState:
    """Everything mutable one seeded run carries across episodes."""

    cfg: ScenarioConfig
    mode: str
    rnd_block: int
    run_id: str
    run_index: int
    streams: dict
    scenario: Scenario
    policies: ag.PolicySet | None
    predictor: object | None
    persisted_model: fl.ModelParams | None = None
    max_loss_seen: float = 1e-9
    max_time_seen: float = 1e-9


def init_run_state(
    cfg: ScenarioConfig,
    mode: str,
    run_index: int,
    trained_predictor=None,
) -> RunState:
    base_mode, block_override = parse_mode(mode)
    streams = make_streams(cfg.seed, run_index)
    scenario = build_scenario(cfg, streams)

    policies = None
    predictor = None
    if base_mode == "MTD-FL":
        state_dim = ag.state_length(cfg.n_devices, len(scenario.stations))
        policies = ag.PolicySet.new(streams["agent"], cfg.n_devices, state_dim, cfg.agent)
        kind = cfg.anticipator.kind
        if kind == "oracle":
            predictor = ant.OraclePredictor()
        elif kind == "noisy":
            predictor = ant.NoisyOracle(
                cfg.anticipator.noisy_fp, cfg.anticipator.noisy_fn, streams["noisy"]
            )
        else:
            if trained_predictor is None:
                trained_predictor = prepare_predictor(cfg, streams["anticipator"])
            predictor = trained_predictor

    return RunState(
        cfg=cfg,
        mode=mode,
        rnd_block=block_override if block_override is not None else cfg.rnd_block,
        run_id=f"{mode}-run{run_index:03d}",
        run_index=run_index,
        streams=streams,
        scenario=scenario,
        policies=policies,
        predictor=predictor,
    )


def _fresh_logs(cfg: ScenarioConfig, rng: np.random.Generator) -> list[ant.EventSequence]:
    a = cfg.anticipator
    logs = []
    for u in range(cfg.n_devices):
        feats, labels = datagen.gen_benign_events(a.history_length, a.feature_width, rng)
        logs.append(ant.EventSequence(u, feats, labels))
    return logs


def _draw_shard_sizes(cfg: ScenarioConfig, rng: np.random.Generator) -> np.ndarray:
    """Random heterogeneous split of this iteration's instances over devices."""
    total = int(rng.integers(cfg.fl.shard_total_min, cfg.fl.shard_total_max + 1))
    shares = rng.dirichlet(np.ones(cfg.n_devices))
    sizes = np.maximum(1, np.floor(shares * total).astype(int))
    return sizes


def _draw_shard(
    cfg: ScenarioConfig, device_id: int, size: int, rng: np.random.Generator
) -> fl.DeviceShard:
    x, y = datagen.gen_synthetic_flows(
        size, cfg.fl.feature_width, cfg.fl.class_balance, rng, cfg.fl.separation
    )
    return fl.DeviceShard(device_id, x, y)


def _data_rng(cfg, run_index, episode, tau, device=-1) -> np.random.Generator:
    """Per-(episode, iteration, device) stream, identical across modes."""
    return np.random.default_rng(
        np.random.SeedSequence([int(cfg.seed), int(run_index), episode, tau, device + 1])
    )


def run_episode(
    state: RunState,
    episode: int,
    exploit_prob: float,
    train_agent: bool = True,
) -> list[MetricsRecord]:
    """One episode: `iterations` federated rounds under the run's mode."""
    cfg = state.cfg
    sc = state.scenario
    base_mode, _ = parse_mode(state.mode)
    attack_on = base_mode != "FL" and cfg.adversary.attack != "none"
    is_mtd = base_mode == "MTD-FL"

    attack_cfg = adv.AttackConfig(
        kind=cfg.adversary.attack if attack_on else "none",
        learning_rate=cfg.adversary.learning_rate,
        target_scale=cfg.adversary.target_scale,
        noise_std=cfg.adversary.noise_std,
        deviation_fraction=cfg.adversary.deviation_fraction,
        estimate_source=cfg.adversary.estimate_source,
    )

    if cfg.fl.persist_model and state.persisted_model is not None:
        global_model = state.persisted_model
    else:
        global_model = sc.initial_model.copy()

    plan = (
        adv.draw_compromise_plan(
            [d.id for d in sc.devices],
            state.streams["adversary"],
            cfg.adversary.min_targets,
            cfg.adversary.max_targets,
        )
        if attack_on
        else adv.CompromisePlan(compromised=())
    )

    logs = _fresh_logs(cfg, state.streams["traffic"])
    devices = list(sc.devices)
    prev_topology = ag.TopologyVector(np.ones(cfg.n_devices, dtype=np.int64), 0)
    prev_state_vec = None
    prev_proposed = None
    prev_reward = 0.0
    cumulative = 0.0
    records = []

    for tau in range(1, cfg.iterations + 1):
        devices = nm.step_mobility(
            sc.world, devices, cfg.net.step_seconds, state.streams["mobility"]
        )
        sizes = _draw_shard_sizes(cfg, state.streams["shards"])
        devices = [replace(d, data_size=int(sizes[i])) for i, d in enumerate(devices)]
        snapshot = nm.build_snapshot(tau, sc.world, devices, sc.stations, sc.channel)

        # Traffic arrivals: attack flows to actively compromised devices.
        active = plan.active_at(tau)
        for u in range(cfg.n_devices):
            if u in active:
                feats, labels = datagen.gen_attack_flow(
                    cfg.anticipator.feature_width,
                    state.streams["traffic"],
                    cfg.anticipator.snr,
                    cfg.anticipator.window,
                )
                logs[u] = adv.inject_attack_traffic(
                    logs[u], feats, labels, cfg.anticipator.window
                )
            else:
                feats, labels = datagen.gen_benign_events(
                    cfg.anticipator.benign_events_per_iteration,
                    cfg.anticipator.feature_width,
                    state.streams["traffic"],
                )
                logs[u] = logs[u].extended(feats, labels)

        profile = ant.AnticipationProfile(np.zeros(cfg.n_devices), tau)
        state_vec = None
        if is_mtd:
            if hasattr(state.predictor, "update"):
                state.predictor.update(active)
            profile = ant.anticipate(state.predictor, logs, cfg.anticipator.window, tau)

        # Topology per defense mode.
        if base_mode in ("FL", "FL-Attack"):
            proposed = ag.TopologyVector(np.ones(cfg.n_devices, dtype=np.int64), tau)
        elif base_mode == "RND-MTD":
            bits = np.ones(cfg.n_devices, dtype=np.int64)
            blocked = state.streams["agent"].choice(
                cfg.n_devices, size=state.rnd_block, replace=False
            )
            bits[blocked] = 0
            proposed = ag.TopologyVector(bits, tau)
        else:
            state_vec = ag.build_state(snapshot, prev_topology, profile, sc.scales)
            proposed = ag.select_topology(
                state.policies, state_vec, exploit_prob, state.streams["agent"], tau
            )

        masked = (
            ag.enforce_confidence(proposed, profile, cfg.agent.confidence_threshold)
            if is_mtd
            else proposed
        )
        coverage = np.array([snapshot.covered(u) for u in range(cfg.n_devices)])
        executed_bits = masked.bits * coverage
        if (
            is_mtd
            and cfg.agent.force_participant
            and executed_bits.sum() == 0
        ):
            eligible = np.flatnonzero(
                coverage & (profile.probs < cfg.agent.confidence_threshold)
            )
            if len(eligible) > 0:
                executed_bits = executed_bits.copy()
                executed_bits[state.streams["agent"].choice(eligible)] = 1
        executed = ag.TopologyVector(executed_bits, tau)
        participants = executed.participants()

        # Federated round over the executed topology.
        round_result = fl.RoundResult()
        distributed_global = global_model
        if participants:
            for u in participants:
                dev_rng = _data_rng(cfg, state.run_index, episode, tau, u)
                shard = _draw_shard(cfg, u, devices[u].data_size, dev_rng)
                trained, loss = fl.local_train(
                    global_model,
                    shard,
                    epochs=cfg.fl.local_epochs,
                    rng=dev_rng,
                    learning_rate=cfg.fl.learning_rate,
                    batch_size=cfg.fl.batch_size,
                    optimizer=cfg.fl.optimizer,
                    loss=cfg.fl.loss,
                )
                round_result.uploads[u] = trained
                round_result.upload_counts[u] = shard.size
                round_result.local_losses[u] = loss

            if attack_on:
                round_result = adv.poison_uploads(
                    round_result,
                    active,
                    attack_cfg,
                    state.streams["adversary"],
                    distributed_global=distributed_global,
                    n_devices=cfg.n_devices,
                )

            by_station: dict[int, list] = {}
            for u in participants:
                by_station.setdefault(snapshot.assignment[u], []).append(
                    (round_result.uploads[u], round_result.upload_counts[u])
                )
            partials = [
                fl.aggregate_partial(uploads, weighted=cfg.fl.weighted_aggregation)
                for _, uploads in sorted(by_station.items())
            ]
            global_model = fl.aggregate_global(partials)

        test = datagen.make_test_shard(
            cfg.fl.test_size,
            cfg.fl.feature_width,
            cfg.fl.class_balance,
            _data_rng(cfg, state.run_index, episode, tau),
            cfg.fl.separation,
        )
        accuracy, test_loss = fl.evaluate(global_model, test, loss=cfg.fl.loss)

        timing = tm.recognition_time(
            participants,
            devices,
            snapshot,
            sc.costs,
            sc.backhaul_rates,
            sc.cloud_freq,
            sc.edge_only,
        )

        reward = 0.0
        if is_mtd:
            losses = [round_result.local_losses[u] for u in participants]
            times = [timing.recognition[devices[u].id] for u in participants]
            if losses:
                state.max_loss_seen = max(state.max_loss_seen, max(losses))
            if times:
                state.max_time_seen = max(state.max_time_seen, max(times))
            norm_losses = [f / state.max_loss_seen for f in losses]
            norm_times = [t / state.max_time_seen for t in times]
            reward = ag.compute_reward(
                norm_losses, norm_times, proposed, profile, cfg.agent
            )
            cumulative += reward
            if train_agent and prev_state_vec is not None:
                ag.bellman_update(
                    state.policies,
                    ag.Transition(prev_state_vec, prev_proposed, prev_reward, state_vec),
                    cfg.agent.discount,
                )
            prev_state_vec, prev_proposed, prev_reward = state_vec, proposed, reward

        excluded_ratio = 1.0
        if active:
            excluded = [u for u in active if u not in participants]
            excluded_ratio = len(excluded) / len(active)
        violations = (
            int(np.sum((executed.bits == 1) & (profile.probs >= cfg.agent.confidence_threshold)))
            if is_mtd
            else 0
        )

        rec = timing.to_record()
        records.append(
            MetricsRecord(
                run_id=state.run_id,
                episode=episode,
                iteration=tau,
                mode=state.mode,
                attack=attack_cfg.kind,
                accuracy=accuracy,
                test_loss=test_loss,
                excluded_malicious_ratio=excluded_ratio,
                constraint_violations=violations,
                reward=reward,
                cumulative_reward=cumulative,
                participants=participants,
                compromised=sorted(active),
                t_local=rec["t_local"],
                t_agg=rec["t_agg"],
                t_down=rec["t_down"],
                t_inf=rec["t_inf"],
                t_int=rec["t_int"],
            )
        )
        prev_topology = executed

    if is_mtd and train_agent and prev_state_vec is not None:
        ag.bellman_update(
            state.policies,
            ag.Transition(prev_state_vec, prev_proposed, prev_reward, None),
            cfg.agent.discount,
        )
    if cfg.fl.persist_model:
        state.persisted_model = global_model
    return records


def default_out_root() -> Path:
    return Path(os.environ.get("MTDFL_OUT", "runs"))


def run_experiment(cfg: ScenarioConfig, out_dir=None, train_agent: bool = True) -> Path:
    """All configured modes x runs; writes JSONL metrics, curves and summaries."""
    out = Path(out_dir) if out_dir else (
        Path(cfg.out_dir) if cfg.out_dir else default_out_root() / f"seed{cfg.seed}"
    )
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.json")

    trained_predictor = None
    needs_trained = any(parse_mode(m)[0] == "MTD-FL" for m in cfg.modes) and (
        cfg.anticipator.kind == "trained"
    )
    if needs_trained:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7_777]))
        trained_predictor = prepare_predictor(cfg, rng)

    all_records: list[MetricsRecord] = []
    for mode in cfg.modes:
        for run_index in range(cfg.runs):
            state = init_run_state(cfg, mode, run_index, trained_predictor)
            run_dir = out / mode.replace("(", "_").replace(")", "") / f"run_{run_index:03d}"
            run_dir.mkdir(parents=True, exist_ok=True)
            curve_rows = []
            with (run_dir / "metrics.jsonl").open("w") as fh:
                for episode in range(cfg.episodes):
                    eps = ag.epsilon_at(episode, cfg.episodes, cfg.agent)
                    records = run_episode(state, episode, eps, train_agent=train_agent)
                    for r in records:
                        fh.write(r.to_json() + "\n")
                    curve_rows.append((episode, records[-1].cumulative_reward))
                    all_records.extend(records)
            with (run_dir / "training_curve.csv").open("w") as fh:
                fh.write("episode,cumulative_reward\n")
                for episode, value in curve_rows:
                    fh.write(f"{episode},{value!r}\n")
    write_summary(all_records, out / "summary.csv")
    return out


def write_summary(records: list[MetricsRecord], path) -> None:
    """Per (mode, iteration) mean/std over runs, taken at each run's final episode."""
    final_episode: dict[str, int] = {}
    for r in records:
        key = r.run_id + r.mode
        final_episode[key] = max(final_episode.get(key, 0), r.episode)
    cells: dict[tuple, dict[str, list]] = {}
    for r in records:
        if r.episode != final_episode[r.run_id + r.mode]:
            continue
        cell = cells.setdefault((r.mode, r.iteration), {"acc": [], "ratio": [], "t": []})
        cell["acc"].append(r.accuracy)
        cell["ratio"].append(r.excluded_malicious_ratio)
        times = list(r.t_int.values())
        cell["t"].append(float(np.mean(times)) if times else 0.0)
    with Path(path).open("w") as fh:
        fh.write(
            "mode,iteration,accuracy_mean,accuracy_std,"
            "excluded_ratio_mean,excluded_ratio_std,t_int_mean,t_int_std\n"
        )
        for (mode, iteration) in sorted(cells):
            c = cells[(mode, iteration)]
            fh.write(
                f"{mode},{iteration},"
                f"{np.mean(c['acc'])!r},{np.std(c['acc'])!r},"
                f"{np.mean(c['ratio'])!r},{np.std(c['ratio'])!r},"
                f"{np.mean(c['t'])!r},{np.std(c['t'])!r}\n"
            )


def load_metrics(run_dir) -> list[MetricsRecord]:
    records = []
    for path in sorted(Path(run_dir).glob("**/metrics.jsonl")):
        with path.open() as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(MetricsRecord.from_json(line))
    return records
