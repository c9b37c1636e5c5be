"""Scenario runner: topology construction, metrics, grids, CSV output.

Topology (content server -> gateway -> two APs -> device):

    server --l_sg--> gw --l_g1--> ap1 --l_1d--> dev
                        \\--l_g2--> ap2 --l_2d--/

The server->gateway link carries the latency axis; the two AP->device
links take their rates from the channel model and carry the PER axis.
Identical (config, seed) pairs produce byte-identical metrics and event
logs; grid cells derive independent seeds and may run in a worker pool.
"""

from __future__ import annotations

import math
import multiprocessing
import os
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Optional

import numpy as np

from . import channel as ch
from .cotag import ApNode, Audit, CotagConfig, DeviceNode, GatewayNode
from .simcore import (EventKind, Link, Node, Simulator, make_streams,
                      ms_to_ns, s_to_ns, NS_PER_S)
from .transport import (FlowSpec, FlowSink, ForwardingAp, ForwardingGateway,
                        PlainDevice, SenderParams, TrafficSource)

SCHEMES = ("COTAG", "SinglePathBaseline", "DuplicateMultipath")

CSV_COLUMNS = ["scenario", "scheme", "per", "latency_ms", "corr_target",
               "corr_measured", "p", "q", "T_ms", "seed", "throughput_gbps",
               "latency_5gb_s", "decode_ratio", "injected_bytes",
               "delivered_bytes"]


class ConfigError(ValueError):
    pass


def default_flows(n: int = 10, packet_size: int = 8192,
                  base_rate_gbps: float = 0.6, burst_rate_gbps: float = 2.0,
                  burst_start_s: float = 1.0,
                  burst_duration_s: float = 2.0) -> list[FlowSpec]:
    return [FlowSpec(flow_id=i, packet_size=packet_size,
                     base_rate_gbps=base_rate_gbps,
                     burst_rate_gbps=burst_rate_gbps,
                     burst_start_s=burst_start_s,
                     burst_duration_s=burst_duration_s) for i in range(n)]


@dataclass(frozen=True)
class ScenarioConfig:
    scheme: str = "COTAG"
    # channel
    channel_kind: str = "markov"          # markov | trace | constant
    p: float = 0.5
    q: float = 0.5
    markov_step_s: float = 0.1
    levels: ch.RateLevels = field(default_factory=ch.RateLevels)
    trace_path: Optional[str] = None
    constant_gbps: tuple[float, float] = (10.0, 10.0)
    corr_target: Optional[float] = None   # overrides q when set (markov only)
    # experiment axes
    per: float = 0.0
    latency_ms: float = 0.0               # server -> gateway
    T_ms: float = 10.0
    flows: tuple[FlowSpec, ...] = ()
    seed: int = 0
    duration_s: float = 4.0
    inject_stop_s: Optional[float] = None
    # engine knobs
    payload_mode: str = "symbolic"        # symbolic | bytes
    queue_capacity: int = 2048            # baseline forwarding queues
    cotag_buffer_capacity: int = 2048     # coded buffers at APs / device
    gateway_buffer_capacity: int = 8192   # cohort arrival window at the gateway
    wired_gbps: float = 10.0              # gateway -> AP links
    server_gbps: float = 40.0
    gateway_take_limit: Optional[float] = None
    ap_take_limit: Optional[float] = None
    gateway_split: str = "flow"           # "flow" round-robin | "queue" alternation
    ap_service: str = "fair"              # "fair" per-flow round-robin | "queue"
    ap_prop_ms: float = 0.05
    mm_prop_ms: float = 0.01
    sender: SenderParams = field(default_factory=SenderParams)
    transfer_target_bits: float = 5e9
    capture_event_log: bool = False
    name: str = "scenario"

    def effective_q(self) -> float:
        if self.corr_target is None:
            return self.q
        return ch.q_for_correlation(self.corr_target)

    def effective_corr_target(self) -> float:
        if self.corr_target is not None:
            return self.corr_target
        if self.channel_kind == "markov":
            return ch.state_correlation(ch.MarkovParams(self.p, self.q,
                                                        self.markov_step_s))
        return 0.0

    def validate(self) -> None:
        problems = []
        if self.scheme not in SCHEMES:
            problems.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.channel_kind not in ("markov", "trace", "constant"):
            problems.append(f"unknown channel kind {self.channel_kind!r}")
        if not 0.0 <= self.per <= 1.0:
            problems.append(f"per must be in [0, 1], got {self.per}")
        if self.latency_ms < 0:
            problems.append(f"latency_ms must be >= 0, got {self.latency_ms}")
        if self.T_ms <= 0:
            problems.append(f"T_ms must be positive, got {self.T_ms}")
        if self.duration_s < 0:
            problems.append(f"duration_s must be >= 0, got {self.duration_s}")
        if not self.flows:
            problems.append("at least one flow is required")
        ids = [f.flow_id for f in self.flows]
        if len(set(ids)) != len(ids):
            problems.append(f"duplicate flow ids in {ids}")
        if self.payload_mode not in ("symbolic", "bytes"):
            problems.append(f"unknown payload mode {self.payload_mode!r}")
        if self.gateway_split not in ("flow", "queue"):
            problems.append(f"unknown gateway split policy {self.gateway_split!r}")
        if self.ap_service not in ("fair", "queue"):
            problems.append(f"unknown AP service policy {self.ap_service!r}")
        if self.channel_kind == "markov":
            try:
                ch.MarkovParams(self.p, self.effective_q(), self.markov_step_s)
            except ValueError as e:
                problems.append(str(e))
        if self.channel_kind == "trace":
            if not self.trace_path:
                problems.append("trace channel requires trace_path")
            elif not os.path.exists(self.trace_path):
                problems.append(f"trace file not found: {self.trace_path}")
        if self.channel_kind == "constant" and min(self.constant_gbps) < 0:
            problems.append(f"constant rates must be >= 0, got {self.constant_gbps}")
        if min(self.queue_capacity, self.cotag_buffer_capacity,
               self.gateway_buffer_capacity) < 1:
            problems.append("queue capacities must be >= 1")
        if self.wired_gbps <= 0 or self.server_gbps <= 0:
            problems.append("wired link rates must be positive")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class MetricsRecord:
    scenario: str
    scheme: str
    per: float
    latency_ms: float
    corr_target: float
    corr_measured: float
    p: float
    q: float
    T_ms: float
    seed: int
    throughput_gbps: float
    latency_5gb_s: float
    decode_ratio: float
    injected_bytes: int
    delivered_bytes: int
    extras: dict = field(default_factory=dict)

    def csv_row(self) -> str:
        return ",".join([
            self.scenario,
            self.scheme,
            f"{self.per:.6f}",
            f"{self.latency_ms:.3f}",
            f"{self.corr_target:.4f}",
            f"{self.corr_measured:.4f}",
            f"{self.p:.4f}",
            f"{self.q:.4f}",
            f"{self.T_ms:.3f}",
            str(self.seed),
            f"{self.throughput_gbps:.6f}",
            f"{self.latency_5gb_s:.6f}",
            f"{self.decode_ratio:.6f}",
            str(self.injected_bytes),
            str(self.delivered_bytes),
        ])


def write_csv(records, path) -> None:
    try:
        with open(path, "w") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for r in records:
                fh.write(r.csv_row() + "\n")
    except OSError as e:
        raise OSError(f"cannot write CSV to {path}: {e}") from e


def csv_text(records) -> str:
    return "\n".join([",".join(CSV_COLUMNS)] + [r.csv_row() for r in records]) + "\n"


class MetricsCollector:
    """Aggregates in-order delivered bytes and the burst-window metrics."""

    def __init__(self, burst_start_ns: int, burst_end_ns: int, target_bits: float):
        self.burst_start_ns = burst_start_ns
        self.burst_end_ns = burst_end_ns
        self.target_bits = target_bits
        self.delivered_bytes = 0
        self.burst_bytes = 0
        self.bits_since_burst = 0
        self.transfer_latency_ns: Optional[int] = None

    def on_frontier(self, flow_id: int, nbytes: int, now_ns: int) -> None:
        self.delivered_bytes += nbytes
        if self.burst_start_ns <= now_ns < self.burst_end_ns:
            self.burst_bytes += nbytes
        if now_ns >= self.burst_start_ns:
            self.bits_since_burst += nbytes * 8
            if (self.transfer_latency_ns is None
                    and self.bits_since_burst >= self.target_bits):
                self.transfer_latency_ns = now_ns - self.burst_start_ns


class _ChannelUpdater(Node):
    """Drives the two mmWave link rates from the channel model."""

    def __init__(self, name: str, links: tuple[Link, Link]):
        super().__init__(name)
        self.links = links
        self.states: list[int] = []
        self.rates: list[tuple[float, float]] = []

    def on_event(self, ev, sim: Simulator) -> Optional[str]:
        raise NotImplementedError


class _MarkovUpdater(_ChannelUpdater):
    def __init__(self, name, links, process: ch.ChannelProcess):
        super().__init__(name, links)
        self.process = process
        self.step_ns = s_to_ns(process.params.step_s)

    def start(self, sim: Simulator) -> None:
        sim.schedule(self.step_ns, EventKind.BANDWIDTH_UPDATE, self.name)

    def on_event(self, ev, sim: Simulator) -> Optional[str]:
        state, r1, r2 = self.process.advance()
        self.states.append(int(state))
        self.rates.append((r1, r2))
        self.links[0].set_bandwidth(r1 * 1e9, sim)
        self.links[1].set_bandwidth(r2 * 1e9, sim)
        sim.schedule(sim.now + self.step_ns, EventKind.BANDWIDTH_UPDATE, self.name)
        return f"{ch.ChannelState(state).name}"


class _TraceUpdater(_ChannelUpdater):
    def __init__(self, name, links, records: list[ch.TraceRecord]):
        super().__init__(name, links)
        self.records = records
        self._idx = 0

    def start(self, sim: Simulator) -> None:
        if self.records:
            sim.schedule(s_to_ns(self.records[0].t_s), EventKind.BANDWIDTH_UPDATE,
                         self.name)

    def on_event(self, ev, sim: Simulator) -> Optional[str]:
        rec = self.records[self._idx]
        self.rates.append((rec.rate1_gbps, rec.rate2_gbps))
        self.links[0].set_bandwidth(rec.rate1_gbps * 1e9, sim)
        self.links[1].set_bandwidth(rec.rate2_gbps * 1e9, sim)
        self._idx += 1
        if self._idx < len(self.records):
            sim.schedule(s_to_ns(self.records[self._idx].t_s),
                         EventKind.BANDWIDTH_UPDATE, self.name)
        return None


@dataclass
class World:
    """Everything a test might want to poke after a run."""

    sim: Simulator
    cfg: ScenarioConfig
    audit: Audit
    violations: list[str]
    nodes: dict
    links: dict
    sinks: dict
    server: TrafficSource
    metrics: MetricsCollector
    updater: Optional[_ChannelUpdater]

    def check_invariants(self) -> list[str]:
        """Conservation / monotonicity / Giving-bound audit; returns problems."""
        for link in self.links.values():
            link.reconcile()
        gw = self.nodes.get("gw")
        if isinstance(gw, GatewayNode):
            gw.reconcile()
        for name in ("ap1", "ap2"):
            node = self.nodes.get(name)
            if isinstance(node, ApNode):
                node.check_giving_bound()
        dev = self.nodes.get("dev")
        if isinstance(dev, DeviceNode):
            dev.reconcile()
        for sink in self.sinks.values():
            if sink.delivered_unique * sink.packet_size > \
                    self.server.senders[sink.flow_id].injected_bytes:
                self.violations.append(
                    f"flow {sink.flow_id}: delivered more unique bytes than injected")
        return self.violations


def _measured_correlation(cfg: ScenarioConfig, seed_seq) -> float:
    """Deterministic indicator-correlation measurement for the channel."""
    if cfg.channel_kind == "markov":
        params = ch.MarkovParams(cfg.p, cfg.effective_q(), cfg.markov_step_s)
        rng = np.random.Generator(np.random.PCG64(seed_seq))
        states = ch.simulate_states(ch.ChannelState.HH, params, 20000, rng)
        i1 = (states & 2) != 0
        i2 = (states & 1) != 0
        return _safe_corr(i1.astype(float), i2.astype(float))
    if cfg.channel_kind == "trace":
        recs = ch.load_trace(cfg.trace_path, duplicate_single=True)
        r1 = np.array([r.rate1_gbps for r in recs])
        r2 = np.array([r.rate2_gbps for r in recs])
        return _safe_corr((r1 > np.median(r1)).astype(float),
                          (r2 > np.median(r2)).astype(float))
    return 0.0


def _safe_corr(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2 or a.std() == 0 or b.std() == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def _zeroed_record(cfg: ScenarioConfig) -> MetricsRecord:
    return MetricsRecord(
        scenario=cfg.name, scheme=cfg.scheme, per=cfg.per,
        latency_ms=cfg.latency_ms, corr_target=cfg.effective_corr_target(),
        corr_measured=0.0, p=cfg.p, q=cfg.effective_q(), T_ms=cfg.T_ms,
        seed=cfg.seed, throughput_gbps=0.0, latency_5gb_s=0.0,
        decode_ratio=1.0, injected_bytes=0, delivered_bytes=0)


def build_world(cfg: ScenarioConfig) -> World:
    cfg.validate()
    streams = make_streams(cfg.seed)
    violations: list[str] = []
    audit = Audit()
    sim = Simulator(event_log=[] if cfg.capture_event_log else None)

    duration_ns = s_to_ns(cfg.duration_s)
    inject_until = duration_ns if cfg.inject_stop_s is None \
        else s_to_ns(cfg.inject_stop_s)
    burst_start_ns = min(s_to_ns(f.burst_start_s) for f in cfg.flows)
    burst_end_ns = max(s_to_ns(f.burst_start_s + f.burst_duration_s)
                       for f in cfg.flows)
    metrics = MetricsCollector(burst_start_ns, burst_end_ns,
                               cfg.transfer_target_bits)

    payload_rngs = None
    if cfg.payload_mode == "bytes":
        kids = np.random.SeedSequence((cfg.seed, 0xB17E)).spawn(len(cfg.flows))
        payload_rngs = {f.flow_id: np.random.Generator(np.random.PCG64(k))
                        for f, k in zip(cfg.flows, kids)}

    server = TrafficSource("server", list(cfg.flows), cfg.sender, inject_until,
                           payload_rngs)

    cotag_cfg = CotagConfig(T_ns=ms_to_ns(cfg.T_ms),
                            queue_capacity=cfg.cotag_buffer_capacity,
                            gateway_capacity=cfg.gateway_buffer_capacity,
                            gateway_take_limit=cfg.gateway_take_limit,
                            ap_take_limit=cfg.ap_take_limit,
                            gateway_split=cfg.gateway_split,
                            ap_service=cfg.ap_service)

    sinks = {f.flow_id: FlowSink(f.flow_id, f.packet_size, metrics.on_frontier)
             for f in cfg.flows}
    ack_delay_ns = ms_to_ns(cfg.latency_ms + cfg.ap_prop_ms + cfg.mm_prop_ms)

    def ack(fid: int, cum: int, hint: int, sim_: Simulator) -> None:
        server.deliver_ack(fid, cum, hint, ack_delay_ns, sim_)

    if cfg.scheme == "COTAG":
        gw = GatewayNode("gw", cotag_cfg, streams["coding"], audit, violations)
        ap1 = ApNode("ap1", cotag_cfg, streams["coding"], audit, violations)
        ap2 = ApNode("ap2", cotag_cfg, streams["coding"], audit, violations)

        def deliver(flow_id, source, payload, sim_):
            if source is None:
                return
            if payload is not None and source.payload is not None \
                    and payload != source.payload:
                violations.append(
                    f"flow {flow_id} seq {source.seq}: decoded payload mismatch")
            cum, hint = sinks[flow_id].on_deliver(source.seq, source.size_bytes,
                                                  sim_.now)
            ack(flow_id, cum, hint, sim_)

        dev = DeviceNode("dev", cotag_cfg, audit, violations, deliver)
    else:
        mode = "by_flow" if cfg.scheme == "SinglePathBaseline" else "duplicate"
        gw = ForwardingGateway("gw", mode, cfg.queue_capacity, violations)
        ap1 = ForwardingAp("ap1", cfg.queue_capacity)
        ap2 = ForwardingAp("ap2", cfg.queue_capacity)

        def deliver_plain(pkt, sim_):
            cum, hint = sinks[pkt.flow_id].on_deliver(pkt.seq, pkt.size_bytes,
                                                      sim_.now)
            ack(pkt.flow_id, cum, hint, sim_)

        dev = PlainDevice("dev", deliver_plain)

    per_rng = streams["per"] if cfg.per > 0 else None
    links = {
        "l_sg": Link("l_sg", server, gw, cfg.server_gbps * 1e9,
                     prop_delay_ns=ms_to_ns(cfg.latency_ms)),
        "l_g1": Link("l_g1", gw, ap1, cfg.wired_gbps * 1e9,
                     prop_delay_ns=ms_to_ns(cfg.ap_prop_ms)),
        "l_g2": Link("l_g2", gw, ap2, cfg.wired_gbps * 1e9,
                     prop_delay_ns=ms_to_ns(cfg.ap_prop_ms)),
        "l_1d": Link("l_1d", ap1, dev, 0.0, prop_delay_ns=ms_to_ns(cfg.mm_prop_ms),
                     per=cfg.per, per_rng=per_rng),
        "l_2d": Link("l_2d", ap2, dev, 0.0, prop_delay_ns=ms_to_ns(cfg.mm_prop_ms),
                     per=cfg.per, per_rng=per_rng),
    }

    # initial mmWave rates; the updater takes over from its first step
    updater: Optional[_ChannelUpdater] = None
    if cfg.channel_kind == "markov":
        params = ch.MarkovParams(cfg.p, cfg.effective_q(), cfg.markov_step_s)
        process = ch.ChannelProcess(params, cfg.levels, streams["channel"])
        r1, r2 = ch.sample_bandwidth(process.state, cfg.levels, streams["channel"])
        links["l_1d"].bps = r1 * 1e9
        links["l_2d"].bps = r2 * 1e9
        updater = _MarkovUpdater("channel", (links["l_1d"], links["l_2d"]), process)
    elif cfg.channel_kind == "trace":
        records = ch.load_trace(cfg.trace_path, duplicate_single=True)
        first = records[0]
        links["l_1d"].bps = first.rate1_gbps * 1e9
        links["l_2d"].bps = first.rate2_gbps * 1e9
        updater = _TraceUpdater("channel", (links["l_1d"], links["l_2d"]),
                                records[1:])
    else:
        links["l_1d"].bps = cfg.constant_gbps[0] * 1e9
        links["l_2d"].bps = cfg.constant_gbps[1] * 1e9

    nodes = {"server": server, "gw": gw, "ap1": ap1, "ap2": ap2, "dev": dev}
    for node in nodes.values():
        node.attach(sim)
    for link in links.values():
        link.attach(sim)
    if updater is not None:
        updater.attach(sim)
        updater.start(sim)

    server.out_link = links["l_sg"]
    if cfg.scheme == "COTAG":
        gw.out_links = [links["l_g1"], links["l_g2"]]
        ap1.out_links = [links["l_1d"]]
        ap2.out_links = [links["l_2d"]]
        ap1.register_in_link(links["l_g1"])
        ap2.register_in_link(links["l_g2"])
        dev.register_in_link(links["l_1d"])
        dev.register_in_link(links["l_2d"])
        gw.start(sim)
    else:
        gw.wire([links["l_g1"], links["l_g2"]])
        ap1.out_links = [links["l_1d"]]
        ap2.out_links = [links["l_2d"]]
    server.start(sim)

    return World(sim=sim, cfg=cfg, audit=audit, violations=violations,
                 nodes=nodes, links=links, sinks=sinks, server=server,
                 metrics=metrics, updater=updater)


def simulate(cfg: ScenarioConfig) -> tuple[MetricsRecord, World]:
    cfg.validate()
    if cfg.duration_s == 0:
        world = None
        return _zeroed_record(cfg), world
    world = build_world(cfg)
    world.sim.run_until(s_to_ns(cfg.duration_s))

    m = world.metrics
    window_s = max((m.burst_end_ns - m.burst_start_ns) / NS_PER_S, 1e-12)
    throughput = m.burst_bytes * 8 / window_s / 1e9
    if m.transfer_latency_ns is not None:
        latency5 = m.transfer_latency_ns / NS_PER_S
    else:  # censored at the end of the run
        latency5 = max(0.0, (s_to_ns(cfg.duration_s) - m.burst_start_ns) / NS_PER_S)

    dev = world.nodes["dev"]
    if isinstance(dev, DeviceNode):
        decoded, processed = world.audit.decode_stats()
        decode_ratio = decoded / processed if processed else 1.0
    else:
        decode_ratio = 1.0

    corr_seed = np.random.SeedSequence((cfg.seed, 0xC0))
    extras = {
        "events": world.sim.dispatched,
        "loss_events": sum(s.loss_events for s in world.server.senders.values()),
        "violations": len(world.violations),
    }
    if world.updater is not None and world.updater.rates:
        rates = np.array(world.updater.rates)
        extras["rate_correlation"] = _safe_corr(rates[:, 0], rates[:, 1])

    record = MetricsRecord(
        scenario=cfg.name, scheme=cfg.scheme, per=cfg.per,
        latency_ms=cfg.latency_ms, corr_target=cfg.effective_corr_target(),
        corr_measured=_measured_correlation(cfg, corr_seed),
        p=cfg.p, q=cfg.effective_q(), T_ms=cfg.T_ms, seed=cfg.seed,
        throughput_gbps=throughput, latency_5gb_s=latency5,
        decode_ratio=decode_ratio,
        injected_bytes=world.server.injected_bytes,
        delivered_bytes=m.delivered_bytes, extras=extras)
    return record, world


def run_scenario(cfg: ScenarioConfig) -> MetricsRecord:
    record, _ = simulate(cfg)
    return record


@dataclass(frozen=True)
class GridAxes:
    per_values: tuple[float, ...] = (0.0,)
    latency_values_ms: tuple[float, ...] = (0.0,)
    corr_values: tuple[Optional[float], ...] = (None,)
    schemes: tuple[str, ...] = SCHEMES

    def validate(self) -> None:
        if not (self.per_values and self.latency_values_ms
                and self.corr_values and self.schemes):
            raise ConfigError("grid axes must be non-empty")


def _cell_seed(base_seed: int, index: int, repeat: int) -> int:
    ss = np.random.SeedSequence((base_seed, index, repeat))
    return int(ss.generate_state(1)[0])


def grid_configs(base: ScenarioConfig, axes: GridAxes,
                 repeats: int = 1) -> list[ScenarioConfig]:
    axes.validate()
    cells = list(product(axes.schemes, axes.per_values, axes.latency_values_ms,
                         axes.corr_values))
    cfgs = []
    for idx, (scheme, per, lat, corr) in enumerate(cells):
        for rep in range(repeats):
            cfgs.append(replace(
                base, scheme=scheme, per=per, latency_ms=lat, corr_target=corr,
                seed=_cell_seed(base.seed, idx, rep),
                name=f"cell{idx:03d}r{rep}"))
    return cfgs


def run_grid(base: ScenarioConfig, axes: GridAxes, repeats: int = 1,
             jobs: int = 1) -> list[MetricsRecord]:
    cfgs = grid_configs(base, axes, repeats)
    if jobs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs) as pool:
            return pool.map(run_scenario, cfgs)
    return [run_scenario(c) for c in cfgs]
