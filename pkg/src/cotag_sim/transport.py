"""Simplified traffic sources and forwarding baselines.

The sender is a deliberately reduced window-based loss/delay-reactive
model: cubic-shaped regrowth on ack progress, multiplicative decrease
(beta = 0.7) once per loss epoch, duplicate-ack and timeout loss detection
with batched retransmission. No SACK, no subflow coupling; the goal is
ordering/trend reproduction, not kernel parity.

Also hosts the non-coded forwarding nodes used by the two baselines:
static per-flow path pinning ("single path") and duplicate-across-paths
with receiver-side dedup ("duplicate multipath").
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .simcore import (BoundedQueue, EventKind, Link, Node, QueueOutcome,
                      Simulator, NS_PER_S, ms_to_ns, s_to_ns)


@dataclass(frozen=True)
class FlowSpec:
    flow_id: int
    packet_size: int = 8192          # bytes
    base_rate_gbps: float = 0.6
    burst_rate_gbps: float = 2.0
    burst_start_s: float = 1.0
    burst_duration_s: float = 2.0

    def __post_init__(self):
        if self.packet_size < 3:
            raise ValueError("packet size must be at least 3 bytes")
        if self.base_rate_gbps <= 0 or self.burst_rate_gbps <= 0:
            raise ValueError("rates must be positive")
        if self.burst_duration_s <= 0:
            raise ValueError("burst duration must be positive")

    def rate_bps(self, now_ns: int) -> float:
        start = s_to_ns(self.burst_start_s)
        end = start + s_to_ns(self.burst_duration_s)
        rate = self.burst_rate_gbps if start <= now_ns < end else self.base_rate_gbps
        return rate * 1e9


@dataclass
class SourcePacket:
    flow_id: int
    seq: int
    size_bytes: int
    payload: Optional[bytes] = None
    retransmit: bool = False

    @property
    def wire_size_bytes(self) -> int:
        return self.size_bytes


@dataclass(frozen=True)
class SenderParams:
    initial_window: float = 64.0
    window_cap: float = 2048.0
    beta: float = 0.7
    cubic_c: float = 4.0e4          # packets / s^3; desk-scale RTTs need a big C
    dup_ack_threshold: int = 3
    srtt_alpha: float = 0.125
    rto_factor: float = 2.0
    rto_floor_ns: int = ms_to_ns(1.0)
    initial_rto_ns: int = ms_to_ns(100.0)
    pacing_gain: float = 1.25       # injection rate <= gain * window / srtt
    probe_gain: float = 1.0         # scales growth beyond w_max (probing)


class CubicLikeSender:
    """Window state machine for one flow."""

    def __init__(self, spec: FlowSpec, params: SenderParams,
                 payload_rng: Optional[np.random.Generator] = None):
        self.spec = spec
        self.params = params
        self.payload_rng = payload_rng  # byte mode: payloads are random blocks
        self.window = params.initial_window
        self.w_max = params.initial_window / params.beta
        self.epoch_start_ns = 0
        self.next_seq = 0
        self.cum_acked = 0
        self.in_flight: dict[int, tuple[int, bool]] = {}  # seq -> (sent_ns, retx)
        self.presumed_lost: set[int] = set()  # queued for retx; excluded from pipe
        self._payloads: dict[int, bytes] = {}
        self.dup_acks = 0
        self.recovery_until = -1
        self.srtt_ns: Optional[float] = None
        self.last_progress_ns = 0
        self.retx_queue: list[int] = []
        self.next_inject_ns = 0
        self.tick_pending = False
        self.rto_pending = False
        self.injected_packets = 0
        self.injected_bytes = 0
        self.loss_events = 0

    # -- window dynamics ---------------------------------------------------

    def _grow(self, now_ns: int) -> None:
        # cubic shape: concave recovery toward w_max (plateau), convex probe
        # beyond it; the inflection K puts W(0) at beta * w_max
        t = (now_ns - self.epoch_start_ns) / NS_PER_S
        k = ((1.0 - self.params.beta) * self.w_max / self.params.cubic_c) ** (1 / 3)
        target = self.params.cubic_c * (t - k) ** 3 + self.w_max
        self.window = max(1.0, min(self.params.window_cap, target))

    def on_loss(self, now_ns: int, hint_seq: int) -> None:
        """One multiplicative decrease per epoch, batched retransmission.

        Everything unacked below the receiver's high-water mark is queued
        for retransmission, lowest sequence first (the in-order frontier
        blocks on the smallest hole). Loss-recovery efficiency is kept
        deliberately scheme-neutral: per-round-trip hole repair would tax
        schemes in proportion to their feedback latency, not their actual
        loss behavior.
        """
        self.loss_events += 1
        self.w_max = self.window
        self.window = max(1.0, self.params.beta * self.window)
        self.epoch_start_ns = now_ns
        self.recovery_until = self.next_seq
        self.dup_acks = 0
        missing = [s for s in self.in_flight if s < hint_seq]
        self.presumed_lost.update(missing)
        self.retx_queue = sorted(set(self.retx_queue) | set(missing))

    def rto_deadline(self, now_ns: int) -> int:
        if self.srtt_ns is None:
            rto = self.params.initial_rto_ns
        else:
            rto = max(self.params.rto_floor_ns,
                      int(self.params.rto_factor * self.srtt_ns))
        return self.last_progress_ns + rto

    def on_ack(self, now_ns: int, cum: int, hint: int) -> None:
        if cum > self.cum_acked:
            for seq in [s for s in self.in_flight if s < cum]:
                sent_ns, retx = self.in_flight.pop(seq)
                self._payloads.pop(seq, None)
                self.presumed_lost.discard(seq)
                if not retx:  # Karn: no RTT samples from retransmitted data
                    sample = now_ns - sent_ns
                    if self.srtt_ns is None:
                        self.srtt_ns = float(sample)
                    else:
                        a = self.params.srtt_alpha
                        self.srtt_ns = (1 - a) * self.srtt_ns + a * sample
            self.cum_acked = cum
            self.retx_queue = [s for s in self.retx_queue if s >= cum]
            self.presumed_lost = {s for s in self.presumed_lost if s >= cum}
            self.dup_acks = 0
            self.last_progress_ns = now_ns
            self._grow(now_ns)
            if cum < self.recovery_until and hint > cum:
                # partial ack: repair the epoch's remaining stale holes
                srtt = self.srtt_ns or float(self.params.initial_rto_ns)
                stale = [s for s in self.in_flight
                         if s < hint and now_ns - self.in_flight[s][0] > srtt]
                if stale:
                    self.presumed_lost.update(stale)
                    self.retx_queue = sorted(set(self.retx_queue) | set(stale))
        elif hint > cum:
            self.dup_acks += 1
            if (self.dup_acks >= self.params.dup_ack_threshold
                    and cum >= self.recovery_until):
                self.on_loss(now_ns, hint)

    def on_rto(self, now_ns: int) -> None:
        if self.in_flight:
            # everything outstanding is presumed lost, including earlier
            # retransmissions that died in transit
            self.presumed_lost.update(self.in_flight)
            self.on_loss(now_ns, max(self.in_flight) + 1)
            self.last_progress_ns = now_ns

    # -- injection ----------------------------------------------------------

    def can_inject(self) -> bool:
        # a pending retransmission replaces a segment presumed dead, so it
        # is always allowed; new data respects the window against the pipe
        if self.retx_queue:
            return True
        pipe = len(self.in_flight) - len(self.presumed_lost)
        return pipe < math.floor(self.window)

    def make_packet(self, now_ns: int) -> SourcePacket:
        if self.retx_queue:
            seq = self.retx_queue.pop(0)
            self.presumed_lost.discard(seq)
            self.in_flight[seq] = (now_ns, True)
            pkt = SourcePacket(self.spec.flow_id, seq, self.spec.packet_size,
                               payload=self._payloads.get(seq), retransmit=True)
        else:
            seq = self.next_seq
            self.next_seq += 1
            payload = None
            if self.payload_rng is not None:
                payload = self.payload_rng.integers(
                    0, 256, size=self.spec.packet_size, dtype=np.uint8).tobytes()
                self._payloads[seq] = payload
            self.in_flight[seq] = (now_ns, False)
            pkt = SourcePacket(self.spec.flow_id, seq, self.spec.packet_size,
                               payload=payload)
        self.injected_packets += 1
        self.injected_bytes += pkt.size_bytes
        return pkt


class FlowSink:
    """Receiver side of one flow: dedup, in-order frontier, cumulative acks."""

    def __init__(self, flow_id: int, packet_size: int,
                 on_frontier: Callable[[int, int, int], None]):
        self.flow_id = flow_id
        self.packet_size = packet_size
        self.on_frontier = on_frontier  # (flow_id, byte_count, now_ns)
        self.cum = 0
        self._received: set[int] = set()
        self.duplicates = 0
        self.delivered_unique = 0

    def on_deliver(self, seq: int, size: int, now_ns: int) -> tuple[int, int]:
        """Returns (cum, highest received) for the ack."""
        if seq < self.cum or seq in self._received:
            self.duplicates += 1
        else:
            self._received.add(seq)
            self.delivered_unique += 1
            advanced = 0
            while self.cum in self._received:
                self._received.discard(self.cum)
                self.cum += 1
                advanced += size
            if advanced:
                self.on_frontier(self.flow_id, advanced, now_ns)
        hint = max(self._received) if self._received else self.cum
        return self.cum, hint


class TrafficSource(Node):
    """Content-server node: owns all senders and feeds the first-hop link."""

    def __init__(self, name: str, flows: list[FlowSpec], params: SenderParams,
                 inject_until_ns: int,
                 payload_rngs: Optional[dict[int, np.random.Generator]] = None):
        super().__init__(name)
        self.senders = {
            f.flow_id: CubicLikeSender(
                f, params, (payload_rngs or {}).get(f.flow_id))
            for f in flows
        }
        self.inject_until_ns = inject_until_ns
        self.out_link: Optional[Link] = None
        self._queue: list[SourcePacket] = []

    def start(self, sim: Simulator) -> None:
        for fid in self.senders:
            sim.schedule(0, EventKind.FLOW_CONTROL, self.name, ("tick", fid))
            self.senders[fid].tick_pending = True

    def _schedule_tick(self, fid: int, at_ns: int, sim: Simulator) -> None:
        snd = self.senders[fid]
        if not snd.tick_pending:
            snd.tick_pending = True
            sim.schedule(max(at_ns, sim.now), EventKind.FLOW_CONTROL,
                         self.name, ("tick", fid))

    def _arm_rto(self, fid: int, sim: Simulator) -> None:
        snd = self.senders[fid]
        if not snd.rto_pending and snd.in_flight:
            snd.rto_pending = True
            sim.schedule(snd.rto_deadline(sim.now), EventKind.FLOW_CONTROL,
                         self.name, ("rto", fid))

    def on_event(self, ev, sim: Simulator) -> Optional[str]:
        what, fid = ev.data[0], ev.data[1]
        snd = self.senders[fid]
        if what == "tick":
            snd.tick_pending = False
            if sim.now >= self.inject_until_ns:
                return "inject_done"
            injected = 0
            while snd.can_inject() and snd.next_inject_ns <= sim.now:
                pkt = snd.make_packet(sim.now)
                rate = snd.spec.rate_bps(sim.now)
                if snd.srtt_ns:
                    # window-based pacing: spreads post-ack window openings
                    # instead of blasting them into a single cohort
                    pace = (snd.params.pacing_gain * snd.window
                            * pkt.size_bytes * 8 / (snd.srtt_ns / NS_PER_S))
                    rate = min(rate, pace)
                gap = pkt.size_bytes * 8 * NS_PER_S / rate
                snd.next_inject_ns = max(snd.next_inject_ns, sim.now) + int(round(gap))
                self._queue.append(pkt)
                injected += 1
            if injected:
                self.out_link.kick(sim)
                self._arm_rto(fid, sim)
            if snd.can_inject():
                self._schedule_tick(fid, snd.next_inject_ns, sim)
            return f"injected={injected}"
        if what == "ack":
            _, _, cum, hint = ev.data
            snd.on_ack(sim.now, cum, hint)
            self._schedule_tick(fid, snd.next_inject_ns, sim)
            self._arm_rto(fid, sim)
            return None
        if what == "rto":
            snd.rto_pending = False
            if not snd.in_flight:
                return None
            deadline = snd.rto_deadline(sim.now)
            if sim.now < deadline:
                snd.rto_pending = True
                sim.schedule(deadline, EventKind.FLOW_CONTROL, self.name, ("rto", fid))
                return None
            snd.on_rto(sim.now)
            self._schedule_tick(fid, sim.now, sim)
            self._arm_rto(fid, sim)
            return "rto_fired"
        raise ValueError(f"unknown flow-control message {what!r}")

    def next_packet(self, link: Link, sim: Simulator) -> Optional[SourcePacket]:
        if self._queue:
            return self._queue.pop(0)
        return None

    def deliver_ack(self, fid: int, cum: int, hint: int, delay_ns: int,
                    sim: Simulator) -> None:
        sim.schedule(sim.now + delay_ns, EventKind.FLOW_CONTROL, self.name,
                     ("ack", fid, cum, hint))

    @property
    def injected_packets(self) -> int:
        return sum(s.injected_packets for s in self.senders.values())

    @property
    def injected_bytes(self) -> int:
        return sum(s.injected_bytes for s in self.senders.values())


# ---------------------------------------------------------------------------
# Non-coded forwarding nodes (baselines and the traditional-network replay)
# ---------------------------------------------------------------------------

class ForwardingGateway(Node):
    """Store-and-forward gateway: pins flows to paths or duplicates packets.

    modes: "alternate" (per-packet round robin, the traditional-network
    illustration), "by_flow" (flow pinned to one path: single-path TCP over
    dual connectivity), "duplicate" (one copy per path; receiver dedups).
    """

    def __init__(self, name: str, mode: str, capacity: int,
                 violations: list[str]):
        super().__init__(name)
        if mode not in ("alternate", "by_flow", "duplicate"):
            raise ValueError(f"unknown forwarding mode {mode!r}")
        self.mode = mode
        self.capacity = capacity
        self.violations = violations
        self.out_links: list[Link] = []
        self._queues: dict[str, BoundedQueue] = {}
        self._rr = 0
        self.dropped_queue = 0

    def wire(self, out_links: list[Link]) -> None:
        self.out_links = out_links
        self._queues = {l.name: BoundedQueue(self.capacity) for l in out_links}

    def _enqueue(self, link: Link, pkt, sim: Simulator) -> None:
        outcome, _ = self._queues[link.name].enqueue_with_drop(pkt)
        if outcome is QueueOutcome.DROPPED_INCOMING:
            self.dropped_queue += 1
        else:
            link.kick(sim)

    def on_packet(self, pkt, link, sim: Simulator) -> Optional[str]:
        if self.mode == "duplicate":
            for out in self.out_links:
                self._enqueue(out, pkt, sim)
        elif self.mode == "by_flow":
            out = self.out_links[pkt.flow_id % len(self.out_links)]
            self._enqueue(out, pkt, sim)
        else:
            out = self.out_links[self._rr % len(self.out_links)]
            self._rr += 1
            self._enqueue(out, pkt, sim)
        return None

    def next_packet(self, link: Link, sim: Simulator):
        q = self._queues[link.name]
        if len(q):
            return q.popleft()
        return None


class ForwardingAp(Node):
    """FIFO store-and-forward access point."""

    def __init__(self, name: str, capacity: int):
        super().__init__(name)
        self.queue = BoundedQueue(capacity)
        self.out_links: list[Link] = []
        self.dropped_queue = 0

    def on_packet(self, pkt, link, sim: Simulator) -> Optional[str]:
        outcome, _ = self.queue.enqueue_with_drop(pkt)
        if outcome is QueueOutcome.DROPPED_INCOMING:
            self.dropped_queue += 1
            return "dropped_queue"
        for out in self.out_links:
            out.kick(sim)
        return None

    def next_packet(self, link: Link, sim: Simulator):
        if len(self.queue):
            return self.queue.popleft()
        return None


class PlainDevice(Node):
    """Terminal node for non-coded schemes; hands packets straight up."""

    def __init__(self, name: str,
                 on_deliver: Callable[[SourcePacket, Simulator], None]):
        super().__init__(name)
        self.on_deliver_cb = on_deliver
        self.received = 0

    def on_packet(self, pkt, link, sim: Simulator) -> Optional[str]:
        self.received += 1
        self.on_deliver_cb(pkt, sim)
        return None
