"""COTAG protocol nodes: coded gateway, label-gated access points, and the
decoding device.

Time is sliced into intervals of length T. Source packets arriving at the
gateway during bucket b (= [bT, (b+1)T)) form cohort b; one generation per
(flow, cohort). During [(b+1)T, (b+2)T) the gateway emits fresh random
combinations labeled b: the first n_b emissions (one per source packet, in
arrival order) are High priority, everything after is redundant Low
priority (Taking, wrapping the arrival queue). At (b+2)T the cohort's
material is discarded.

An AP starts serving label k once its incoming link has seen a label > k:
it snapshots the buffered label-k packets (n total, n_h High) in arrival
order and, per transmit opportunity, emits a fresh recoding of the driving
packet's flow (first n_h sends High, then buffered Lows, then wrapped Take
sends, all Low). When a label k+2 packet arrives, leftovers of label k are
discarded unsent (Giving).

The device buffers coded packets the same way and decodes cohort k once
every incoming link has seen a label > k; decoded source packets are
handed to the sink in source order, undecodable generations are discarded.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .rlnc import (CodedPacket, Generation, Decoder, Priority, encode, recode,
                   random_coeffs)
from .simcore import (BoundedQueue, EventKind, Link, Node, QueueOutcome,
                      Simulator)


@dataclass
class CotagConfig:
    T_ns: int
    queue_capacity: int = 2048      # AP / device coded buffers
    gateway_capacity: int = 8192    # gateway cohort arrival window (sources)
    gateway_take_limit: Optional[float] = None  # emissions <= limit * n_k
    ap_take_limit: Optional[float] = None       # emissions <= limit * n
    # Link split policy. "queue": whichever link pulls next serves the next
    # queue position (the worked example's emergent alternation). "flow":
    # each flow's emissions round-robin across links, so every flow keeps
    # material on both APs; under phase-locked symmetric loads the queue
    # policy can degenerate into pinning whole flows to one AP, which
    # forfeits the cross-AP recovery the recoding depends on.
    gateway_split: str = "flow"
    # AP service order over the processed cohort. "queue": strict arrival
    # order (the worked example). "fair": round-robin across flows within
    # each priority class; under overload the queue order always cuts the
    # cohort's tail, starving exactly the slow flows whose repair traffic
    # arrives late in the bucket.
    ap_service: str = "fair"


@dataclass
class CohortFlowAudit:
    n_k: int = 0
    high_sent: int = 0
    low_sent: int = 0
    ap_sent: dict = field(default_factory=dict)
    delivered: int = 0
    decoded: Optional[bool] = None


class Audit:
    """Per-(cohort, flow) protocol counters; drives the replay dumps."""

    COLUMNS = ["cohort", "flow", "n_k", "high_sent", "low_sent",
               "ap1_sent", "ap2_sent", "delivered", "decoded"]

    def __init__(self, ap_names: tuple[str, str] = ("ap1", "ap2")):
        self.ap_names = ap_names
        self._rows: dict[tuple[int, int], CohortFlowAudit] = {}

    def _row(self, cohort: int, flow: int) -> CohortFlowAudit:
        return self._rows.setdefault((cohort, flow), CohortFlowAudit())

    def record_arrivals(self, cohort: int, flow: int, count: int) -> None:
        self._row(cohort, flow).n_k += count

    def gateway_sent(self, cohort: int, flow: int, priority: Priority) -> None:
        row = self._row(cohort, flow)
        if priority is Priority.HIGH:
            row.high_sent += 1
        else:
            row.low_sent += 1

    def ap_sent(self, ap: str, cohort: int, flow: int) -> None:
        row = self._row(cohort, flow)
        row.ap_sent[ap] = row.ap_sent.get(ap, 0) + 1

    def delivered(self, cohort: int, flow: int, count: int) -> None:
        self._row(cohort, flow).delivered += count

    def decoded(self, cohort: int, flow: int, ok: bool) -> None:
        self._row(cohort, flow).decoded = ok

    def cohort_total(self, cohort: int, attr: str) -> int:
        return sum(getattr(row, attr) for (c, _), row in self._rows.items()
                   if c == cohort)

    def ap_cohort_total(self, cohort: int, ap: str) -> int:
        return sum(row.ap_sent.get(ap, 0) for (c, _), row in self._rows.items()
                   if c == cohort)

    def flows_of(self, cohort: int) -> list[int]:
        return sorted(f for (c, f) in self._rows if c == cohort)

    def get(self, cohort: int, flow: int) -> CohortFlowAudit:
        return self._rows[(cohort, flow)]

    def rows(self) -> list[dict]:
        out = []
        for (cohort, flow) in sorted(self._rows):
            r = self._rows[(cohort, flow)]
            out.append({
                "cohort": cohort, "flow": flow, "n_k": r.n_k,
                "high_sent": r.high_sent, "low_sent": r.low_sent,
                "ap1_sent": r.ap_sent.get(self.ap_names[0], 0),
                "ap2_sent": r.ap_sent.get(self.ap_names[1], 0),
                "delivered": r.delivered,
                "decoded": bool(r.decoded),
            })
        return out

    def decode_stats(self) -> tuple[int, int]:
        """(decoded, processed) generation counts."""
        judged = [r.decoded for r in self._rows.values() if r.decoded is not None]
        return sum(judged), len(judged)


def _source_width(packets) -> int:
    # mirror of the byte-mode length-prefixed padding
    return max(p.size_bytes for p in packets) + 2


class _CohortTx:
    """Gateway-side transmit state for the cohort being served."""

    def __init__(self, cohort: int, service: list, rng: np.random.Generator,
                 take_limit: Optional[float], n_links: int, split: str):
        self.cohort = cohort
        self.service = service
        self.n_k = len(service)
        self.total_sent = 0
        self.high_sent = 0
        self.rng = rng
        self.cap = None if take_limit is None else math.ceil(take_limit * self.n_k)
        self.generations: dict[int, Generation] = {}
        by_flow: dict[int, list] = {}
        for src in service:
            by_flow.setdefault(src.flow_id, []).append(src)
        for flow_id, srcs in by_flow.items():
            if all(getattr(s, "payload", None) is not None for s in srcs):
                self.generations[flow_id] = Generation.from_payloads(
                    flow_id, cohort, [s.payload for s in srcs], sources=tuple(srcs))
            else:
                self.generations[flow_id] = Generation.symbolic(
                    flow_id, cohort, tuple(srcs), _source_width(srcs))
        self.split = split
        n = max(n_links, 1)
        if split == "flow":
            # per-link service lists: each flow's packets alternate links
            counter: dict[int, int] = {}
            self.link_service: list[list] = [[] for _ in range(n)]
            for src in service:
                j = counter.get(src.flow_id, src.flow_id)
                self.link_service[j % n].append(src)
                counter[src.flow_id] = j + 1
            self.link_high_idx = [0] * n
            self.link_take_pos = [0] * n
        # The emission budget is split per link with a floor of one: every
        # outgoing link must carry at least one labeled packet per nonempty
        # cohort, or a downstream node's min-over-links label gate can stall
        # behind the silent link.
        self.link_sent = [0] * n
        if take_limit is None:
            self.link_cap = [None] * n
        else:
            self.link_cap = [max(1, math.ceil(take_limit * self.n_k / n))] * n

    def next_for_link(self, link_idx: int):
        """Returns (source, priority) or None, honoring the split policy."""
        if self.n_k == 0:
            return None
        cap = self.link_cap[link_idx]
        if cap is not None and self.link_sent[link_idx] >= cap:
            return None
        if self.split != "flow":
            if self.total_sent < self.n_k:
                src, prio = self.service[self.total_sent], Priority.HIGH
            else:
                src, prio = self.service[self.total_sent % self.n_k], Priority.LOW
        else:
            lst = self.link_service[link_idx]
            if self.high_sent < self.n_k and lst \
                    and self.link_high_idx[link_idx] < len(lst):
                src = lst[self.link_high_idx[link_idx]]
                self.link_high_idx[link_idx] += 1
                prio = Priority.HIGH
            else:
                wrap = lst if lst else self.service
                src = wrap[self.link_take_pos[link_idx] % len(wrap)]
                self.link_take_pos[link_idx] += 1
                prio = Priority.LOW
        self.total_sent += 1
        self.link_sent[link_idx] += 1
        if prio is Priority.HIGH:
            self.high_sent += 1
        return src, prio


class GatewayNode(Node):
    """Coded forwarding and Taking at the network gateway."""

    def __init__(self, name: str, cfg: CotagConfig, coding_rng: np.random.Generator,
                 audit: Audit, violations: list[str]):
        super().__init__(name)
        self.cfg = cfg
        self.rng = coding_rng
        self.audit = audit
        self.violations = violations
        self.out_links: list[Link] = []
        self._buckets: dict[int, list] = {}
        self._buffered = 0
        self._tx: Optional[_CohortTx] = None
        # accounting
        self.arrived = 0
        self.dropped_queue = 0
        self.expired = 0

    def start(self, sim: Simulator) -> None:
        sim.schedule(0, EventKind.COHORT_TICK, self.name)

    def on_packet(self, pkt, link, sim: Simulator) -> Optional[str]:
        self.arrived += 1
        if self._buffered >= self.cfg.gateway_capacity:
            self.dropped_queue += 1
            return "dropped_queue"
        bucket = sim.now // self.cfg.T_ns
        self._buckets.setdefault(bucket, []).append(pkt)
        self._buffered += 1
        self.audit.record_arrivals(bucket, pkt.flow_id, 1)
        return None

    def on_event(self, ev, sim: Simulator) -> Optional[str]:
        assert ev.kind is EventKind.COHORT_TICK
        interval = sim.now // self.cfg.T_ns
        serving = self._buckets.get(interval - 1)
        if serving:
            self._tx = _CohortTx(interval - 1, list(serving), self.rng,
                                 self.cfg.gateway_take_limit,
                                 len(self.out_links), self.cfg.gateway_split)
        else:
            self._tx = None
        stale = self._buckets.pop(interval - 2, None)
        if stale:
            self.expired += len(stale)
            self._buffered -= len(stale)
        sim.schedule(sim.now + self.cfg.T_ns, EventKind.COHORT_TICK, self.name)
        for link in self.out_links:
            link.kick(sim)
        return None

    def next_packet(self, link: Link, sim: Simulator) -> Optional[CodedPacket]:
        tx = self._tx
        if tx is None:
            return None
        served = tx.next_for_link(self.out_links.index(link))
        if served is None:
            return None
        src, prio = served
        gen = tx.generations[src.flow_id]
        pkt = encode(gen, random_coeffs(gen.size, tx.rng), prio)
        self.audit.gateway_sent(tx.cohort, src.flow_id, prio)
        return pkt

    def reconcile(self) -> None:
        kept = sum(len(v) for v in self._buckets.values())
        if self.arrived != self.dropped_queue + self.expired + kept:
            self.violations.append(
                f"{self.name}: arrived {self.arrived} != dropped {self.dropped_queue}"
                f" + expired {self.expired} + buffered {kept}")


class _LabelBuffer:
    """Bounded buffer plus live per-(label, flow) views kept in sync."""

    def __init__(self, capacity: int, violations: list[str], owner: str):
        self.queue = BoundedQueue(capacity)
        self.by_label: dict[int, dict[int, list[CodedPacket]]] = {}
        self.order: dict[int, list[CodedPacket]] = {}
        self.violations = violations
        self.owner = owner
        self.given = 0

    def add(self, pkt: CodedPacket) -> QueueOutcome:
        outcome, evicted = self.queue.enqueue_with_drop(pkt)
        if outcome is QueueOutcome.DROPPED_INCOMING:
            return outcome
        if evicted is not None:
            self._forget(evicted)
        self.by_label.setdefault(pkt.cohort, {}).setdefault(pkt.flow_id, []).append(pkt)
        self.order.setdefault(pkt.cohort, []).append(pkt)
        return outcome

    def _forget(self, pkt: CodedPacket) -> None:
        flows = self.by_label.get(pkt.cohort)
        if flows is None:
            return
        flows.get(pkt.flow_id, []).remove(pkt)
        self.order[pkt.cohort].remove(pkt)
        if not flows[pkt.flow_id]:
            del flows[pkt.flow_id]
        if not flows:
            del self.by_label[pkt.cohort]
            del self.order[pkt.cohort]

    def labels(self) -> list[int]:
        return sorted(self.by_label)

    def discard_below(self, label: int) -> int:
        victims = self.queue.remove_if(lambda p: p.cohort < label)
        for label_ in [l for l in self.by_label if l < label]:
            del self.by_label[label_]
            del self.order[label_]
        self.given += len(victims)
        return len(victims)

    def consume_label(self, label: int) -> int:
        victims = self.queue.remove_if(lambda p: p.cohort == label)
        self.by_label.pop(label, None)
        self.order.pop(label, None)
        return len(victims)


class _GatedNode(Node):
    """Shared label-gating machinery for APs and the device."""

    def __init__(self, name: str, cfg: CotagConfig, violations: list[str]):
        super().__init__(name)
        self.cfg = cfg
        self.violations = violations
        self.buffer = _LabelBuffer(cfg.queue_capacity, violations, name)
        self.largest_label: dict[str, int] = {}
        self.processed: Optional[int] = None
        self.protocol_errors = 0
        self.received = 0

    def register_in_link(self, link: Link) -> None:
        # -1 stands in for "no label seen yet": it keeps the advance horizon
        # below every real label until the link has carried a packet.
        self.largest_label[link.name] = -1

    def on_packet(self, pkt: CodedPacket, link, sim: Simulator) -> Optional[str]:
        self.received += 1
        last = self.largest_label[link.name]
        if pkt.cohort < last:
            self.protocol_errors += 1
            self.violations.append(
                f"{self.name}: label regression {pkt.cohort} after {last} on {link.name}")
            return "label_regression"
        self.largest_label[link.name] = pkt.cohort
        if self.processed is not None and pkt.cohort <= self.processed:
            self.protocol_errors += 1
            return "stale_label"
        outcome = self.buffer.add(pkt)
        self._advance_all(sim)
        self.after_arrival(sim)
        return outcome.value if outcome is not QueueOutcome.ENQUEUED else None

    def _advance_all(self, sim: Simulator) -> None:
        while True:
            horizon = min(self.largest_label.values()) - 1
            candidates = [l for l in self.buffer.labels()
                          if self.processed is None or l > self.processed]
            if not candidates or candidates[0] > horizon:
                return
            self._advance(candidates[0], sim)

    def _advance(self, label: int, sim: Simulator) -> None:
        raise NotImplementedError

    def after_arrival(self, sim: Simulator) -> None:
        pass


class ApNode(_GatedNode):
    """mmWave access point: Give on label advance, recode on transmit."""

    def __init__(self, name: str, cfg: CotagConfig, coding_rng: np.random.Generator,
                 audit: Audit, violations: list[str]):
        super().__init__(name, cfg, violations)
        self.rng = coding_rng
        self.audit = audit
        self.out_links: list[Link] = []
        self._svc: list[CodedPacket] = []
        self._svc_n = 0
        self._svc_nh = 0
        self._pos = 0   # service-list cursor: flow choice and High/Low phase
        self._sent = 0  # actual emissions for the processed cohort
        self._opportunities = 0
        self._cap: Optional[int] = None
        self.sent_total = 0
        self.history: dict[int, tuple[int, int]] = {}  # cohort -> (opps, sends)

    @staticmethod
    def _flow_interleave(packets: list[CodedPacket]) -> list[CodedPacket]:
        """Round-robin across flows, preserving per-flow arrival order."""
        by_flow: dict[int, deque] = {}
        for p in packets:
            by_flow.setdefault(p.flow_id, deque()).append(p)
        rotation = deque(by_flow.values())
        out: list[CodedPacket] = []
        while rotation:
            q = rotation.popleft()
            out.append(q.popleft())
            if q:
                rotation.append(q)
        return out

    def _advance(self, label: int, sim: Simulator) -> None:
        if self.processed is not None:
            self.history[self.processed] = (self._opportunities, self._sent)
        self.buffer.discard_below(label)
        self.processed = label
        live = list(self.buffer.order.get(label, []))
        if self.cfg.ap_service == "fair":
            highs = [p for p in live if p.priority is Priority.HIGH]
            lows = [p for p in live if p.priority is not Priority.HIGH]
            live = self._flow_interleave(highs) + self._flow_interleave(lows)
        self._svc = live
        self._svc_n = len(live)
        self._svc_nh = sum(1 for p in live if p.priority is Priority.HIGH)
        self._pos = 0
        self._sent = 0
        self._opportunities = 0
        self._cap = (None if self.cfg.ap_take_limit is None
                     else math.ceil(self.cfg.ap_take_limit * self._svc_n))

    def after_arrival(self, sim: Simulator) -> None:
        for link in self.out_links:
            link.kick(sim)

    def next_packet(self, link: Link, sim: Simulator) -> Optional[CodedPacket]:
        if self.processed is None or self._svc_n == 0:
            return None
        self._opportunities += 1
        if self._cap is not None and self._sent >= self._cap:
            return None
        label = self.processed
        for _ in range(self._svc_n):
            driver = self._svc[self._pos % self._svc_n]
            taking = self._pos >= self._svc_n
            live = self.buffer.by_label.get(label, {}).get(driver.flow_id)
            if not live:
                self._pos += 1  # flow fully evicted since the snapshot
                continue
            prio = Priority.LOW if taking else driver.priority
            pkt = recode(live, random_coeffs(len(live), self.rng), prio)
            self._pos += 1
            self._sent += 1
            self.sent_total += 1
            self.audit.ap_sent(self.name, label, driver.flow_id)
            return pkt
        return None

    def finish(self) -> None:
        if self.processed is not None:
            self.history[self.processed] = (self._opportunities, self._sent)

    def check_giving_bound(self) -> None:
        self.finish()
        for cohort, (opps, sends) in self.history.items():
            if sends > opps:
                self.violations.append(
                    f"{self.name}: cohort {cohort} sent {sends} > opportunities {opps}")


class DeviceNode(_GatedNode):
    """Mobile device: label-gated decode and in-order delivery to the sink."""

    def __init__(self, name: str, cfg: CotagConfig, audit: Audit,
                 violations: list[str],
                 on_deliver: Callable[[int, object, Optional[bytes], Simulator], None]):
        super().__init__(name, cfg, violations)
        self.audit = audit
        self.on_deliver = on_deliver
        self.delivered_sources = 0
        self.failed_generations = 0
        self.decoded_generations = 0
        self.lost_sources = 0
        self.stale_discarded = 0
        self._last_delivered_cohort: dict[int, int] = {}

    def _advance(self, label: int, sim: Simulator) -> None:
        self.stale_discarded += self.buffer.discard_below(label)
        flows = self.buffer.by_label.get(label, {})
        for flow_id in list(flows):
            pkts = flows[flow_id]
            g = pkts[0].generation_size
            if any(p.generation_size != g for p in pkts):
                self.protocol_errors += 1
                self.violations.append(
                    f"{self.name}: generation size mismatch in cohort {label} flow {flow_id}")
                continue
            byte_mode = pkts[0].payload is not None
            dec = Decoder(flow_id, label, g, pkts[0].payload_len if byte_mode else 0)
            for p in pkts:
                if byte_mode:
                    dec.insert(p)
                else:
                    dec.insert_row(p.coeffs)
            if dec.complete:
                self._deliver(label, flow_id, pkts[0].generation, dec, byte_mode, sim)
            else:
                self.failed_generations += 1
                self.lost_sources += g
                self.audit.decoded(label, flow_id, False)
        self.buffer.consume_label(label)
        self.processed = label

    def _deliver(self, label: int, flow_id: int, gen: Generation, dec: Decoder,
                 byte_mode: bool, sim: Simulator) -> None:
        prev = self._last_delivered_cohort.get(flow_id)
        if prev is not None and label <= prev:
            self.violations.append(
                f"{self.name}: stale delivery of cohort {label} after {prev} "
                f"for flow {flow_id}")
        self._last_delivered_cohort[flow_id] = label
        payloads = dec.extract_payloads() if byte_mode else None
        sources = gen.sources if gen is not None else None
        g = dec.gen_size
        for i in range(g):
            source = sources[i] if sources is not None else None
            payload = payloads[i] if payloads is not None else None
            self.on_deliver(flow_id, source, payload, sim)
        self.delivered_sources += g
        self.decoded_generations += 1
        self.audit.delivered(label, flow_id, g)
        self.audit.decoded(label, flow_id, True)

    def reconcile(self) -> None:
        # accepted = evicted + discarded-stale + consumed-at-decode + remaining
        q = self.buffer.queue
        consumed = q.enqueued - len(q) - q.evicted_low - self.stale_discarded
        if consumed < 0:
            self.violations.append(
                f"{self.name}: buffer ledger out of balance (consumed {consumed})")
