"""Deterministic discrete-event engine.

Integer-nanosecond clock; events dispatch in (time, insertion sequence)
order, so identical (config, seed) pairs replay byte-identically on any
platform. Links model serialization at the rate in effect when a packet's
transmission starts, plus propagation delay and an independent per-packet
error probability. Node buffers are bounded queues with the priority-aware
drop policy: a full queue discards an incoming Low, and an incoming High
evicts the most recently received Low if one exists.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from enum import Enum
from typing import Any, Callable, Optional

import numpy as np

NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000


def s_to_ns(s: float) -> int:
    return int(round(s * NS_PER_S))


def ms_to_ns(ms: float) -> int:
    return int(round(ms * NS_PER_MS))


class SchedulingError(RuntimeError):
    pass


class EventKind(Enum):
    PACKET_ARRIVAL = "arrival"
    TRANSMIT_OPPORTUNITY = "tx_opp"
    COHORT_TICK = "cohort_tick"
    BANDWIDTH_UPDATE = "bw_update"
    FLOW_CONTROL = "flow_ctl"


@dataclass(frozen=True)
class Event:
    time: int
    seq: int
    kind: EventKind
    target: str
    data: Any = None


class Simulator:
    """Event queue, clock, and handler registry for one simulation instance."""

    def __init__(self, event_log: Optional[list[str]] = None):
        self.now = 0
        self._heap: list[tuple[int, int, Event]] = []
        self._seq = 0
        self._handlers: dict[str, Callable[[Event, "Simulator"], Optional[str]]] = {}
        self.event_log = event_log
        self.dispatched = 0

    def register(self, name: str,
                 handler: Callable[[Event, "Simulator"], Optional[str]]) -> None:
        if name in self._handlers:
            raise ValueError(f"handler name collision: {name}")
        self._handlers[name] = handler

    def schedule(self, time: int, kind: EventKind, target: str,
                 data: Any = None) -> None:
        if time < self.now:
            raise SchedulingError(
                f"cannot schedule {kind.value} at {time} ns; clock is at {self.now} ns")
        ev = Event(time=time, seq=self._seq, kind=kind, target=target, data=data)
        self._seq += 1
        heapq.heappush(self._heap, (time, ev.seq, ev))

    def _dispatch(self, ev: Event) -> None:
        self.now = ev.time
        self.dispatched += 1
        outcome = self._handlers[ev.target](ev, self)
        if self.event_log is not None:
            pkt = ev.data
            if isinstance(pkt, tuple):
                pkt = pkt[0]
            flow = getattr(pkt, "flow_id", "")
            cohort = getattr(pkt, "cohort", "")
            prio = getattr(pkt, "priority", None)
            prio = prio.name if prio is not None else ""
            self.event_log.append(
                f"{ev.time},{ev.target},{ev.kind.value},{flow},{cohort},{prio},"
                f"{outcome or ''}")

    def run_until(self, t: int) -> int:
        """Dispatch everything due at or before t; returns the dispatch count."""
        count = 0
        while self._heap and self._heap[0][0] <= t:
            _, _, ev = heapq.heappop(self._heap)
            self._dispatch(ev)
            count += 1
        self.now = max(self.now, t)
        return count

    def run(self) -> int:
        count = 0
        while self._heap:
            _, _, ev = heapq.heappop(self._heap)
            self._dispatch(ev)
            count += 1
        return count


# ---------------------------------------------------------------------------
# Bounded priority queue
# ---------------------------------------------------------------------------

class QueueOutcome(Enum):
    ENQUEUED = "enqueued"
    DROPPED_INCOMING = "dropped_incoming"
    EVICTED_LOW = "evicted_low"


def _is_high(pkt) -> bool:
    prio = getattr(pkt, "priority", None)
    return prio is None or int(prio) == 1


class BoundedQueue:
    """FIFO buffer with the High/Low drop policy.

    When full: an incoming Low is discarded; an incoming High evicts the
    most recently received Low if the buffer holds one, else is discarded.
    Packets without a priority attribute count as High (plain traffic under
    tail-drop).
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self._items: list = []
        self._low_count = 0
        self.enqueued = 0
        self.dropped_incoming = 0
        self.evicted_low = 0

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    @property
    def full(self) -> bool:
        return len(self._items) >= self.capacity

    def enqueue_with_drop(self, pkt) -> tuple[QueueOutcome, Optional[Any]]:
        """Returns (outcome, evicted packet or None)."""
        evicted = None
        if self.full:
            if not _is_high(pkt) or self._low_count == 0:
                self.dropped_incoming += 1
                return QueueOutcome.DROPPED_INCOMING, None
            for i in range(len(self._items) - 1, -1, -1):
                if not _is_high(self._items[i]):
                    evicted = self._items.pop(i)
                    break
            assert evicted is not None and not _is_high(evicted), \
                "High packet evicted while a Low was present"
            self._low_count -= 1
            self.evicted_low += 1
        self._items.append(pkt)
        if not _is_high(pkt):
            self._low_count += 1
        self.enqueued += 1
        if evicted is not None:
            return QueueOutcome.EVICTED_LOW, evicted
        return QueueOutcome.ENQUEUED, None

    def popleft(self):
        pkt = self._items.pop(0)
        if not _is_high(pkt):
            self._low_count -= 1
        return pkt

    def remove_if(self, pred) -> list:
        """Remove and return all packets matching pred, preserving order."""
        removed = [p for p in self._items if pred(p)]
        if removed:
            self._items = [p for p in self._items if not pred(p)]
            self._low_count = sum(1 for p in self._items if not _is_high(p))
        return removed


# ---------------------------------------------------------------------------
# Links
# ---------------------------------------------------------------------------

class Link:
    """Unidirectional link: pulls packets from its source node when idle.

    Serialization uses the bps in effect at transmission start; a packet
    pulled while bps == 0 waits parked until the next bandwidth update.
    PER losses are drawn per packet from the link's error stream.
    """

    def __init__(self, name: str, src, dst, bps: float, prop_delay_ns: int = 0,
                 per: float = 0.0, per_rng: Optional[np.random.Generator] = None):
        if not 0.0 <= per <= 1.0:
            raise ValueError(f"per must be in [0, 1], got {per}")
        if prop_delay_ns < 0:
            raise ValueError("propagation delay must be >= 0")
        if bps < 0:
            raise ValueError("bandwidth must be >= 0")
        if per > 0 and per_rng is None:
            raise ValueError(f"link {name} has per={per} but no error stream")
        self.name = name
        self.src = src
        self.dst = dst
        self.bps = float(bps)
        self.prop_delay_ns = prop_delay_ns
        self.per = per
        self.per_rng = per_rng
        self.busy = False
        self._parked = None  # packet pulled at zero bandwidth
        # accounting
        self.pulled = 0
        self.delivered = 0
        self.dropped_per = 0
        self.bytes_delivered = 0
        self._last_label = None

    def attach(self, sim: Simulator) -> None:
        sim.register(self.name, self._handle)

    def set_bandwidth(self, bps: float, sim: Simulator) -> None:
        self.bps = float(bps)
        if self._parked is not None and self.bps > 0:
            pkt, self._parked = self._parked, None
            self._start_transmission(pkt, sim)
        elif not self.busy:
            self.kick(sim)

    def kick(self, sim: Simulator) -> None:
        """Serve the source node if idle; no-op while busy or parked."""
        if self.busy or self._parked is not None:
            return
        pkt = self.src.next_packet(self, sim)
        if pkt is None:
            return
        self.pulled += 1
        label = getattr(pkt, "cohort", None)
        if label is not None:
            assert self._last_label is None or label >= self._last_label, \
                f"label regression on {self.name}: {label} after {self._last_label}"
            self._last_label = label
        if self.bps <= 0:
            self._parked = pkt
            return
        self._start_transmission(pkt, sim)

    def _start_transmission(self, pkt, sim: Simulator) -> None:
        self.busy = True
        ser_ns = int(round(pkt.wire_size_bytes * 8 * NS_PER_S / self.bps))
        dropped = self.per > 0 and (self.per_rng.random() < self.per)
        sim.schedule(sim.now + ser_ns, EventKind.TRANSMIT_OPPORTUNITY, self.name,
                     data=pkt if dropped else None)
        if not dropped:
            sim.schedule(sim.now + ser_ns + self.prop_delay_ns,
                         EventKind.PACKET_ARRIVAL, self.dst.name, data=(pkt, self))

    def _handle(self, ev: Event, sim: Simulator) -> Optional[str]:
        # transmission complete; ev.data holds the packet only if PER ate it
        self.busy = False
        outcome = None
        if ev.data is not None:
            self.dropped_per += 1
            outcome = "dropped_per"
        else:
            self.delivered += 1
        self.kick(sim)
        return outcome

    @property
    def in_flight(self) -> int:
        return int(self.busy) + int(self._parked is not None)

    def reconcile(self) -> None:
        assert self.pulled == self.delivered + self.dropped_per + self.in_flight, (
            f"link {self.name}: pulled {self.pulled} != delivered {self.delivered} "
            f"+ per-drops {self.dropped_per} + in-flight {self.in_flight}")


class Node:
    """Base event-loop participant; nodes own their state exclusively."""

    def __init__(self, name: str):
        self.name = name

    def attach(self, sim: Simulator) -> None:
        sim.register(self.name, self._handle)

    def _handle(self, ev: Event, sim: Simulator) -> Optional[str]:
        if ev.kind is EventKind.PACKET_ARRIVAL:
            pkt, link = ev.data
            link.bytes_delivered += pkt.wire_size_bytes
            return self.on_packet(pkt, link, sim)
        return self.on_event(ev, sim)

    def on_packet(self, pkt, link, sim: Simulator) -> Optional[str]:
        raise NotImplementedError

    def on_event(self, ev: Event, sim: Simulator) -> Optional[str]:
        raise NotImplementedError(f"{self.name}: unexpected {ev.kind}")

    def next_packet(self, link: Link, sim: Simulator):
        return None


def make_streams(seed: int, names: tuple[str, ...] = ("channel", "per", "coding",
                                                      "transport")) -> dict:
    """Named independent PCG64 streams derived from one seed.

    Separate streams keep one subsystem's draws from perturbing another's.
    """
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(names))
    return {name: np.random.Generator(np.random.PCG64(child))
            for name, child in zip(names, children)}
