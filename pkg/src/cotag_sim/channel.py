"""Four-state Markov model of two correlated mmWave link bandwidths.

Each link's rate is quantized High/Low; the joint state is one of
HH, HL, LH, LL. Per step, link 1 flips its level with probability p and
link 2 matches link 1's new level with probability q (and mismatches
otherwise, independent of its own previous level). Within a state each
link's rate is Gaussian around its level mean, truncated at zero.

Also ingests measured rate traces and calibrates (p, q, rate levels)
from them by median quantization.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple, Optional, Sequence

import numpy as np


class ChannelState(IntEnum):
    # bit 1 = link 1 high, bit 0 = link 2 high
    LL = 0
    LH = 1
    HL = 2
    HH = 3

    @property
    def link1_high(self) -> bool:
        return bool(self.value & 2)

    @property
    def link2_high(self) -> bool:
        return bool(self.value & 1)

    @staticmethod
    def from_levels(link1_high: bool, link2_high: bool) -> "ChannelState":
        return ChannelState((int(link1_high) << 1) | int(link2_high))


@dataclass(frozen=True)
class MarkovParams:
    p: float            # per-step flip probability of link 1's level
    q: float            # probability link 2 matches link 1's new level
    step_s: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if not 0.0 <= self.q <= 1.0:
            raise ValueError(f"q must be in [0, 1], got {self.q}")
        if self.step_s <= 0:
            raise ValueError(f"step must be positive, got {self.step_s}")


@dataclass(frozen=True)
class RateLevels:
    """Gaussian rate parameters per level, in Gbps.

    The defaults read the configured spreads as standard deviations;
    use from_variances() to treat them as variances instead.
    """

    mean_low: float = 3.0
    mean_high: float = 10.0
    std_low: float = 0.3
    std_high: float = 1.0

    def __post_init__(self):
        if self.mean_low <= 0 or self.mean_high <= 0:
            raise ValueError("level means must be positive")
        if self.mean_high <= self.mean_low:
            raise ValueError("mean_high must exceed mean_low")
        if self.std_low < 0 or self.std_high < 0:
            raise ValueError("spreads must be non-negative")

    @classmethod
    def from_variances(cls, mean_low: float, mean_high: float,
                       var_low: float, var_high: float) -> "RateLevels":
        return cls(mean_low=mean_low, mean_high=mean_high,
                   std_low=math.sqrt(var_low), std_high=math.sqrt(var_high))

    def mean(self, high: bool) -> float:
        return self.mean_high if high else self.mean_low

    def std(self, high: bool) -> float:
        return self.std_high if high else self.std_low

    def stationary_mean(self) -> float:
        """Long-run mean rate of one link (levels are occupied half the time)."""
        return 0.5 * (self.mean_low + self.mean_high)


def transition_prob(frm: ChannelState, to: ChannelState,
                    params: MarkovParams) -> float:
    """One-step transition probability between joint states."""
    flip = params.p if to.link1_high != frm.link1_high else 1.0 - params.p
    match = params.q if to.link2_high == to.link1_high else 1.0 - params.q
    return flip * match


def transition_matrix(params: MarkovParams) -> np.ndarray:
    m = np.empty((4, 4), dtype=np.float64)
    for a in ChannelState:
        for b in ChannelState:
            m[a, b] = transition_prob(a, b, params)
    return m


def stationary_distribution(params: MarkovParams) -> np.ndarray:
    """Stationary occupancy indexed by ChannelState value (LL, LH, HL, HH)."""
    q = params.q
    return np.array([q / 2, (1 - q) / 2, (1 - q) / 2, q / 2])


def state_correlation(params: MarkovParams) -> float:
    """Stationary correlation of the two H/L indicator processes."""
    return 2.0 * params.q - 1.0


def q_for_correlation(corr: float) -> float:
    """Inverse of state_correlation."""
    if not -1.0 <= corr <= 1.0:
        raise ValueError(f"correlation must be in [-1, 1], got {corr}")
    return (1.0 + corr) / 2.0


def step_state(st: ChannelState, params: MarkovParams,
               rng: np.random.Generator) -> ChannelState:
    """Sample the next joint state (two uniform draws: flip, then match)."""
    link1 = st.link1_high ^ (rng.random() < params.p)
    link2 = link1 ^ (not (rng.random() < params.q))
    return ChannelState.from_levels(link1, link2)

def simulate_states(start: ChannelState, params: MarkovParams, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """The next n states after `start`, drawn exactly as n step_state calls."""
    u = rng.random((n, 2))
    flips = u[:, 0] < params.p
    link1 = np.logical_xor.accumulate(flips) ^ start.link1_high
    link2 = link1 ^ ~(u[:, 1] < params.q)
    return (link1.astype(np.int8) << 1) | link2.astype(np.int8)


def sample_bandwidth(st: ChannelState, levels: RateLevels,
                     rng: np.random.Generator) -> tuple[float, float]:
    """Per-link Gbps draws for the current state, clamped at zero."""
    r1 = rng.normal(levels.mean(st.link1_high), levels.std(st.link1_high))
    r2 = rng.normal(levels.mean(st.link2_high), levels.std(st.link2_high))
    return max(0.0, r1), max(0.0, r2)


def sample_bandwidth_path(states: np.ndarray, levels: RateLevels,
                          rng: np.random.Generator) -> np.ndarray:
    """(n, 2) rate draws for a state path; matches n sample_bandwidth calls."""
    n = states.shape[0]
    high = np.stack([(states & 2) != 0, (states & 1) != 0], axis=1)
    means = np.where(high, levels.mean_high, levels.mean_low)
    stds = np.where(high, levels.std_high, levels.std_low)
    return np.maximum(0.0, rng.standard_normal((n, 2)) * stds + means)


class ChannelProcess:
    """Single-owner mutable state: step the chain and draw both link rates."""

    def __init__(self, params: MarkovParams, levels: RateLevels,
                 rng: np.random.Generator,
                 start: ChannelState = ChannelState.HH):
        self.params = params
        self.levels = levels
        self.rng = rng
        self.state = start

    def advance(self) -> tuple[ChannelState, float, float]:
        self.state = step_state(self.state, self.params, self.rng)
        r1, r2 = sample_bandwidth(self.state, self.levels, self.rng)
        return self.state, r1, r2


# ---------------------------------------------------------------------------
# Trace ingestion and calibration
# ---------------------------------------------------------------------------

class TraceRecord(NamedTuple):
    t_s: float
    rate1_gbps: float
    rate2_gbps: float


TRACE_HEADER = ["t_s", "rate1_gbps", "rate2_gbps"]


class TraceFormatError(ValueError):
    """Malformed trace file; message carries the offending line number."""


class CalibrationError(ValueError):
    pass


def load_trace(path, duplicate_single: bool = False) -> list[TraceRecord]:
    """Read a rate trace CSV; validates order, signs, and shape.

    With duplicate_single, two-column files (t_s, rate1_gbps) are accepted
    and the single measured link is mirrored onto the second.
    """
    records: list[TraceRecord] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceFormatError(f"{path}: empty trace file") from None
        header = [h.strip() for h in header]
        if header not in (TRACE_HEADER, TRACE_HEADER[:2]):
            raise TraceFormatError(
                f"{path}: line 1: expected header {','.join(TRACE_HEADER)}"
                f" (optionally without the second rate column), got {','.join(header)}")
        single = len(header) == 2
        if single and not duplicate_single:
            raise TraceFormatError(
                f"{path}: line 1: single-link trace; pass the duplicate-link flag "
                f"to mirror it onto both links")
        prev_t = None
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise TraceFormatError(
                    f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row]
            except ValueError:
                raise TraceFormatError(
                    f"{path}: line {lineno}: non-numeric field in {row}") from None
            t = vals[0]
            r1 = vals[1]
            r2 = vals[1] if single else vals[2]
            if r1 < 0 or r2 < 0:
                raise TraceFormatError(f"{path}: line {lineno}: negative rate")
            if prev_t is not None and t <= prev_t:
                raise TraceFormatError(
                    f"{path}: line {lineno}: timestamps must be strictly increasing "
                    f"({t} after {prev_t})")
            prev_t = t
            records.append(TraceRecord(t, r1, r2))
    return records


def save_trace(records: Sequence[TraceRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for r in records:
            writer.writerow([repr(r.t_s), repr(r.rate1_gbps), repr(r.rate2_gbps)])


def generate_trace(params: MarkovParams, levels: RateLevels, n: int,
                   rng: np.random.Generator,
                   start: ChannelState = ChannelState.HH) -> list[TraceRecord]:
    """Synthesize a trace from the model itself (calibration round trips)."""
    states = simulate_states(start, params, n, rng)
    rates = sample_bandwidth_path(states, levels, rng)
    return [TraceRecord(i * params.step_s, float(rates[i, 0]), float(rates[i, 1]))
            for i in range(n)]


def calibrate_from_trace(trace: Sequence[TraceRecord]
                         ) -> tuple[MarkovParams, RateLevels]:
    """Median-quantize each link and estimate (p, q) plus level Gaussians.

    p is the flip frequency of link 1's level; q the frequency with which
    link 2's level matches link 1's. Level means/stds pool both links'
    quantized samples. A trace that never leaves one level yields collapsed
    rate levels (the missing level is nudged above the observed one).
    """
    if len(trace) < 2:
        raise CalibrationError(f"need at least 2 trace records, got {len(trace)}")
    t = np.array([r.t_s for r in trace])
    r1 = np.array([r.rate1_gbps for r in trace])
    r2 = np.array([r.rate2_gbps for r in trace])
    ind1 = r1 > np.median(r1)
    ind2 = r2 > np.median(r2)
    p = float(np.mean(ind1[1:] != ind1[:-1]))
    q = float(np.mean(ind1[1:] == ind2[1:]))
    step = float(np.median(np.diff(t)))
    high = np.concatenate([r1[ind1], r2[ind2]])
    low = np.concatenate([r1[~ind1], r2[~ind2]])
    if low.size == 0:
        low = high
    if high.size == 0:
        high = low
    mean_low = float(low.mean())
    mean_high = float(high.mean())
    if mean_high <= mean_low:  # single-level degenerate trace
        mean_high = mean_low + max(1.0, abs(mean_low)) * 1e-9
    levels = RateLevels(mean_low=mean_low, mean_high=mean_high,
                        std_low=float(low.std()), std_high=float(high.std()))
    return MarkovParams(p=p, q=q, step_s=step), levels
