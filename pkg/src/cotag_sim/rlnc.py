"""Generation-based random linear network coding over GF(2^8).

A generation is one flow's source packets within one cohort interval. Coded
packets carry the full coefficient vector in their header; access points
re-encode by composing coefficients, so a combination of combinations stays
a combination of the original sources.

Generations come in two flavors sharing one code path:

* byte mode - `blocks` holds the length-prefixed, zero-padded source
  payloads and coded packets carry real payload bytes;
* symbolic mode - `blocks` is None, packets carry only their (real)
  coefficient vector plus size accounting. Rank arithmetic is identical,
  which is all the large-scale experiments need.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Optional, Sequence

import numpy as np

from . import gf

LENGTH_PREFIX = 2  # bytes, big-endian true length ahead of each source block
MAX_SOURCE_LEN = 0xFFFF

HEADER_FORMAT = ">IQHB"  # flow_id | cohort label | generation size | priority
HEADER_LEN = struct.calcsize(HEADER_FORMAT)


class Priority(IntEnum):
    LOW = 0
    HIGH = 1


class InsertOutcome(Enum):
    INNOVATIVE = "innovative"
    REDUNDANT = "redundant"


class GenerationMismatch(ValueError):
    """Packet metadata does not match the decoder's generation."""


def pack_source_blocks(payloads: Sequence[bytes]) -> np.ndarray:
    """Length-prefix each payload and zero-pad to a common width."""
    if not payloads:
        raise ValueError("generation needs at least one source payload")
    for i, p in enumerate(payloads):
        if len(p) > MAX_SOURCE_LEN:
            raise ValueError(f"source payload {i} exceeds {MAX_SOURCE_LEN} bytes")
    width = LENGTH_PREFIX + max(len(p) for p in payloads)
    blocks = np.zeros((len(payloads), width), dtype=np.uint8)
    for i, p in enumerate(payloads):
        blocks[i, :LENGTH_PREFIX] = (len(p) >> 8, len(p) & 0xFF)
        blocks[i, LENGTH_PREFIX:LENGTH_PREFIX + len(p)] = np.frombuffer(p, dtype=np.uint8)
    return blocks


def unpack_source_blocks(blocks: np.ndarray) -> list[bytes]:
    """Invert pack_source_blocks, restoring exact payload lengths."""
    out = []
    for row in blocks:
        n = (int(row[0]) << 8) | int(row[1])
        if LENGTH_PREFIX + n > row.shape[0]:
            raise ValueError(f"corrupt length prefix {n} for width {row.shape[0]}")
        out.append(row[LENGTH_PREFIX:LENGTH_PREFIX + n].tobytes())
    return out


@dataclass(frozen=True)
class Generation:
    """Coding unit: one flow's source packets of one cohort."""

    flow_id: int
    cohort: int
    width: int                              # padded block width in bytes
    blocks: Optional[np.ndarray] = None     # (g, width) uint8, byte mode only
    sources: Optional[tuple] = None         # opaque per-source handles

    def __post_init__(self):
        if self.cohort < 0:
            raise ValueError("cohort label must be non-negative")
        if self.blocks is None and self.sources is None:
            raise ValueError("generation needs payload blocks or source handles")
        if self.blocks is not None and self.sources is not None \
                and self.blocks.shape[0] != len(self.sources):
            raise ValueError("blocks/sources length mismatch")

    @property
    def size(self) -> int:
        if self.blocks is not None:
            return int(self.blocks.shape[0])
        return len(self.sources)

    @classmethod
    def from_payloads(cls, flow_id: int, cohort: int, payloads: Sequence[bytes],
                      sources: Optional[tuple] = None) -> "Generation":
        blocks = pack_source_blocks(payloads)
        return cls(flow_id=flow_id, cohort=cohort, width=blocks.shape[1],
                   blocks=blocks, sources=sources)

    @classmethod
    def symbolic(cls, flow_id: int, cohort: int, sources: tuple,
                 width: int) -> "Generation":
        return cls(flow_id=flow_id, cohort=cohort, width=width,
                   blocks=None, sources=tuple(sources))


@dataclass(eq=False)  # identity semantics; buffers remove specific packets
class CodedPacket:
    flow_id: int
    cohort: int
    priority: Priority
    coeffs: np.ndarray                     # (g,) uint8
    payload: Optional[np.ndarray]          # (width,) uint8, byte mode only
    payload_len: int
    generation: Optional[Generation] = field(default=None, repr=False)

    @property
    def generation_size(self) -> int:
        return int(self.coeffs.shape[0])

    @property
    def wire_size_bytes(self) -> int:
        return HEADER_LEN + self.generation_size + self.payload_len


def random_coeffs(g: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform coefficient vector, redrawn if it comes out all-zero."""
    while True:
        c = rng.integers(0, 256, size=g, dtype=np.uint8)
        if c.any():
            return c


def encode(gen: Generation, coeffs: np.ndarray,
           priority: Priority = Priority.HIGH) -> CodedPacket:
    """Fresh combination of a generation's source blocks."""
    coeffs = np.asarray(coeffs, dtype=np.uint8)
    if coeffs.shape[0] != gen.size:
        raise ValueError(
            f"coefficient vector length {coeffs.shape[0]} != generation size {gen.size}")
    payload = None
    if gen.blocks is not None:
        payload = gf.combine_blocks(coeffs, gen.blocks)
    return CodedPacket(flow_id=gen.flow_id, cohort=gen.cohort, priority=priority,
                       coeffs=coeffs.copy(), payload=payload, payload_len=gen.width,
                       generation=gen)


def recode(packets: Sequence[CodedPacket], coeffs: np.ndarray,
           priority: Priority = Priority.LOW) -> CodedPacket:
    """Combine already-coded packets; coefficients compose in the header."""
    if not packets:
        raise ValueError("cannot recode an empty packet set")
    head = packets[0]
    for p in packets[1:]:
        if (p.flow_id, p.cohort, p.generation_size, p.payload_len) != \
                (head.flow_id, head.cohort, head.generation_size, head.payload_len):
            raise GenerationMismatch("recode inputs span multiple generations")
    coeffs = np.asarray(coeffs, dtype=np.uint8)
    if coeffs.shape[0] != len(packets):
        raise ValueError("one recoding coefficient per input packet required")
    coeff_rows = np.stack([p.coeffs for p in packets])
    new_coeffs = gf.combine_blocks(coeffs, coeff_rows)
    payload = None
    if head.payload is not None:
        payload_rows = np.stack([p.payload for p in packets])
        payload = gf.combine_blocks(coeffs, payload_rows)
    return CodedPacket(flow_id=head.flow_id, cohort=head.cohort, priority=priority,
                       coeffs=new_coeffs, payload=payload, payload_len=head.payload_len,
                       generation=head.generation)


class Decoder:
    """Incremental Gaussian elimination over one generation."""

    def __init__(self, flow_id: int, cohort: int, gen_size: int, width: int = 0):
        if gen_size < 1:
            raise ValueError("generation size must be >= 1")
        self.flow_id = flow_id
        self.cohort = cohort
        self.gen_size = gen_size
        self.width = width
        self._coeff_rows = np.zeros((gen_size, gen_size), dtype=np.uint8)
        self._payload_rows = np.zeros((gen_size, width), dtype=np.uint8)
        self._has_pivot = np.zeros(gen_size, dtype=np.bool_)
        self.rank = 0
        self._reduced = False

    def insert(self, pkt: CodedPacket) -> InsertOutcome:
        if (pkt.flow_id, pkt.cohort) != (self.flow_id, self.cohort):
            raise GenerationMismatch(
                f"packet ({pkt.flow_id}, {pkt.cohort}) does not belong to "
                f"generation ({self.flow_id}, {self.cohort})")
        if pkt.generation_size != self.gen_size:
            raise GenerationMismatch(
                f"generation size {pkt.generation_size} != decoder size {self.gen_size}")
        return self.insert_row(pkt.coeffs, pkt.payload)

    def insert_row(self, coeffs: np.ndarray,
                   payload: Optional[np.ndarray] = None) -> InsertOutcome:
        row = np.array(coeffs, dtype=np.uint8)
        if payload is None:
            pay = np.zeros(self.width, dtype=np.uint8)
        else:
            pay = np.array(payload, dtype=np.uint8)
            if pay.shape[0] != self.width:
                raise GenerationMismatch(
                    f"payload width {pay.shape[0]} != decoder width {self.width}")
        pivot = gf.eliminate_insert(self._coeff_rows, self._payload_rows,
                                    self._has_pivot, row, pay)
        if pivot < 0:
            return InsertOutcome.REDUNDANT
        self.rank += 1
        self._reduced = False
        return InsertOutcome.INNOVATIVE

    @property
    def complete(self) -> bool:
        return self.rank == self.gen_size

    def extract_blocks(self) -> Optional[np.ndarray]:
        """Source blocks in source order, or None while rank-deficient."""
        if not self.complete:
            return None
        if not self._reduced:
            gf.back_substitute(self._coeff_rows, self._payload_rows)
            self._reduced = True
        return self._payload_rows

    def extract_payloads(self) -> Optional[list[bytes]]:
        """Exact original payloads in source order, or None on failure."""
        blocks = self.extract_blocks()
        if blocks is None:
            return None
        return unpack_source_blocks(blocks)


def pack_packet(pkt: CodedPacket) -> bytes:
    """Wire layout: flow_id(4) | label(8) | g(2) | priority(1) | coeffs | payload."""
    if pkt.payload is None:
        raise ValueError("symbolic packets have no wire form")
    header = struct.pack(HEADER_FORMAT, pkt.flow_id, pkt.cohort,
                         pkt.generation_size, int(pkt.priority))
    return header + pkt.coeffs.tobytes() + pkt.payload.tobytes()


def unpack_packet(data: bytes) -> CodedPacket:
    if len(data) < HEADER_LEN:
        raise ValueError("truncated packet header")
    flow_id, cohort, g, prio = struct.unpack(HEADER_FORMAT, data[:HEADER_LEN])
    if len(data) < HEADER_LEN + g:
        raise ValueError("truncated coefficient vector")
    coeffs = np.frombuffer(data, dtype=np.uint8, count=g, offset=HEADER_LEN).copy()
    payload = np.frombuffer(data, dtype=np.uint8, offset=HEADER_LEN + g).copy()
    return CodedPacket(flow_id=flow_id, cohort=cohort, priority=Priority(prio),
                       coeffs=coeffs, payload=payload, payload_len=payload.shape[0])
