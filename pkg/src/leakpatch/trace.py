"""Execution traces: binary format, address normalization, MI leakage analysis.

Trace files (extension ``.zltr``) are little-endian throughout:

    header:  magic ``ZLTR`` (4 bytes), version u16 (currently 1), input_id u32
    records: kind u8, ip u64, payload u64, aux u64 -- repeated to EOF

One file per program input, named ``trace_<input_id>.zltr``. Producers read
the output directory from ``ZLTR_OUT`` and the input id from
``ZLTR_INPUT_ID``; the secret input file is passed as the first program
argument. ``ip`` is module-relative (or a source line for shim-instrumented
targets); ``payload`` is the observed value (address, branch flag, ...);
``aux`` is kind-specific (e.g. allocation size).

Leakage analysis treats execution as deterministic given the input, so with
inputs drawn uniformly the mutual information between input and an
observable O reduces to the entropy of O's empirical distribution:

    MI = -sum_o (count_o / n) * log2(count_o / n)

The per-instruction observable is the ordered concatenation of payloads the
instruction produced during one execution (empty if it never ran).
"""

from __future__ import annotations

import math
import os
import re
import struct
from collections import Counter
from dataclasses import dataclass
from enum import Enum, IntEnum
from pathlib import Path
from typing import BinaryIO, Iterable, Optional

TRACE_MAGIC = b"ZLTR"
TRACE_VERSION = 1
TRACE_SUFFIX = ".zltr"
TRACE_DIR_ENV = "ZLTR_OUT"
TRACE_INPUT_ENV = "ZLTR_INPUT_ID"

_HEADER = struct.Struct("<4sHI")
_RECORD = struct.Struct("<BQQQ")
_PAYLOAD = struct.Struct("<Q")

_TRACE_NAME = re.compile(r"^trace_(\d+)\.zltr$")


# ---------------------------------------------------------------------------
# errors


class TraceFormatError(ValueError):
    """Base class for trace decoding failures."""


class BadMagic(TraceFormatError):
    pass


class UnsupportedVersion(TraceFormatError):
    pass


class TruncatedRecord(TraceFormatError):
    """Stream ended mid-record (trailing bytes are an error, not padding)."""


class UnknownEventKind(TraceFormatError):
    pass


class EmptyBundle(ValueError):
    """Analysis needs at least two traces to compare."""


# ---------------------------------------------------------------------------
# model


class EventKind(IntEnum):
    BRANCH = 0
    MEM_READ = 1
    MEM_WRITE = 2
    ALLOC = 3
    FREE = 4
    CALL = 5
    RETURN = 6


class Channel(Enum):
    MEMORY_ACCESS = "memory-access"
    CONTROL_FLOW = "control-flow"


# Alloc/Free shape the address space; they are not observations themselves.
_CHANNEL_OF_KIND = {
    EventKind.BRANCH: Channel.CONTROL_FLOW,
    EventKind.CALL: Channel.CONTROL_FLOW,
    EventKind.RETURN: Channel.CONTROL_FLOW,
    EventKind.MEM_READ: Channel.MEMORY_ACCESS,
    EventKind.MEM_WRITE: Channel.MEMORY_ACCESS,
}


@dataclass(frozen=True)
class TraceEvent:
    kind: EventKind
    ip: int
    payload: int
    aux: int = 0


@dataclass(frozen=True)
class ExecutionTrace:
    input_id: int
    events: tuple[TraceEvent, ...]


@dataclass(frozen=True)
class TraceBundle:
    """Traces of one target over distinct inputs, ready for comparison."""

    traces: tuple[ExecutionTrace, ...]

    def __post_init__(self) -> None:
        ids = [t.input_id for t in self.traces]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate input_id in bundle")

    @property
    def n(self) -> int:
        return len(self.traces)


@dataclass(frozen=True)
class LeakageFinding:
    ip: int
    channel: Channel
    mi_bits: float
    distinct_observations: int


# ---------------------------------------------------------------------------
# binary format

def write_trace(stream: BinaryIO, trace: ExecutionTrace) -> None:
    stream.write(_HEADER.pack(TRACE_MAGIC, TRACE_VERSION, trace.input_id))
    for ev in trace.events:
        stream.write(_RECORD.pack(int(ev.kind), ev.ip, ev.payload, ev.aux))


def read_trace_file(stream: BinaryIO) -> ExecutionTrace:
    """Decode one trace. Any trailing garbage is a TruncatedRecord error."""
    head = stream.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise TruncatedRecord(f"header needs {_HEADER.size} bytes, got {len(head)}")
    magic, version, input_id = _HEADER.unpack(head)
    if magic != TRACE_MAGIC:
        raise BadMagic(f"expected {TRACE_MAGIC!r}, got {magic!r}")
    if version != TRACE_VERSION:
        raise UnsupportedVersion(f"version {version} (supported: {TRACE_VERSION})")

    events: list[TraceEvent] = []
    while True:
        raw = stream.read(_RECORD.size)
        if not raw:
            break
        if len(raw) < _RECORD.size:
            raise TruncatedRecord(
                f"record {len(events)} needs {_RECORD.size} bytes, got {len(raw)}"
            )
        kind, ip, payload, aux = _RECORD.unpack(raw)
        try:
            ek = EventKind(kind)
        except ValueError:
            raise UnknownEventKind(f"record {len(events)}: kind byte {kind}") from None
        events.append(TraceEvent(ek, ip, payload, aux))
    return ExecutionTrace(input_id=input_id, events=tuple(events))


def read_trace_path(path: str | Path) -> ExecutionTrace:
    with open(path, "rb") as fh:
        return read_trace_file(fh)


def write_trace_path(path: str | Path, trace: ExecutionTrace) -> None:
    with open(path, "wb") as fh:
        write_trace(fh, trace)


def trace_file_name(input_id: int) -> str:
    return f"trace_{input_id}{TRACE_SUFFIX}"


def load_bundle(directory: str | Path) -> TraceBundle:
    """Read every trace_<id>.zltr under `directory` into a bundle."""
    directory = Path(directory)
    traces = []
    for entry in sorted(os.listdir(directory)):
        m = _TRACE_NAME.match(entry)
        if not m:
            continue
        trace = read_trace_path(directory / entry)
        if trace.input_id != int(m.group(1)):
            raise TraceFormatError(
                f"{entry}: header input_id {trace.input_id} contradicts file name"
            )
        traces.append(trace)
    return TraceBundle(traces=tuple(traces))


# ---------------------------------------------------------------------------
# address normalization
#
# Heap addresses vary run to run (ASLR, allocator state). Memory payloads
# that fall inside a known allocation are rewritten to a stable
# (allocation id, offset) encoding so traces from different runs compare.

ALLOC_REF_BIT = 1 << 63
_OFFSET_MASK = (1 << 32) - 1


def encode_alloc_ref(alloc_id: int, offset: int) -> int:
    if not 0 <= alloc_id < (1 << 31):
        raise ValueError(f"alloc_id out of range: {alloc_id}")
    if not 0 <= offset <= _OFFSET_MASK:
        raise ValueError(f"offset out of range: {offset}")
    return ALLOC_REF_BIT | (alloc_id << 32) | offset


def decode_alloc_ref(payload: int) -> Optional[tuple[int, int]]:
    if not payload & ALLOC_REF_BIT:
        return None
    return (payload >> 32) & ((1 << 31) - 1), payload & _OFFSET_MASK


def normalize_addresses(
    trace: ExecutionTrace,
    allocations: Iterable[tuple[int, int, int]] = (),
) -> ExecutionTrace:
    """Rewrite memory payloads inside known allocations to (id, offset) refs.

    `allocations` pre-registers (alloc_id, base, size) regions live for the
    whole trace. Alloc events in the trace carry a raw base address in
    `payload` and the size in `aux`; they are assigned fresh ids past the
    pre-registered ones and rewritten to carry the id. Free events drop the
    matching region. Payloads outside every live region, and payloads that
    already carry the ref bit, pass through unchanged, so the function is
    idempotent and the result is independent of where the OS placed the heap.
    """
    regions: list[tuple[int, int, int]] = []  # (base, size, id), newest last
    next_id = 0
    for alloc_id, base, size in allocations:
        regions.append((base, size, alloc_id))
        next_id = max(next_id, alloc_id + 1)

    def find(addr: int) -> Optional[tuple[int, int, int]]:
        for base, size, rid in reversed(regions):
            if base <= addr < base + size:
                return base, size, rid
        return None

    out: list[TraceEvent] = []
    for ev in trace.events:
        if ev.kind is EventKind.ALLOC:
            if ev.payload & ALLOC_REF_BIT:
                out.append(ev)
                continue
            rid = next_id
            next_id += 1
            regions.append((ev.payload, ev.aux, rid))
            out.append(TraceEvent(ev.kind, ev.ip, encode_alloc_ref(rid, 0), ev.aux))
        elif ev.kind is EventKind.FREE:
            if ev.payload & ALLOC_REF_BIT:
                out.append(ev)
                continue
            hit = find(ev.payload)
            if hit is None:
                out.append(ev)
                continue
            regions.remove(hit)
            out.append(TraceEvent(ev.kind, ev.ip, encode_alloc_ref(hit[2], 0), ev.aux))
        elif ev.kind in (EventKind.MEM_READ, EventKind.MEM_WRITE):
            if ev.payload & ALLOC_REF_BIT:
                out.append(ev)
                continue
            hit = find(ev.payload)
            if hit is None:
                out.append(ev)
                continue
            base, _, rid = hit
            out.append(
                TraceEvent(ev.kind, ev.ip, encode_alloc_ref(rid, ev.payload - base), ev.aux)
            )
        else:
            out.append(ev)
    return ExecutionTrace(input_id=trace.input_id, events=tuple(out))


# ---------------------------------------------------------------------------
# observation fingerprints
#
# Observations are compared by a fixed 128-bit FNV-1a hash of the packed
# payload sequence. Non-cryptographic on purpose: collisions would only hide
# leakage the exact-sequence oracle in the tests would still see, and the
# parameters are pinned so fingerprints are stable across runs and machines.

_FNV128_OFFSET = 0x6C62272E07BB014262B821756295C58D
_FNV128_PRIME = 0x0000000001000000000000000000013B
_MASK128 = (1 << 128) - 1


def fnv1a_128(data: bytes, state: int = _FNV128_OFFSET) -> int:
    h = state
    for b in data:
        h = ((h ^ b) * _FNV128_PRIME) & _MASK128
    return h


def _entropy_bits(counts: Iterable[int], n: int) -> float:
    acc = 0.0
    # sorted so the float summation order (and thus the exact result) does
    # not depend on grouping order; equal bundles give bit-equal mi_bits
    for c in sorted(counts):
        p = c / n
        acc -= p * math.log2(p)
    return acc


def analyze_bundle(bundle: TraceBundle) -> list[LeakageFinding]:
    """Report every instruction whose observations split the inputs.

    For each (ip, channel) site, the observation of one input is the ordered
    payload sequence that input produced there (empty if absent). Findings
    are the sites with nonzero entropy over the n inputs, sorted by mi_bits
    descending, then ip ascending. No thresholding: any split is reported.
    """
    if bundle.n < 2:
        raise EmptyBundle(f"need at least 2 traces, got {bundle.n}")

    n = bundle.n
    # site -> per-input fingerprint state (missing input == empty sequence)
    sites: dict[tuple[int, Channel], dict[int, int]] = {}
    for trace in bundle.traces:
        for ev in trace.events:
            channel = _CHANNEL_OF_KIND.get(ev.kind)
            if channel is None:
                continue
            per_input = sites.setdefault((ev.ip, channel), {})
            state = per_input.get(trace.input_id, _FNV128_OFFSET)
            per_input[trace.input_id] = fnv1a_128(_PAYLOAD.pack(ev.payload), state)

    findings = []
    for (ip, channel), per_input in sites.items():
        counts = Counter(per_input.values())
        absent = n - len(per_input)
        if absent:
            counts[_FNV128_OFFSET] += absent
        if len(counts) == 1:
            continue
        findings.append(
            LeakageFinding(
                ip=ip,
                channel=channel,
                mi_bits=_entropy_bits(counts.values(), n),
                distinct_observations=len(counts),
            )
        )
    findings.sort(key=lambda f: (-f.mi_bits, f.ip, f.channel.value))
    return findings


def whole_trace_mi(bundle: TraceBundle) -> float:
    """Entropy of the whole-trace fingerprint distribution, in bits.

    Upper-bounds what any single-site view can reveal and catches leaks
    spread across sites that look constant individually.
    """
    if bundle.n < 2:
        raise EmptyBundle(f"need at least 2 traces, got {bundle.n}")
    fingerprints = []
    for trace in bundle.traces:
        state = _FNV128_OFFSET
        for ev in trace.events:
            state = fnv1a_128(_RECORD.pack(int(ev.kind), ev.ip, ev.payload, ev.aux), state)
        fingerprints.append(state)
    return _entropy_bits(Counter(fingerprints).values(), bundle.n)
