from __future__ import annotations

import random
import shutil
from pathlib import Path

import pytest

from leakpatch.patching import TargetSpec
from leakpatch.trace import EventKind, ExecutionTrace, TraceBundle, TraceEvent

FIXTURES = Path(__file__).parent / "fixtures"


def make_pytarget_spec(tmp_path: Path) -> TargetSpec:
    """Copy the Python table-lookup target somewhere writable and describe it."""
    root = tmp_path / "pytarget"
    shutil.copytree(FIXTURES / "pytarget", root)
    return TargetSpec(
        root=root,
        source_files=["target.py"],
        function_name="lut_transform",
        build_cmd="python3 -m py_compile target.py",
        test_cmd="python3 selfcheck.py",
        trace_cmd="python3 tracer.py {input_file}",
        language="python",
        command_timeout_s=60.0,
    )


def random_trace(rng: random.Random, input_id: int, max_events: int = 64) -> ExecutionTrace:
    events = []
    for _ in range(rng.randrange(max_events + 1)):
        kind = EventKind(rng.randrange(7))
        events.append(
            TraceEvent(
                kind=kind,
                ip=rng.randrange(1 << 16),
                payload=rng.randrange(1 << 64),
                aux=rng.randrange(1 << 8),
            )
        )
    return ExecutionTrace(input_id=input_id, events=tuple(events))


def random_bundle(rng: random.Random, max_n: int = 8, max_events: int = 64) -> TraceBundle:
    """Small random bundle biased toward shared ips so observations collide."""
    n = rng.randrange(2, max_n + 1)
    ip_pool = [rng.randrange(64) for _ in range(8)]
    traces = []
    for input_id in range(n):
        events = []
        for _ in range(rng.randrange(max_events + 1)):
            events.append(
                TraceEvent(
                    kind=EventKind(rng.randrange(7)),
                    ip=rng.choice(ip_pool),
                    payload=rng.randrange(4),
                    aux=0,
                )
            )
        traces.append(ExecutionTrace(input_id=input_id, events=tuple(events)))
    return TraceBundle(traces=tuple(traces))


@pytest.fixture
def rng() -> random.Random:
    return random.Random(0xC0FFEE)
