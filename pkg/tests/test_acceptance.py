"""Acceptance gate: one test per release criterion, one verdict line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines;
without -s the test names carry the same pass/fail information.
"""

from __future__ import annotations

import json
import math
import random
import time
from contextlib import contextmanager
from decimal import Decimal

import pytest

from leakpatch.detectors import (
    DetectorTool,
    DetectorVerdict,
    LeakKind,
    MalformedReport,
    merge_verdicts,
    parse_microwalk_report,
    parse_pitchfork_output,
    parse_spectector_output,
    secure_conclusion,
)
from leakpatch.gateway import (
    CompletionExchange,
    CostLedger,
    ModelConfig,
    ReplayBackend,
    record_cost,
)
from leakpatch.prompts import (
    NOT_WORKING_REASON,
    ConditionalPrompt,
    ConversationContext,
    LoopBoundPrompt,
    MemoryAccessPrompt,
    MessageTooLarge,
    PromptMode,
    RetryPrompt,
    Role,
    SpectreConditionalPrompt,
    render_driver_request,
    render_patch_prompt,
    render_system_prompt,
)
from leakpatch.session import LoopPolicy, run_patch_session
from leakpatch.srcmap import AddressMap, iter_instructions, parse_annotated_disassembly
from leakpatch.trace import Channel, analyze_bundle, load_bundle, whole_trace_mi

from conftest import FIXTURES, make_pytarget_spec, random_bundle
from oracles import site_entropies, whole_trace_entropy

BUNDLES = FIXTURES / "bundles"
PROMPTS = FIXTURES / "prompts"
REPORTS = FIXTURES / "reports"
REPLAY = FIXTURES / "replay"

TOLERANCE = 1e-12


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[acceptance] {name}: FAIL")
        raise
    print(f"[acceptance] {name}: PASS")


# ---------------------------------------------------------------------------
# 1. the fast leakage measure agrees with a first-principles oracle


def test_leakage_measure_matches_reference_oracle():
    with criterion("mi-oracle-equivalence"):
        rng = random.Random(0xACCE55)
        started = time.monotonic()
        for _ in range(1000):
            bundle = random_bundle(rng, max_n=8, max_events=64)
            findings = {
                (f.ip, "mem" if f.channel is Channel.MEMORY_ACCESS else "flow"): f.mi_bits
                for f in analyze_bundle(bundle)
            }
            oracle = site_entropies(bundle)
            for site, expected in oracle.items():
                got = findings.pop(site, 0.0)
                assert abs(got - expected) <= TOLERANCE
                assert got <= math.log2(bundle.n) + TOLERANCE
            assert not findings  # nothing reported without events behind it
            assert abs(whole_trace_mi(bundle) - whole_trace_entropy(bundle)) <= TOLERANCE
        assert time.monotonic() - started < 10.0


# ---------------------------------------------------------------------------
# 2. detection sweep over the committed per-case bundles


EXPECTED_CHANNELS = {
    "memory_leakage_case_1": {"memory-access", "control-flow"},
    "memory_leakage_case_2": {"memory-access"},
    "memory_leakage_case_3": {"memory-access"},
    "memory_leakage_case_4": {"memory-access"},
    "memory_leakage_case_5": {"memory-access"},
    "branch_leakage_case_1": {"control-flow"},
    "branch_leakage_case_2": {"control-flow"},
    "branch_leakage_case_3": {"control-flow"},
    "branch_leakage_case_4": {"control-flow"},
    "branch_leakage_case_5": {"control-flow"},
    "branch_leakage_case_6": {"control-flow"},
    "branch_leakage_case_7": {"control-flow"},
    "branch_leakage_case_8": {"control-flow"},
    "branch_leakage_case_9": {"control-flow"},
    "branch_leakage_case_10": {"control-flow"},
    "branch_leakage_case_11": {"control-flow"},
    "branch_leakage_case_12": {"control-flow"},
}

CLEAN_CASES = ("memory_leakage_case_2_ct", "branch_leakage_case_1_ct")


def test_detection_sweep_over_committed_bundles():
    with criterion("fixture-detection-sweep"):
        assert len(EXPECTED_CHANNELS) == 17
        for case, expected in EXPECTED_CHANNELS.items():
            findings = analyze_bundle(load_bundle(BUNDLES / case))
            channels = {f.channel.value for f in findings}
            assert expected <= channels, f"{case}: wanted {expected}, got {channels}"
            assert all(f.mi_bits > 0 for f in findings)
        for case in CLEAN_CASES:
            findings = analyze_bundle(load_bundle(BUNDLES / case))
            assert findings == [], f"{case} should be clean, got {findings}"


# ---------------------------------------------------------------------------
# 3. prompt goldens, and the one-word speculative variant


def _golden(name: str) -> str:
    return (PROMPTS / name).read_bytes().decode("utf-8")


def test_prompt_goldens_byte_for_byte():
    with criterion("golden-prompts"):
        function = (PROMPTS / "transform_function.txt").read_text()
        checks = [
            (render_system_prompt("C", "", PromptMode.CONSTANT_TIME),
             "system_constant_time_c.golden"),
            (render_system_prompt("C", "", PromptMode.SPECTRE),
             "system_spectre_c.golden"),
            (render_system_prompt("C", "", PromptMode.GENERATE),
             "system_generate_c.golden"),
            (render_patch_prompt(MemoryAccessPrompt(arrays="LUT", line=6), function),
             "option1_memory_access.golden"),
            (render_patch_prompt(ConditionalPrompt(statement="if (secret < 16)"), function),
             "option2_conditional.golden"),
            (render_patch_prompt(LoopBoundPrompt(statement="while (high != 0)"), function),
             "option3_loop_bound.golden"),
            (render_patch_prompt(RetryPrompt(
                crash_reason="case.c:7:5: error: expected ; before } token")),
             "option4_retry.golden"),
            (render_patch_prompt(RetryPrompt(crash_reason=NOT_WORKING_REASON)),
             "option4_not_working.golden"),
            (render_patch_prompt(
                SpectreConditionalPrompt(statement="if (idx < publicarray_size)"),
                function),
             "spectre_option1.golden"),
            (render_driver_request(), "driver_request.golden"),
        ]
        for rendered, name in checks:
            assert rendered == _golden(name), f"mismatch against {name}"

        ct = render_system_prompt("C", "", PromptMode.CONSTANT_TIME)
        sp = render_system_prompt("C", "", PromptMode.SPECTRE)
        ct_words, sp_words = ct.split(" "), sp.split(" ")
        assert len(ct_words) == len(sp_words)
        diffs = [(a, b) for a, b in zip(ct_words, sp_words) if a != b]
        assert diffs == [("constant-time", "secure")]


# ---------------------------------------------------------------------------
# 4. context policy under ten thousand random transcripts


def test_context_policy_random_transcripts():
    with criterion("context-policy"):
        rng = random.Random(0x517E)
        for _ in range(10_000):
            budget = rng.randrange(16, 80)
            ctx = ConversationContext(token_budget=budget, estimator=len)
            system = "s" * rng.randrange(1, 6)
            pinned_user = "o" * rng.randrange(1, 8)
            ctx.add(Role.SYSTEM, system)
            ctx.add(Role.USER, pinned_user)
            pinned = len(system) + len(pinned_user)
            appended: list[str] = []
            for i in range(rng.randrange(1, 13)):
                text = chr(ord("a") + i % 26) * rng.randrange(1, 20)
                before = list(ctx.messages)
                try:
                    ctx.add(Role.ASSISTANT if i % 2 else Role.USER, text)
                    appended.append(text)
                    assert pinned + len(text) <= budget
                except MessageTooLarge:
                    assert pinned + len(text) > budget
                    assert ctx.messages == before
                assert ctx.total_tokens <= budget
                assert ctx.messages[0].text == system
                assert ctx.messages[1].text == pinned_user
                tail = [m.text for m in ctx.messages[2:]]
                assert tail == appended[len(appended) - len(tail):]


# ---------------------------------------------------------------------------
# 5. scripted session loop: convergence, budget stop, stable reports


MODEL = ModelConfig(
    model_id="gpt-4-0613", temperature=1.0, max_tokens=2048, top_p=1.0,
    price_in="0.03", price_out="0.06",
)


def _replay(name: str) -> ReplayBackend:
    return ReplayBackend.from_script((REPLAY / name).read_text())


def test_scripted_session_loop(tmp_path):
    with criterion("scripted-loop-convergence"):
        spec = make_pytarget_spec(tmp_path / "converges")
        policy = LoopPolicy(max_trials_per_point=5, prng_seed=1)

        docs = []
        for run in range(2):
            report = run_patch_session(spec, policy, MODEL, _replay("convergence.json"))
            assert report.status == "secure"
            assert [t["outcome"] for t in report.trials] == ["syntax-error", "secure"]
            assert report.trials[1]["option"] == 4
            assert report.final_points == []
            doc = json.loads(report.to_json())
            del doc["wall_time_s"]
            docs.append(json.dumps(doc, sort_keys=True))
        assert docs[0] == docs[1]

        spec = make_pytarget_spec(tmp_path / "exhausts")
        backend = _replay("all_bad.json")
        report = run_patch_session(spec, policy, MODEL, backend)
        assert report.status == "budget-exhausted"
        assert len(report.trials) == 5
        assert backend.remaining == 0


# ---------------------------------------------------------------------------
# 6. detector adapters: goldens, malformed input, termination gating


def test_adapter_goldens_and_gates():
    with criterion("detector-adapters"):
        mw = parse_microwalk_report((REPORTS / "microwalk_subbytes.txt").read_text())
        assert mw.terminated
        assert [(p.ip, p.severity_bits) for p in mw.points] == [
            (0x1491, 4.00), (0x14A6, 3.25), (0x14BB, 2.50),
        ]
        assert all(p.kind is LeakKind.MEMORY_ACCESS for p in mw.points)
        assert all(p.source.file == "aes/sbox.c" for p in mw.points)

        sp = parse_spectector_output((REPORTS / "spectector_unsafe.txt").read_text())
        assert sp.terminated
        assert sp.points[0].kind is LeakKind.SPECTRE_V1
        assert (sp.points[0].source.file, sp.points[0].source.line) == (
            "gadgets/case_1.c", 11,
        )

        pf = parse_pitchfork_output((REPORTS / "pitchfork_violations.txt").read_text())
        assert pf.terminated
        assert len(pf.points) == 3

        for name, parser in (
            ("microwalk_garbled.txt", parse_microwalk_report),
            ("microwalk_truncated.txt", parse_microwalk_report),
            ("spectector_garbled.txt", parse_spectector_output),
            ("pitchfork_garbled.txt", parse_pitchfork_output),
        ):
            with pytest.raises(MalformedReport):
                parser((REPORTS / name).read_text())

        # a detector that never finished cannot support a secure conclusion,
        # and whatever it did find before hanging still survives the merge
        hung = parse_pitchfork_output((REPORTS / "pitchfork_timeout.txt").read_text())
        assert not hung.terminated
        clean = parse_microwalk_report((REPORTS / "microwalk_empty.txt").read_text())
        assert secure_conclusion([clean])
        assert not secure_conclusion([clean, hung])
        merged = merge_verdicts([clean, hung])
        assert all(p.detectors == (DetectorTool.PITCHFORK,) for p in merged)


# ---------------------------------------------------------------------------
# 7. source-map round trip on real annotated disassembly


def test_source_map_round_trip():
    with criterion("source-mapping"):
        text = (FIXTURES / "disasm" / "twofunc.txt").read_text()
        instructions = list(iter_instructions(text))
        functions = {loc.function for _, _, _, loc in instructions}
        assert {"lut_select", "sum_to_bound"} <= functions
        markers = {(loc.file, loc.line) for _, _, _, loc in instructions if loc.file}
        assert len(markers) >= 5

        amap = parse_annotated_disassembly(text)
        for addr, size, _, loc in instructions:
            assert amap.lookup(addr) == loc
            assert amap.lookup(addr + size - 1) == loc
        lowest = min(start for start, _, _ in amap.ranges)
        highest = max(end for _, end, _ in amap.ranges)
        assert amap.lookup(lowest - 1) is None
        assert amap.lookup(highest) is None

        restored = AddressMap.from_json(amap.to_json())
        for addr, _, _, _ in instructions:
            assert restored.lookup(addr) == amap.lookup(addr)


# ---------------------------------------------------------------------------
# 8. exact decimal cost accounting


def _exchange(prompt_tokens: int, completion_tokens: int) -> CompletionExchange:
    return CompletionExchange(
        request_messages=(("system", "s"),),
        response_text="r",
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        latency_s=0.0,
    )


def test_cost_ledger_exact_decimal():
    with criterion("cost-ledger"):
        config = ModelConfig(model_id="m", price_in="0.03", price_out="0.06")
        ledger = CostLedger()
        record_cost(ledger, _exchange(1000, 0), config)
        assert ledger.cost == Decimal("0.03")
        record_cost(ledger, _exchange(0, 1000), config)
        assert ledger.cost == Decimal("0.09")

        rng = random.Random(3)
        exchanges = [_exchange(rng.randrange(2000), rng.randrange(800))
                     for _ in range(10)]
        totals = set()
        for _ in range(6):
            rng.shuffle(exchanges)
            ledger = CostLedger()
            for ex in exchanges:
                record_cost(ledger, ex, config)
            totals.add(ledger.cost)
        assert len(totals) == 1

        pricey = ModelConfig(model_id="m", price_in="1.00", price_out="0")
        ledger = CostLedger()
        record_cost(ledger, _exchange(1337, 0), pricey)
        assert ledger.formatted_cost() == "$1.34"
        ledger = CostLedger()
        record_cost(ledger, _exchange(300, 0), pricey)
        assert ledger.formatted_cost() == "$0.30"
