"""Patching sessions: schedule leakage points, drive the model, verify, report.

One session works on one target. Points are scheduled by descending severity
(then source order); each point gets up to `max_trials_per_point` model
calls. A response that fails to build triggers the retry wording with the
build diagnostics; a response that builds but fails the functional tests
triggers the retry wording with a fixed "not working" reason; a response
that verifies clean for the point moves the session on. Newly discovered
points join the tail of the schedule. The session only ever edits staging
copies; the best tree seen (fewest unique points) is what the report's
final numbers describe when keep_best is set.
"""

from __future__ import annotations

import json
import shutil
import time
from collections import deque
from dataclasses import dataclass
from decimal import Decimal
from pathlib import Path
from typing import Optional, Sequence

from .detectors import (
    LeakagePoint,
    LeakKind,
    array_names,
    merge_verdicts,
    points_to_json,
    secure_conclusion,
)
from .gateway import CostLedger, ModelConfig, complete, record_cost
from .patching import (
    FunctionRenamed,
    NoCodeFound,
    PatchCandidate,
    SignatureChanged,
    Stage,
    TargetSpec,
    apply_patch,
    detect_leakage,
    extract_code,
    original_function_text,
    reference_param_count,
    run_command,
    source_line,
    stage_tree,
    verify,
)
from .prompts import (
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
    clip_diagnostics,
    render_patch_prompt,
    render_system_prompt,
)


class BaselineBroken(RuntimeError):
    """The unpatched target does not build or does not pass its own tests."""


class HarnessUnavailable(RuntimeError):
    pass


@dataclass
class LoopPolicy:
    max_trials_per_point: int = 5
    max_total_iterations: int = 40
    token_budget: int = 6000
    input_count: int = 16
    prng_seed: int = 1
    keep_best: bool = True

    def __post_init__(self) -> None:
        for name in ("max_trials_per_point", "max_total_iterations",
                     "token_budget", "input_count"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.input_count < 2:
            raise ValueError("input_count must be at least 2")

    @classmethod
    def from_dict(cls, raw: dict) -> "LoopPolicy":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in raw.items() if k in known})


def _point_key(point: LeakagePoint) -> tuple:
    source = point.source
    return (
        point.kind.value,
        source.file if source else None,
        source.line if source else None,
        point.ip,
    )


def _point_row(point: LeakagePoint) -> dict:
    return {
        "kind": point.kind.value,
        "file": point.source.file if point.source else None,
        "line": point.source.line if point.source else None,
        "ip": point.ip,
        "severity_bits": point.severity_bits,
    }


def _schedule_order(point: LeakagePoint) -> tuple:
    severity = point.severity_bits if point.severity_bits is not None else -1.0
    source = point.source
    return (
        -severity,
        source is None,
        source.file or "" if source else "",
        source.line or 0 if source else 0,
        point.ip if point.ip is not None else 0,
    )


@dataclass
class SessionReport:
    target: dict
    model_id: str
    status: str
    initial_points: list
    final_points: list
    trials: list
    totals: dict
    best_candidate: Optional[dict]
    policy: dict
    wall_time_s: float

    def to_json(self) -> str:
        doc = {
            "target": self.target,
            "model_id": self.model_id,
            "status": self.status,
            "initial_unique_points": len(self.initial_points),
            "initial_points": self.initial_points,
            "final_unique_points": len(self.final_points),
            "final_points": self.final_points,
            "trials": self.trials,
            "totals": self.totals,
            "best_candidate": self.best_candidate,
            "policy": self.policy,
            "wall_time_s": self.wall_time_s,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def summary_text(self) -> str:
        return summarize_report(json.loads(self.to_json()))


def summarize_report(doc: dict) -> str:
    """Human-readable digest of a session report document."""
    cost = Decimal(doc["totals"]["cost"]).quantize(Decimal("0.01"))
    lines = [
        f"target function: {doc['target'].get('function_name')}",
        f"model: {doc['model_id']}",
        f"status: {doc['status']}",
        "leakage points: "
        f"{doc['initial_unique_points']} -> {doc['final_unique_points']}",
        f"trials: {len(doc['trials'])}",
        f"cost: ${cost}",
    ]
    for trial in doc["trials"]:
        point = trial["point"] or {}
        where = f"{point.get('file')}:{point.get('line')}"
        lines.append(
            f"  trial {trial['index']}: option {trial['option']} on {where}"
            f" -> {trial['outcome']}"
        )
    return "\n".join(lines)


def _scrub(text: str, tree: Path) -> str:
    return text.replace(str(tree), "<staging>")


def _prompt_for_point(
    spec: TargetSpec, tree: Path, point: LeakagePoint, function_text: str
) -> tuple[object, int]:
    """Build the option prompt (and its historical number) for a point."""
    line = point.source.line if point.source and point.source.line else None
    line_text = source_line(spec, tree, line) if line else ""
    if point.kind is LeakKind.MEMORY_ACCESS:
        names = array_names(line_text)
        arrays = ", ".join(names) if names else "An"
        return MemoryAccessPrompt(arrays=arrays, line=line or 0), 1
    if point.kind is LeakKind.LOOP_BOUND:
        return LoopBoundPrompt(statement=line_text or "the flagged loop"), 3
    if point.kind is LeakKind.SPECTRE_V1:
        return SpectreConditionalPrompt(statement=line_text or "the flagged branch"), 1
    return ConditionalPrompt(statement=line_text or "the flagged condition"), 2


def run_patch_session(
    spec: TargetSpec,
    policy: LoopPolicy,
    config: ModelConfig,
    backend,
) -> SessionReport:
    started = time.monotonic()
    tree = stage_tree(spec)
    placeholders = {"staging_dir": str(tree), "binary": str(tree / spec.binary)}

    proc = run_command(spec.build_cmd, tree, placeholders, spec.command_timeout_s)
    if proc.returncode != 0:
        raise BaselineBroken(f"baseline build failed: {proc.stderr.strip()[:500]}")
    proc = run_command(spec.test_cmd, tree, placeholders, spec.command_timeout_s)
    if proc.returncode != 0:
        raise BaselineBroken(f"baseline tests failed: {proc.stderr.strip()[:500]}")

    verdicts, _ = detect_leakage(
        spec, tree, input_count=policy.input_count, seed=policy.prng_seed
    )
    current_points = tuple(merge_verdicts(verdicts))
    initial_rows = [_point_row(p) for p in current_points]

    ledger = CostLedger()
    trials: list[dict] = []
    best_points = current_points
    best_candidate: Optional[dict] = None

    if secure_conclusion(verdicts):
        return _finish_report(
            spec, config, policy, "secure", initial_rows, current_points,
            trials, ledger, best_candidate, started,
        )

    mode = (
        PromptMode.SPECTRE
        if current_points and current_points[0].kind is LeakKind.SPECTRE_V1
        else PromptMode.CONSTANT_TIME
    )
    ctx = ConversationContext(token_budget=policy.token_budget)
    ctx.add(Role.SYSTEM, render_system_prompt(spec.language, spec.specifics, mode))
    ref_params = reference_param_count(spec, tree)

    queue: deque[tuple] = deque()
    seen_keys: set = set()
    for point in sorted(current_points, key=_schedule_order):
        queue.append(_point_key(point))
        seen_keys.add(_point_key(point))

    status = "budget-exhausted"
    exhausted: set = set()
    calls = 0
    stop = False

    while queue and not stop:
        key = queue.popleft()
        point = next((p for p in current_points if _point_key(p) == key), None)
        if point is None or key in exhausted:
            continue  # fixed along the way, or already given up on

        retry_reason: Optional[str] = None
        for _ in range(policy.max_trials_per_point):
            if calls >= policy.max_total_iterations:
                stop = True
                break
            function_text = original_function_text(spec, tree)
            if retry_reason is None:
                prompt, option = _prompt_for_point(spec, tree, point, function_text)
            else:
                prompt, option = RetryPrompt(crash_reason=retry_reason), 4
            try:
                ctx.add(Role.USER, render_patch_prompt(prompt, function_text))
            except MessageTooLarge:
                stop = True
                break

            exchange = complete(backend, config, ctx)
            record_cost(ledger, exchange, config)
            calls += 1
            trial_index = len(trials) + 1

            outcome_stage, diagnostics, candidate = _evaluate_response(
                spec, tree, exchange, ref_params, policy, trial_index
            )
            trials.append({
                "index": trial_index,
                "point": _point_row(point),
                "option": option,
                "outcome": outcome_stage,
                "prompt_tokens": exchange.prompt_tokens,
                "completion_tokens": exchange.completion_tokens,
                "cost": str(ledger.cost),
                "diagnostics": _scrub(clip_diagnostics(diagnostics, 400), tree),
            })

            if outcome_stage == Stage.SYNTAX_ERROR:
                retry_reason = _scrub(diagnostics, tree) or "The code does not parse."
                continue
            if outcome_stage == Stage.TEST_FAILURE:
                ctx.add(Role.ASSISTANT, exchange.response_text)
                retry_reason = NOT_WORKING_REASON
                continue

            # syntactically correct and functionally sound: adopt the tree
            ctx.add(Role.ASSISTANT, exchange.response_text)
            new_tree, points = candidate
            shutil.rmtree(tree, ignore_errors=True)
            tree = new_tree
            current_points = points
            if len(current_points) < len(best_points):
                best_points = current_points
                best_candidate = {
                    "trial": trial_index,
                    "function_text": original_function_text(spec, tree),
                }
            for new_point in sorted(current_points, key=_schedule_order):
                new_key = _point_key(new_point)
                if new_key not in seen_keys:
                    queue.append(new_key)
                    seen_keys.add(new_key)
            if outcome_stage == Stage.SECURE:
                status = "secure"
                stop = True
                break
            if not any(_point_key(p) == key for p in current_points):
                break  # this point is fixed; move on
            retry_reason = None  # still leaky here: fresh option prompt
        else:
            exhausted.add(key)

    if status != "secure" and not current_points:
        status = "secure"

    if policy.keep_best and len(best_points) < len(current_points):
        final_points = best_points
    else:
        final_points = current_points
    shutil.rmtree(tree, ignore_errors=True)

    return _finish_report(
        spec, config, policy, status, initial_rows, final_points,
        trials, ledger, best_candidate, started,
    )


def _evaluate_response(spec, tree, exchange, ref_params, policy, trial_index):
    """Extract, apply, verify. Returns (stage, diagnostics, adoption).

    `adoption` is (new_tree, merged_points) when the response built and
    passed tests, else None (any staging copy is cleaned up).
    """
    try:
        candidate = extract_code(
            exchange.response_text, spec.function_name, ref_params, spec.language
        )
    except (NoCodeFound, FunctionRenamed, SignatureChanged) as err:
        return Stage.SYNTAX_ERROR, str(err), None

    candidate = PatchCandidate(
        function_text=candidate.function_text,
        raw_response=candidate.raw_response,
        trial_index=trial_index,
    )
    new_tree = Path(shutil.copytree(tree, str(tree) + f"-t{trial_index}"))
    try:
        apply_patch(spec, candidate, new_tree)
        outcome = verify(
            spec, new_tree, input_count=policy.input_count, seed=policy.prng_seed
        )
    except Exception:
        shutil.rmtree(new_tree, ignore_errors=True)
        raise
    if outcome.stage in (Stage.SYNTAX_ERROR, Stage.TEST_FAILURE):
        shutil.rmtree(new_tree, ignore_errors=True)
        return outcome.stage, outcome.diagnostics, None
    return outcome.stage, outcome.diagnostics, (new_tree, outcome.points)


def _finish_report(
    spec, config, policy, status, initial_rows, final_points,
    trials, ledger, best_candidate, started,
) -> SessionReport:
    return SessionReport(
        target=spec.summary(),
        model_id=config.model_id,
        status=status,
        initial_points=initial_rows,
        final_points=[_point_row(p) for p in final_points],
        trials=trials,
        totals={
            "prompt_tokens": ledger.prompt_tokens,
            "completion_tokens": ledger.completion_tokens,
            "cost": str(ledger.cost),
            "calls": ledger.calls,
        },
        best_candidate=best_candidate,
        policy={
            "max_trials_per_point": policy.max_trials_per_point,
            "max_total_iterations": policy.max_total_iterations,
            "token_budget": policy.token_budget,
            "input_count": policy.input_count,
            "prng_seed": policy.prng_seed,
            "keep_best": policy.keep_best,
        },
        wall_time_s=round(time.monotonic() - started, 3),
    )


# ---------------------------------------------------------------------------
# detection-only runs


def run_detect(spec: TargetSpec, policy: LoopPolicy) -> dict:
    """Build the target, trace it, and report every merged leakage point."""
    tree = stage_tree(spec)
    try:
        placeholders = {"staging_dir": str(tree), "binary": str(tree / spec.binary)}
        proc = run_command(spec.build_cmd, tree, placeholders, spec.command_timeout_s)
        if proc.returncode != 0:
            raise BaselineBroken(f"build failed: {proc.stderr.strip()[:500]}")
        verdicts, whole_mi = detect_leakage(
            spec, tree, input_count=policy.input_count, seed=policy.prng_seed
        )
        points = merge_verdicts(verdicts)
        return {
            "target": spec.summary(),
            "input_count": policy.input_count,
            "prng_seed": policy.prng_seed,
            "whole_trace_mi_bits": whole_mi,
            "secure": secure_conclusion(verdicts),
            "points": json.loads(points_to_json(points)),
        }
    finally:
        shutil.rmtree(tree, ignore_errors=True)


# ---------------------------------------------------------------------------
# micro-benchmark harness driver


def run_bench(harness_cmd: str, cwd: Path, only_cases: Sequence[str] = ()) -> list[dict]:
    """Ask the cycle harness for its (case, variant) grid and time each cell.

    The harness protocol: `--list` prints one `case variant` pair per line;
    `<case> <variant>` prints `median_cc=<int> runs=<int>`.
    """
    try:
        proc = run_command(f"{harness_cmd} --list", cwd, {})
    except (FileNotFoundError, OSError) as err:
        raise HarnessUnavailable(str(err)) from err
    except Exception as err:
        raise HarnessUnavailable(f"cannot run harness: {err}") from err
    if proc.returncode != 0:
        raise HarnessUnavailable(f"harness --list failed: {proc.stderr.strip()[:300]}")

    rows = []
    for line in proc.stdout.splitlines():
        parts = line.split()
        if len(parts) != 2:
            continue
        case, variant = parts
        if only_cases and case not in only_cases:
            continue
        run = run_command(f"{harness_cmd} {case} {variant}", cwd, {})
        if run.returncode != 0:
            raise HarnessUnavailable(
                f"harness failed for {case}/{variant}: {run.stderr.strip()[:300]}"
            )
        fields = dict(
            pair.split("=", 1) for pair in run.stdout.split() if "=" in pair
        )
        rows.append({
            "case": case,
            "variant": variant,
            "median_cc": int(fields["median_cc"]),
            "runs": int(fields["runs"]),
        })
    return rows


def bench_csv(rows: Sequence[dict]) -> str:
    out = ["case,variant,median_cc,runs"]
    for row in rows:
        out.append(f"{row['case']},{row['variant']},{row['median_cc']},{row['runs']}")
    return "\n".join(out) + "\n"


def bench_table(rows: Sequence[dict]) -> str:
    if not rows:
        return "(no benchmark rows)\n"
    w_case = max(len("case"), max(len(r["case"]) for r in rows))
    w_var = max(len("variant"), max(len(r["variant"]) for r in rows))
    lines = [f"{'case':<{w_case}}  {'variant':<{w_var}}  {'median_cc':>9}  {'runs':>8}"]
    for row in rows:
        lines.append(
            f"{row['case']:<{w_case}}  {row['variant']:<{w_var}}"
            f"  {row['median_cc']:>9}  {row['runs']:>8}"
        )
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# cost projection


def estimate_session_cost(policy: LoopPolicy, config: ModelConfig) -> Decimal:
    """Worst-case spend: every allowed call uses the full context budget in
    and the full completion allowance out."""
    per_call = (
        Decimal(policy.token_budget) * config.price_in
        + Decimal(config.max_tokens) * config.price_out
    ) / Decimal(1000)
    return per_call * Decimal(policy.max_total_iterations)
