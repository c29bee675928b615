"""Patch candidates: extraction from model responses, staged application,
and verification (format, build, test, re-detect).

Verification never touches the original tree. Each candidate is applied to a
staging copy; only an explicit caller decision (CLI --write-back) promotes a
staged file over the original. Stage order is fixed: a candidate that does
not compile is a SyntaxError even if it would also have failed tests, and
leakage is only measured on candidates that pass the functional tests.
"""

from __future__ import annotations

import os
import random
import re
import shlex
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .detectors import (
    DetectorTool,
    DetectorVerdict,
    LeakagePoint,
    LeakKind,
    builtin_spectre_scan,
    classify_control_flow,
    array_names,
    merge_verdicts,
    parse_microwalk_report,
    parse_pitchfork_output,
    parse_spectector_output,
    parse_kleespectre_output,
    secure_conclusion,
)
from .srcmap import AddressMap, SourceLocation, parse_annotated_disassembly
from .trace import (
    Channel,
    TRACE_DIR_ENV,
    TRACE_INPUT_ENV,
    analyze_bundle,
    load_bundle,
    whole_trace_mi,
)

DEFAULT_COMMAND_TIMEOUT_S = 120.0


class NoCodeFound(ValueError):
    pass


class FunctionRenamed(ValueError):
    pass


class SignatureChanged(ValueError):
    pass


class FunctionSpanNotFound(ValueError):
    pass


class AmbiguousDefinition(ValueError):
    pass


class CommandNotFound(RuntimeError):
    pass


class CommandTimeout(RuntimeError):
    pass


_ADAPTERS = {
    DetectorTool.MICROWALK: parse_microwalk_report,
    DetectorTool.SPECTECTOR: parse_spectector_output,
    DetectorTool.PITCHFORK: parse_pitchfork_output,
    DetectorTool.KLEESPECTRE: parse_kleespectre_output,
}


@dataclass(frozen=True)
class DetectorCommand:
    tool: DetectorTool
    cmd: str


@dataclass
class TargetSpec:
    """Everything needed to build, test, and re-check one target.

    Command templates may use {staging_dir}, {binary}, {trace_dir} and
    {input_file} placeholders. `function_name` must have exactly one
    definition across `source_files`.
    """

    root: Path
    source_files: list[str]
    function_name: str
    build_cmd: str
    test_cmd: str
    trace_cmd: Optional[str] = None
    detector_cmds: list[DetectorCommand] = field(default_factory=list)
    formatter_cmd: Optional[str] = None
    map_cmd: Optional[str] = None
    binary: str = "target.bin"
    language: str = "C"
    specifics: str = ""
    secret_bytes: int = 16
    spectre_scan: bool = False
    command_timeout_s: float = DEFAULT_COMMAND_TIMEOUT_S

    def __post_init__(self) -> None:
        self.root = Path(self.root)
        if not self.source_files:
            raise ValueError("source_files must be non-empty")
        if not self.function_name:
            raise ValueError("function_name must be non-empty")

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path) -> "TargetSpec":
        detector_cmds = [
            DetectorCommand(tool=DetectorTool(d["tool"]), cmd=d["cmd"])
            for d in raw.get("detector_cmds", [])
        ]
        root = Path(raw["root"])
        if not root.is_absolute():
            root = base_dir / root
        return cls(
            root=root,
            source_files=list(raw["source_files"]),
            function_name=raw["function_name"],
            build_cmd=raw["build_cmd"],
            test_cmd=raw["test_cmd"],
            trace_cmd=raw.get("trace_cmd"),
            detector_cmds=detector_cmds,
            formatter_cmd=raw.get("formatter_cmd"),
            map_cmd=raw.get("map_cmd"),
            binary=raw.get("binary", "target.bin"),
            language=raw.get("language", "C"),
            specifics=raw.get("specifics", ""),
            secret_bytes=int(raw.get("secret_bytes", 16)),
            spectre_scan=bool(raw.get("spectre_scan", False)),
            command_timeout_s=float(raw.get("command_timeout_s", DEFAULT_COMMAND_TIMEOUT_S)),
        )

    def summary(self) -> dict:
        return {
            "root": str(self.root),
            "source_files": list(self.source_files),
            "function_name": self.function_name,
            "language": self.language,
        }


@dataclass(frozen=True)
class PatchCandidate:
    function_text: str
    raw_response: str
    trial_index: int = 0


class Stage:
    SYNTAX_ERROR = "syntax-error"
    TEST_FAILURE = "test-failure"
    LEAKY = "leaky"
    SECURE = "secure"


@dataclass(frozen=True)
class VerificationOutcome:
    stage: str
    diagnostics: str = ""
    points: tuple[LeakagePoint, ...] = ()

    @property
    def is_secure(self) -> bool:
        return self.stage == Stage.SECURE


# ---------------------------------------------------------------------------
# locating function definitions

_IDENT = r"[A-Za-z_]\w*"


def _strip_comments_and_strings(text: str) -> str:
    """Blank out C comments and literals, preserving offsets and newlines."""
    out = list(text)

    def blank(j: int) -> None:
        if out[j] != "\n":
            out[j] = " "

    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                blank(i)
                i += 1
        elif c == "/" and i + 1 < n and text[i + 1] == "*":
            blank(i)
            blank(i + 1)
            i += 2
            while i < n and not (text[i] == "*" and i + 1 < n and text[i + 1] == "/"):
                blank(i)
                i += 1
            if i + 1 < n:
                blank(i)
                blank(i + 1)
                i += 2
        elif c in "\"'":
            quote = c
            blank(i)
            i += 1
            while i < n and text[i] != quote:
                blank(i)
                if text[i] == "\\" and i + 1 < n:
                    blank(i + 1)
                    i += 2
                else:
                    i += 1
            if i < n:
                blank(i)
                i += 1
        else:
            i += 1
    return "".join(out)


def _count_params(params: str) -> int:
    inner = params.strip()
    if not inner or inner == "void":
        return 0
    depth = 0
    count = 1
    for ch in inner:
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == "," and depth == 0:
            count += 1
    return count


def _c_definitions(text: str, name: str) -> list[tuple[int, int, int]]:
    """(start, end, param_count) spans of C-style definitions of `name`."""
    clean = _strip_comments_and_strings(text)
    spans = []
    for m in re.finditer(rf"\b{re.escape(name)}\s*\(", clean):
        # find the matching ')' of the parameter list
        i = m.end() - 1
        depth = 0
        while i < len(clean):
            if clean[i] == "(":
                depth += 1
            elif clean[i] == ")":
                depth -= 1
                if depth == 0:
                    break
            i += 1
        if i >= len(clean):
            continue
        params = clean[m.end(): i]
        j = i + 1
        while j < len(clean) and clean[j] in " \t\r\n":
            j += 1
        if j >= len(clean) or clean[j] != "{":
            continue  # prototype or call
        # walk the body
        depth = 0
        k = j
        while k < len(clean):
            if clean[k] == "{":
                depth += 1
            elif clean[k] == "}":
                depth -= 1
                if depth == 0:
                    break
            k += 1
        if depth != 0:
            continue  # unbalanced: not a complete definition
        start = _signature_start(clean, m.start())
        spans.append((start, k + 1, _count_params(params)))
    return spans


def _signature_start(clean: str, name_pos: int) -> int:
    """Walk back from the name over the return type to the statement start."""
    boundary = max(
        clean.rfind(";", 0, name_pos),
        clean.rfind("}", 0, name_pos),
        clean.rfind("{", 0, name_pos),
    )
    start = boundary + 1
    # skip blank space up to the first signature token
    while start < name_pos and clean[start] in " \t\r\n":
        start += 1
    # preprocessor directives end at their line, not at ';'
    segment = clean[start:name_pos]
    last_hash_line = None
    pos = start
    for line in segment.splitlines(keepends=True):
        if line.lstrip().startswith("#"):
            last_hash_line = pos + len(line)
        pos += len(line)
    if last_hash_line is not None:
        start = last_hash_line
        while start < name_pos and clean[start] in " \t\r\n":
            start += 1
    return start


def _python_definitions(text: str, name: str) -> list[tuple[int, int, int]]:
    """(start, end, param_count) spans of `def name(...)` blocks."""
    lines = text.splitlines(keepends=True)
    spans = []
    offsets = [0]
    for line in lines:
        offsets.append(offsets[-1] + len(line))
    for idx, line in enumerate(lines):
        m = re.match(rf"^(\s*)def\s+{re.escape(name)}\s*\(", line)
        if not m:
            continue
        indent = len(m.group(1))
        params_text = line[m.end():]
        depth = 1
        collected = []
        scan_idx = idx
        pos = m.end()
        while depth > 0 and scan_idx < len(lines):
            current = lines[scan_idx]
            while pos < len(current):
                ch = current[pos]
                if ch == "(":
                    depth += 1
                elif ch == ")":
                    depth -= 1
                    if depth == 0:
                        break
                elif depth > 0:
                    collected.append(ch)
                pos += 1
            if depth > 0:
                scan_idx += 1
                pos = 0
        params = "".join(collected)
        end_idx = scan_idx + 1
        while end_idx < len(lines):
            stripped = lines[end_idx].strip()
            if stripped and (len(lines[end_idx]) - len(lines[end_idx].lstrip())) <= indent:
                break
            end_idx += 1
        # trim trailing blank lines out of the span
        while end_idx > idx + 1 and not lines[end_idx - 1].strip():
            end_idx -= 1
        spans.append((offsets[idx] + indent, offsets[end_idx], _count_params(params)))
    return spans


def find_definitions(text: str, name: str, language: str = "C") -> list[tuple[int, int, int]]:
    if language.lower() in ("python", "py"):
        return _python_definitions(text, name)
    return _c_definitions(text, name)


def _language_of(path: str | Path) -> str:
    return "python" if str(path).endswith(".py") else "C"


# ---------------------------------------------------------------------------
# extraction

_FENCE = re.compile(r"```[^\n]*\n(.*?)(?:```|\Z)", re.DOTALL)


def extract_code(
    response: str,
    function_name: str,
    reference_params: Optional[int] = None,
    language: str = "C",
) -> PatchCandidate:
    """Pull the patched function out of a model response.

    Preference order: first fenced block that defines the function, then the
    longest balanced definition found in the raw text (models sometimes skip
    the fences). The candidate keeps surrounding helper functions from the
    same block.
    """
    blocks = [m.group(1) for m in _FENCE.finditer(response)]
    chosen: Optional[str] = None
    params: Optional[int] = None
    for block in blocks:
        defs = find_definitions(block, function_name, language)
        if defs:
            chosen = block.rstrip() + "\n"
            params = defs[0][2]
            break
    if chosen is None:
        defs = find_definitions(response, function_name, language)
        if defs:
            start, end, params = max(defs, key=lambda d: d[1] - d[0])
            chosen = response[start:end].rstrip() + "\n"
    if chosen is None:
        if blocks or _looks_like_code(response, language):
            raise FunctionRenamed(
                f"response contains code but no definition of {function_name!r}"
            )
        raise NoCodeFound("response contains no code")
    if reference_params is not None and params is not None and params != reference_params:
        raise SignatureChanged(
            f"{function_name!r} takes {params} parameters, expected {reference_params}"
        )
    return PatchCandidate(function_text=chosen, raw_response=response)


def _looks_like_code(text: str, language: str) -> bool:
    if language.lower() in ("python", "py"):
        return bool(re.search(r"^\s*def\s+\w+", text, re.MULTILINE))
    return "{" in text and "}" in text


# ---------------------------------------------------------------------------
# staging and application


def stage_tree(spec: TargetSpec) -> Path:
    staging = Path(tempfile.mkdtemp(prefix="leakpatch-stage-"))
    for entry in spec.root.iterdir():
        if entry.name in (".git", ".traces", ".inputs", "__pycache__"):
            continue
        if entry.is_dir():
            shutil.copytree(entry, staging / entry.name,
                            ignore=shutil.ignore_patterns(".git", "__pycache__"))
        else:
            shutil.copy2(entry, staging / entry.name)
    return staging


def _defining_file(spec: TargetSpec, tree: Path) -> tuple[Path, list[tuple[int, int, int]]]:
    hits = []
    for rel in spec.source_files:
        path = tree / rel
        if not path.exists():
            continue
        defs = find_definitions(path.read_text(), spec.function_name, _language_of(rel))
        if defs:
            hits.append((path, defs))
    if not hits:
        raise FunctionSpanNotFound(
            f"no definition of {spec.function_name!r} in {spec.source_files}"
        )
    total = sum(len(d) for _, d in hits)
    if total > 1:
        raise AmbiguousDefinition(
            f"{total} definitions of {spec.function_name!r} across {spec.source_files}"
        )
    return hits[0][0], hits[0][1]


def original_function_text(spec: TargetSpec, tree: Optional[Path] = None) -> str:
    path, defs = _defining_file(spec, tree or spec.root)
    start, end, _ = defs[0]
    return path.read_text()[start:end]


def reference_param_count(spec: TargetSpec, tree: Optional[Path] = None) -> int:
    _, defs = _defining_file(spec, tree or spec.root)
    return defs[0][2]


def source_line(spec: TargetSpec, tree: Path, line: int) -> str:
    path, _ = _defining_file(spec, tree)
    lines = path.read_text().splitlines()
    if 1 <= line <= len(lines):
        return lines[line - 1].strip()
    return ""


def apply_patch(spec: TargetSpec, candidate: PatchCandidate, tree: Path) -> Path:
    """Replace the function span in the staging tree with the candidate text."""
    path, defs = _defining_file(spec, tree)
    start, end, _ = defs[0]
    text = path.read_text()
    replacement = candidate.function_text
    if not replacement.endswith("\n"):
        replacement += "\n"
    tail = text[end:]
    if tail.startswith("\n"):
        replacement = replacement.rstrip("\n") + "\n"
    path.write_text(text[:start] + replacement + tail)
    return tree


# ---------------------------------------------------------------------------
# command execution


class _PassThroughDict(dict):
    def __missing__(self, key: str) -> str:
        return "{" + key + "}"


def run_command(
    template: str,
    cwd: Path,
    placeholders: dict[str, str],
    timeout_s: float = DEFAULT_COMMAND_TIMEOUT_S,
    env: Optional[dict[str, str]] = None,
) -> subprocess.CompletedProcess:
    rendered = template.format_map(_PassThroughDict(placeholders))
    argv = shlex.split(rendered)
    if not argv:
        raise CommandNotFound("empty command")
    merged_env = dict(os.environ)
    if env:
        merged_env.update(env)
    try:
        return subprocess.run(
            argv,
            cwd=str(cwd),
            env=merged_env,
            capture_output=True,
            text=True,
            errors="replace",
            timeout=timeout_s,
        )
    except FileNotFoundError as err:
        raise CommandNotFound(f"{argv[0]}: not found") from err
    except subprocess.TimeoutExpired as err:
        raise CommandTimeout(f"{argv[0]}: no result within {timeout_s}s") from err


def _diag(proc: subprocess.CompletedProcess) -> str:
    parts = [s for s in (proc.stderr, proc.stdout) if s and s.strip()]
    return "\n".join(p.strip() for p in parts)


# ---------------------------------------------------------------------------
# detection on a tree


def generate_secret_inputs(tree: Path, count: int, size: int, seed: int) -> list[Path]:
    rng = random.Random(seed)
    inputs_dir = tree / ".inputs"
    if inputs_dir.exists():
        shutil.rmtree(inputs_dir)
    inputs_dir.mkdir()
    paths = []
    for input_id in range(count):
        path = inputs_dir / f"input_{input_id}.bin"
        path.write_bytes(bytes(rng.randrange(256) for _ in range(size)))
        paths.append(path)
    return paths


def _address_map(spec: TargetSpec, tree: Path, placeholders: dict[str, str]) -> tuple[Optional[AddressMap], Optional[str]]:
    if spec.map_cmd is None:
        return None, None
    proc = run_command(spec.map_cmd, tree, placeholders, spec.command_timeout_s)
    if proc.returncode != 0:
        raise CommandNotFound(f"map command failed: {_diag(proc)[:500]}")
    return parse_annotated_disassembly(proc.stdout), proc.stdout


def detect_leakage(
    spec: TargetSpec,
    tree: Path,
    input_count: int = 16,
    seed: int = 1,
) -> tuple[list[DetectorVerdict], float]:
    """Run every configured detection route against a built tree.

    Returns the verdicts plus the whole-trace MI in bits (0.0 when tracing
    is not configured).
    """
    placeholders = {
        "staging_dir": str(tree),
        "binary": str(tree / spec.binary),
    }
    verdicts: list[DetectorVerdict] = []
    whole_mi = 0.0
    amap, disasm = _address_map(spec, tree, placeholders)

    if spec.trace_cmd:
        trace_dir = tree / ".traces"
        if trace_dir.exists():
            shutil.rmtree(trace_dir)
        trace_dir.mkdir()
        placeholders["trace_dir"] = str(trace_dir)
        inputs = generate_secret_inputs(tree, input_count, spec.secret_bytes, seed)
        for input_id, input_file in enumerate(inputs):
            proc = run_command(
                spec.trace_cmd,
                tree,
                {**placeholders, "input_file": str(input_file)},
                spec.command_timeout_s,
                env={TRACE_DIR_ENV: str(trace_dir), TRACE_INPUT_ENV: str(input_id)},
            )
            if proc.returncode != 0:
                raise CommandNotFound(
                    f"trace command failed for input {input_id}: {_diag(proc)[:500]}"
                )
        bundle = load_bundle(trace_dir)
        findings = analyze_bundle(bundle)
        whole_mi = whole_trace_mi(bundle)
        points = tuple(_finding_to_point(spec, tree, amap, f) for f in findings)
        verdicts.append(
            DetectorVerdict(points=points, tool=DetectorTool.BUILTIN, terminated=True)
        )

    if spec.spectre_scan and disasm is not None:
        verdicts.append(builtin_spectre_scan(disasm))

    for det in spec.detector_cmds:
        proc = run_command(det.cmd, tree, placeholders, spec.command_timeout_s)
        adapter = _ADAPTERS[det.tool]
        if det.tool is DetectorTool.MICROWALK:
            verdicts.append(adapter(proc.stdout, amap))
        else:
            verdicts.append(adapter(proc.stdout))
    return verdicts, whole_mi


def _finding_to_point(spec, tree, amap, finding) -> LeakagePoint:
    source: Optional[SourceLocation] = None
    if amap is not None:
        source = amap.lookup(finding.ip)
    else:
        # shim-instrumented targets record source lines as ips
        try:
            path, _ = _defining_file(spec, tree)
            rel = path.name
        except (FunctionSpanNotFound, AmbiguousDefinition):
            rel = spec.source_files[0]
        if finding.ip >= 1:
            source = SourceLocation(rel, finding.ip)
    if finding.channel is Channel.MEMORY_ACCESS:
        kind = LeakKind.MEMORY_ACCESS
    else:
        line_text = source_line(spec, tree, source.line) if source and source.line else ""
        kind = classify_control_flow(line_text)
    detail = f"mi={finding.mi_bits:.4f} bits over {finding.distinct_observations} distinct observations"
    return LeakagePoint(
        kind=kind,
        source=source,
        ip=finding.ip,
        severity_bits=finding.mi_bits,
        detectors=(DetectorTool.BUILTIN,),
        detail=detail,
    )


# ---------------------------------------------------------------------------
# full verification


def verify(
    spec: TargetSpec,
    tree: Path,
    input_count: int = 16,
    seed: int = 1,
) -> VerificationOutcome:
    """Format, build, functionally test, then re-detect. First failure wins."""
    placeholders = {
        "staging_dir": str(tree),
        "binary": str(tree / spec.binary),
    }
    if spec.formatter_cmd:
        proc = run_command(spec.formatter_cmd, tree, placeholders, spec.command_timeout_s)
        if proc.returncode != 0:
            return VerificationOutcome(Stage.SYNTAX_ERROR, diagnostics=_diag(proc))

    proc = run_command(spec.build_cmd, tree, placeholders, spec.command_timeout_s)
    if proc.returncode != 0:
        return VerificationOutcome(Stage.SYNTAX_ERROR, diagnostics=_diag(proc))

    proc = run_command(spec.test_cmd, tree, placeholders, spec.command_timeout_s)
    if proc.returncode != 0:
        return VerificationOutcome(Stage.TEST_FAILURE, diagnostics=_diag(proc))

    verdicts, _ = detect_leakage(spec, tree, input_count=input_count, seed=seed)
    points = tuple(merge_verdicts(verdicts))
    if secure_conclusion(verdicts):
        return VerificationOutcome(Stage.SECURE)
    diagnostics = "" if points else "a detector did not run to completion"
    return VerificationOutcome(Stage.LEAKY, diagnostics=diagnostics, points=points)
