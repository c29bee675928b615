"""Leakage reports: external-tool adapters, a builtin gadget scanner, merging.

Each adapter turns one tool's report text into a DetectorVerdict. The exact
grammars accepted here are pinned by the fixture files under
tests/fixtures/reports/; adapters reject anything else with MalformedReport
(carrying line/column) rather than guessing.

Grammar accepted by parse_microwalk_report (one finding block per leak)::

    Microwalk analysis result
    Target: <name>              (optional)

    [memory access] ip=0x<hex> entropy=<float> distinct=<int>
      source: <file>:<line>     (optional, overrides the address map)
      function: <symbol>        (optional)
      detail: <free text>       (optional)
    [jump] ...
    [loop] ...

    End of report

Grammar accepted by parse_spectector_output::

    spectector <anything>
    unsafe: <file>:<line> ip=0x<hex> reason=<text>
    ...
    program is safe | program is unsafe

A missing final verdict line means the tool was cut off: the verdict is
returned with terminated=False and can never support a "secure" conclusion.

Grammar accepted by parse_pitchfork_output::

    pitchfork: <anything>
    violation (memory|branch|speculative): <detail> at <file>:<line> [ip=0x<hex>]
    ...
    verdict: constant-time | verdict: <n> violations
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Optional, Sequence

from .srcmap import AddressMap, SourceLocation, iter_instructions


class LeakKind(Enum):
    MEMORY_ACCESS = "memory-access"
    CONDITIONAL_BRANCH = "conditional-branch"
    LOOP_BOUND = "loop-bound"
    SPECTRE_V1 = "spectre-v1"


class DetectorTool(Enum):
    BUILTIN = "builtin"
    MICROWALK = "microwalk"
    SPECTECTOR = "spectector"
    PITCHFORK = "pitchfork"
    KLEESPECTRE = "kleespectre"


class MalformedReport(ValueError):
    def __init__(self, message: str, line: int, column: int = 1) -> None:
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class UnparsableDisassembly(ValueError):
    pass


@dataclass(frozen=True)
class LeakagePoint:
    kind: LeakKind
    source: Optional[SourceLocation]
    ip: Optional[int] = None
    severity_bits: Optional[float] = None
    detectors: tuple[DetectorTool, ...] = ()
    detail: str = ""


@dataclass(frozen=True)
class DetectorVerdict:
    points: tuple[LeakagePoint, ...]
    tool: DetectorTool
    terminated: bool
    # advisory verdicts (the builtin heuristic scanner) contribute findings
    # but their silence never supports a "secure" conclusion
    advisory: bool = False


# ---------------------------------------------------------------------------
# report adapters

_MW_HEADER = "Microwalk analysis result"
_MW_FINDING = re.compile(
    r"^\[(memory access|jump|loop)\] ip=0x([0-9a-fA-F]+)"
    r" entropy=(\d+(?:\.\d+)?)(?: distinct=(\d+))?\s*$"
)
_MW_ATTR = re.compile(r"^\s{2,}(source|function|detail):\s*(.*)$")
_MW_KIND = {
    "memory access": LeakKind.MEMORY_ACCESS,
    "jump": LeakKind.CONDITIONAL_BRANCH,
    "loop": LeakKind.LOOP_BOUND,
}
_SRC_REF = re.compile(r"^(.*):(\d+)$")


def parse_microwalk_report(
    text: str, addr_map: Optional[AddressMap] = None
) -> DetectorVerdict:
    lines = text.splitlines()
    if not lines or lines[0].strip() != _MW_HEADER:
        raise MalformedReport(f"expected header {_MW_HEADER!r}", line=1)

    points: list[LeakagePoint] = []
    saw_trailer = False
    pending: Optional[dict] = None

    def flush() -> None:
        nonlocal pending
        if pending is None:
            return
        source = pending.get("source")
        if source is None and addr_map is not None:
            source = addr_map.lookup(pending["ip"])
        if source is not None and pending.get("function") and source.function is None:
            source = SourceLocation(source.file, source.line, pending["function"])
        points.append(
            LeakagePoint(
                kind=pending["kind"],
                source=source,
                ip=pending["ip"],
                severity_bits=pending["severity"],
                detectors=(DetectorTool.MICROWALK,),
                detail=pending.get("detail", ""),
            )
        )
        pending = None

    for lineno, raw in enumerate(lines[1:], start=2):
        if saw_trailer and raw.strip():
            raise MalformedReport("content after trailer", line=lineno)
        if not raw.strip():
            continue
        if raw.strip() == "End of report":
            flush()
            saw_trailer = True
            continue
        if raw.startswith("Target:") and not points and pending is None:
            continue
        m = _MW_FINDING.match(raw)
        if m:
            flush()
            pending = {
                "kind": _MW_KIND[m.group(1)],
                "ip": int(m.group(2), 16),
                "severity": float(m.group(3)),
                "distinct": int(m.group(4)) if m.group(4) else None,
            }
            continue
        m = _MW_ATTR.match(raw)
        if m and pending is not None:
            key, value = m.group(1), m.group(2).strip()
            if key == "source":
                ref = _SRC_REF.match(value)
                if not ref:
                    raise MalformedReport(
                        "source attribute must be <file>:<line>",
                        line=lineno,
                        column=raw.index(value) + 1,
                    )
                pending["source"] = SourceLocation(
                    ref.group(1), int(ref.group(2)), pending.get("function")
                )
            else:
                pending[key] = value
            continue
        column = len(raw) - len(raw.lstrip()) + 1
        raise MalformedReport(f"unrecognized line {raw.strip()!r}", line=lineno, column=column)

    if not saw_trailer:
        raise MalformedReport("missing 'End of report' trailer", line=len(lines) + 1)
    return DetectorVerdict(points=tuple(points), tool=DetectorTool.MICROWALK, terminated=True)


_SPECTECTOR_UNSAFE = re.compile(
    r"^unsafe: (\S+):(\d+) ip=0x([0-9a-fA-F]+) reason=(.*)$"
)


def parse_spectector_output(text: str) -> DetectorVerdict:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("spectector"):
        raise MalformedReport("expected a 'spectector' banner", line=1)

    points: list[LeakagePoint] = []
    verdict: Optional[str] = None
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.strip()
        if raw in ("program is safe", "program is unsafe"):
            verdict = raw
            continue
        m = _SPECTECTOR_UNSAFE.match(raw)
        if m:
            points.append(
                LeakagePoint(
                    kind=LeakKind.SPECTRE_V1,
                    source=SourceLocation(m.group(1), int(m.group(2))),
                    ip=int(m.group(3), 16),
                    detectors=(DetectorTool.SPECTECTOR,),
                    detail=m.group(4).strip(),
                )
            )
            continue
        if raw.startswith(("policy:", "checking", "target:")):
            continue
        raise MalformedReport(f"unrecognized line {raw!r}", line=lineno)

    if verdict == "program is safe" and points:
        raise MalformedReport("safe verdict contradicts unsafe findings", line=len(lines))
    return DetectorVerdict(
        points=tuple(points),
        tool=DetectorTool.SPECTECTOR,
        terminated=verdict is not None,
    )


_PITCHFORK_VIOLATION = re.compile(
    r"^violation \((memory|branch|speculative)\): (.*?) at (\S+):(\d+)(?: ip=0x([0-9a-fA-F]+))?$"
)
_PITCHFORK_KIND = {
    "memory": LeakKind.MEMORY_ACCESS,
    "branch": LeakKind.CONDITIONAL_BRANCH,
    "speculative": LeakKind.SPECTRE_V1,
}


def parse_pitchfork_output(text: str) -> DetectorVerdict:
    lines = [l for l in text.splitlines() if l.strip()]
    if not lines or not lines[0].startswith("pitchfork"):
        raise MalformedReport("expected a 'pitchfork' banner", line=1)

    points: list[LeakagePoint] = []
    terminated = False
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.strip()
        if raw.startswith("verdict:"):
            terminated = True
            continue
        m = _PITCHFORK_VIOLATION.match(raw)
        if m:
            points.append(
                LeakagePoint(
                    kind=_PITCHFORK_KIND[m.group(1)],
                    source=SourceLocation(m.group(3), int(m.group(4))),
                    ip=int(m.group(5), 16) if m.group(5) else None,
                    detectors=(DetectorTool.PITCHFORK,),
                    detail=m.group(2).strip(),
                )
            )
            continue
        raise MalformedReport(f"unrecognized line {raw!r}", line=lineno)
    return DetectorVerdict(
        points=tuple(points), tool=DetectorTool.PITCHFORK, terminated=terminated
    )


def parse_kleespectre_output(text: str) -> DetectorVerdict:
    raise MalformedReport(
        "kleespectre reports are not supported yet; extend parse_kleespectre_output"
        " or feed the target through the spectector/pitchfork adapters",
        line=1,
    )


# ---------------------------------------------------------------------------
# builtin speculative-gadget scanner
#
# Flags conditional branches followed (within a 32-instruction window) by a
# load whose address register depends, through a def-use walk, on the result
# of an earlier register-addressed load. That is the bounds-check-bypass
# shape: `if (x < size) b[a[x] * stride]`. Purely lexical on AT&T-syntax
# disassembly; frame traffic (%rsp/%rbp) and rip-relative loads are not
# treated as taint sources. Advisory only: findings are hints for a human or
# a patching session, absence of findings proves nothing.

_WINDOW = 32

_COND_JUMPS = frozenset(
    "ja jae jb jbe jc je jg jge jl jle jna jnae jnb jnbe jnc jne jng jnge jnl"
    " jnle jno jnp jns jnz jo jp jpe jpo js jz jcxz jecxz jrcxz loop loope"
    " loopne".split()
)
_WINDOW_ENDERS = ("jmp", "ret", "call", "hlt", "ud2")
_IGNORED_BASES = frozenset({"rip", "rsp", "rbp"})


def _register_families() -> dict[str, str]:
    table: dict[str, str] = {}
    for letter in "abcd":
        family = f"r{letter}x"
        for name in (f"r{letter}x", f"e{letter}x", f"{letter}x", f"{letter}l", f"{letter}h"):
            table[name] = family
    for stem in ("si", "di", "bp", "sp"):
        family = f"r{stem}"
        for name in (f"r{stem}", f"e{stem}", stem, f"{stem}l"):
            table[name] = family
    for n in range(8, 16):
        family = f"r{n}"
        for suffix in ("", "d", "w", "b"):
            table[f"r{n}{suffix}"] = family
    table["rip"] = "rip"
    table["eip"] = "rip"
    return table


_REG_CANON = _register_families()
_REG_TOKEN = re.compile(r"%([a-z0-9]+)")


def _canon(reg: str) -> str:
    return _REG_CANON.get(reg, reg)


def _split_operands(text: str) -> list[str]:
    out, depth, cur = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == "," and depth == 0:
            out.append("".join(cur).strip())
            cur = []
        else:
            cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        out.append(tail)
    return out


@dataclass
class _Insn:
    addr: int
    mnemonic: str
    operands: list[str]
    loc: SourceLocation

    def mem_operand_index(self) -> Optional[int]:
        for i, op in enumerate(self.operands):
            if "(" in op and not op.startswith("$"):
                return i
        return None

    def mem_regs(self) -> list[str]:
        i = self.mem_operand_index()
        if i is None:
            return []
        inside = self.operands[i][self.operands[i].index("("):]
        return [_canon(r) for r in _REG_TOKEN.findall(inside)]

    def dest_reg(self) -> Optional[str]:
        if not self.operands:
            return None
        last = self.operands[-1]
        m = re.fullmatch(r"%([a-z0-9]+)", last)
        return _canon(m.group(1)) if m else None


def _parse_insn(addr: int, rest: str, loc: SourceLocation) -> Optional[_Insn]:
    rest = rest.split("#", 1)[0].strip()
    if not rest:
        return None
    parts = rest.split(None, 1)
    mnemonic = parts[0]
    if mnemonic in ("lock", "rep", "repz", "repnz", "data16", "bnd"):
        return _parse_insn(addr, parts[1] if len(parts) > 1 else "", loc)
    operands = _split_operands(parts[1]) if len(parts) > 1 else []
    return _Insn(addr, mnemonic, operands, loc)


def builtin_spectre_scan(disasm_text: str) -> DetectorVerdict:
    insns: list[_Insn] = []
    for addr, _, rest, loc in iter_instructions(disasm_text):
        insn = _parse_insn(addr, rest, loc)
        if insn is not None:
            insns.append(insn)
    if not insns:
        raise UnparsableDisassembly("no instructions found in disassembly")
    insns.sort(key=lambda i: i.addr)

    points: list[LeakagePoint] = []
    for i, branch in enumerate(insns):
        if branch.mnemonic not in _COND_JUMPS:
            continue
        hit = _scan_window(insns[i + 1 : i + 1 + _WINDOW])
        if hit is None:
            continue
        first_load, second_load = hit
        points.append(
            LeakagePoint(
                kind=LeakKind.SPECTRE_V1,
                source=branch.loc if branch.loc.file else None,
                ip=branch.addr,
                detectors=(DetectorTool.BUILTIN,),
                detail=(
                    f"conditional branch {branch.mnemonic} at {branch.addr:#x} guards a"
                    f" load at {second_load.addr:#x} whose address depends on a load at"
                    f" {first_load.addr:#x}"
                ),
            )
        )
    return DetectorVerdict(
        points=tuple(points), tool=DetectorTool.BUILTIN, terminated=True, advisory=True
    )


def _scan_window(window: Sequence[_Insn]) -> Optional[tuple[_Insn, _Insn]]:
    tainted: dict[str, _Insn] = {}
    for insn in window:
        if insn.mnemonic.startswith(_WINDOW_ENDERS):
            return None
        mem_idx = insn.mem_operand_index()
        dest = insn.dest_reg()
        is_load = mem_idx is not None and mem_idx != len(insn.operands) - 1 and dest
        if is_load:
            addr_regs = [r for r in insn.mem_regs() if r not in _IGNORED_BASES]
            for reg in addr_regs:
                if reg in tainted:
                    return tainted[reg], insn
            if addr_regs:
                tainted[dest] = insn
            else:
                tainted.pop(dest, None)
            continue
        if dest is None or mem_idx == len(insn.operands) - 1:
            continue  # store, compare, or no register result: taint unchanged
        srcs = {
            _canon(m.group(1))
            for op in insn.operands[:-1]
            for m in [re.fullmatch(r"%([a-z0-9]+)", op)]
            if m
        }
        if insn.mnemonic.startswith(("xor", "sub")) and srcs == {dest}:
            tainted.pop(dest, None)  # self-zeroing idiom
        elif insn.mnemonic.startswith(("mov", "lea")):
            srcs |= {r for r in insn.mem_regs() if r not in _IGNORED_BASES}
            hit = next((tainted[r] for r in srcs if r in tainted), None)
            if hit is not None:
                tainted[dest] = hit
            else:
                tainted.pop(dest, None)
        else:
            hit = next((tainted[r] for r in srcs if r in tainted), None)
            if hit is not None:
                tainted[dest] = hit
    return None


# ---------------------------------------------------------------------------
# merging and serialization


def _merge_key(point: LeakagePoint) -> tuple:
    return (point.kind, point.source, point.ip)


def merge_verdicts(verdicts: Iterable[DetectorVerdict]) -> list[LeakagePoint]:
    """Deduplicate points across tools.

    Points agreeing on (kind, source, ip) collapse to one carrying the max
    severity and the union of reporting detectors; the result is independent
    of verdict order and of repeated verdicts.
    """
    merged: dict[tuple, LeakagePoint] = {}
    for verdict in verdicts:
        for point in verdict.points:
            key = _merge_key(point)
            prior = merged.get(key)
            if prior is None:
                merged[key] = point
                continue
            severities = [s for s in (prior.severity_bits, point.severity_bits) if s is not None]
            detectors = tuple(
                sorted(set(prior.detectors) | set(point.detectors), key=lambda d: d.value)
            )
            merged[key] = LeakagePoint(
                kind=prior.kind,
                source=prior.source,
                ip=prior.ip,
                severity_bits=max(severities) if severities else None,
                detectors=detectors,
                detail=prior.detail or point.detail,
            )
    out = list(merged.values())
    out.sort(key=_sort_key)
    return out


def _sort_key(point: LeakagePoint) -> tuple:
    source = point.source
    return (
        source is None,
        source.file or "" if source else "",
        source.line or 0 if source else 0,
        point.ip if point.ip is not None else -1,
        point.kind.value,
    )


def secure_conclusion(verdicts: Sequence[DetectorVerdict]) -> bool:
    """True only if every tool ran to completion, none found anything, and at
    least one non-advisory tool was involved."""
    verdicts = list(verdicts)
    if not verdicts or not any(not v.advisory for v in verdicts):
        return False
    return all(v.terminated for v in verdicts) and not any(v.points for v in verdicts)


def points_to_json(points: Sequence[LeakagePoint]) -> str:
    rows = []
    for p in points:
        rows.append(
            {
                "kind": p.kind.value,
                "file": p.source.file if p.source else None,
                "line": p.source.line if p.source else None,
                "ip": p.ip,
                "severity_bits": p.severity_bits,
                "detector": [d.value for d in p.detectors],
                "detail": p.detail,
            }
        )
    return json.dumps(rows, indent=2)


def points_from_json(text: str) -> list[LeakagePoint]:
    points = []
    for row in json.loads(text):
        source = None
        if row.get("file") is not None or row.get("line") is not None:
            source = SourceLocation(row.get("file"), row.get("line"))
        points.append(
            LeakagePoint(
                kind=LeakKind(row["kind"]),
                source=source,
                ip=row.get("ip"),
                severity_bits=row.get("severity_bits"),
                detectors=tuple(DetectorTool(d) for d in row.get("detector", [])),
                detail=row.get("detail", ""),
            )
        )
    return points


# ---------------------------------------------------------------------------
# source-line heuristics shared with the patching loop

_LOOP_KEYWORD = re.compile(r"\b(for|while|do)\b")
_ARRAY_REF = re.compile(r"([A-Za-z_]\w*)\s*\[")


def classify_control_flow(line_text: str) -> LeakKind:
    """Loop-bound leak if the flagged line is lexically a loop, else branch."""
    if _LOOP_KEYWORD.search(line_text):
        return LeakKind.LOOP_BOUND
    return LeakKind.CONDITIONAL_BRANCH


def array_names(line_text: str) -> list[str]:
    seen: list[str] = []
    for m in _ARRAY_REF.finditer(line_text):
        if m.group(1) not in seen:
            seen.append(m.group(1))
    return seen
