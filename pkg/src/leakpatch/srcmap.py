"""Map instruction addresses back to source lines.

Input is annotated disassembly in ``objdump -dl`` style:

    0000000000001129 <transform>:
    transform():
    /work/case.c:12
        1129:\t f3 0f 1e fa          \t endbr64
        112d:\t 89 f8                \t mov    %edi,%eax
    /work/case.c:13
        ...

Function headers set the current symbol, ``file:line`` markers set the
current source location, and each instruction line claims the most recent
preceding marker. Addresses between two markers therefore resolve to the
earlier one.
"""

from __future__ import annotations

import json
import re
from bisect import bisect_right
from dataclasses import dataclass
from typing import Iterator, Optional


class NoInstructionsFound(ValueError):
    """The text contained no recognizable instruction lines."""


@dataclass(frozen=True)
class SourceLocation:
    file: Optional[str]
    line: Optional[int]
    function: Optional[str] = None

    def __post_init__(self) -> None:
        if self.line is not None and self.line < 1:
            raise ValueError(f"line numbers start at 1, got {self.line}")

    def __str__(self) -> str:
        base = f"{self.file or '?'}:{self.line if self.line is not None else '?'}"
        return f"{base} ({self.function})" if self.function else base


_FUNC_HEADER = re.compile(r"^([0-9a-fA-F]+)\s+<([^>]+)>:\s*$")
_SOURCE_MARKER = re.compile(r"^(\S*[/\\.]\S*|\S+):(\d+)(?:\s+\(discriminator \d+\))?\s*$")
_INSTRUCTION = re.compile(r"^\s+([0-9a-fA-F]+):\t([0-9a-fA-F]{2}(?: [0-9a-fA-F]{2})*)\s*\t?(.*)$")
# objdump repeats the symbol as "name():" before the first marker
_FUNC_NAME_LINE = re.compile(r"^\S+\(\):$")


def iter_instructions(text: str) -> Iterator[tuple[int, int, str, SourceLocation]]:
    """Yield (address, size_bytes, rest_of_line, location) per instruction."""
    function: Optional[str] = None
    marker: Optional[tuple[str, int]] = None
    for raw in text.splitlines():
        m = _FUNC_HEADER.match(raw)
        if m:
            function = m.group(2)
            marker = None
            continue
        if _FUNC_NAME_LINE.match(raw.strip()) and raw.strip()[:-3] == (function or ""):
            continue
        m = _INSTRUCTION.match(raw)
        if m:
            addr = int(m.group(1), 16)
            size = len(m.group(2).split())
            loc = SourceLocation(
                file=marker[0] if marker else None,
                line=marker[1] if marker else None,
                function=function,
            )
            yield addr, size, m.group(3), loc
            continue
        m = _SOURCE_MARKER.match(raw.strip())
        if m:
            marker = (m.group(1), int(m.group(2)))


@dataclass(frozen=True)
class AddressMap:
    """Sorted, non-overlapping [start, end) ranges with their locations."""

    ranges: tuple[tuple[int, int, SourceLocation], ...]

    def __post_init__(self) -> None:
        prev_end = -1
        for start, end, _ in self.ranges:
            if start < prev_end or end <= start:
                raise ValueError("ranges must be sorted and non-overlapping")
            prev_end = end

    def lookup(self, ip: int) -> Optional[SourceLocation]:
        starts = [r[0] for r in self.ranges]
        i = bisect_right(starts, ip) - 1
        if i < 0:
            return None
        start, end, loc = self.ranges[i]
        return loc if start <= ip < end else None

    def to_json(self) -> str:
        rows = [
            {"start": s, "end": e, "file": loc.file, "line": loc.line,
             "function": loc.function}
            for s, e, loc in self.ranges
        ]
        return json.dumps(rows, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "AddressMap":
        rows = json.loads(text)
        return cls(ranges=tuple(
            (r["start"], r["end"],
             SourceLocation(r["file"], r["line"], r.get("function")))
            for r in rows
        ))


def parse_annotated_disassembly(text: str) -> AddressMap:
    instructions = sorted(iter_instructions(text), key=lambda t: t[0])
    if not instructions:
        raise NoInstructionsFound("no instruction lines in input")

    ranges: list[tuple[int, int, SourceLocation]] = []
    for addr, size, _, loc in instructions:
        end = addr + max(size, 1)
        if ranges and ranges[-1][2] == loc and ranges[-1][1] >= addr:
            ranges[-1] = (ranges[-1][0], max(ranges[-1][1], end), loc)
        else:
            if ranges and ranges[-1][1] > addr:
                # duplicate/overlapping listing (e.g. repeated section dump)
                ranges[-1] = (ranges[-1][0], addr, ranges[-1][2])
            ranges.append((addr, end, loc))
    return AddressMap(ranges=tuple(r for r in ranges if r[1] > r[0]))
