from __future__ import annotations

import pytest

from leakpatch.srcmap import (
    AddressMap,
    NoInstructionsFound,
    SourceLocation,
    iter_instructions,
    parse_annotated_disassembly,
)

from conftest import FIXTURES

TWOFUNC = (FIXTURES / "disasm" / "twofunc.txt").read_text()


def test_fixture_parses_with_expected_shape():
    amap = parse_annotated_disassembly(TWOFUNC)
    functions = {loc.function for _, _, loc in amap.ranges}
    assert functions == {"lut_select", "sum_to_bound"}
    lines = {(loc.file, loc.line) for _, _, loc in amap.ranges}
    assert len(lines) >= 5
    assert all(f == "/tmp/fixgen/twofunc.c" for f, _ in lines)


def test_every_instruction_resolves_to_its_marker():
    amap = parse_annotated_disassembly(TWOFUNC)
    instructions = list(iter_instructions(TWOFUNC))
    assert len(instructions) >= 15
    for addr, size, _, loc in instructions:
        for probe in (addr, addr + size - 1):
            got = amap.lookup(probe)
            assert got is not None
            assert (got.file, got.line, got.function) == (loc.file, loc.line, loc.function)


def test_lookup_outside_coverage_is_none():
    amap = parse_annotated_disassembly(TWOFUNC)
    first_start = amap.ranges[0][0]
    last_end = amap.ranges[-1][1]
    assert amap.lookup(first_start - 1) is None
    assert amap.lookup(last_end) is None
    assert amap.lookup(last_end + 0x1000) is None


def test_interior_gap_returns_none():
    amap = AddressMap(ranges=(
        (0x10, 0x20, SourceLocation("a.c", 1)),
        (0x30, 0x34, SourceLocation("a.c", 2)),
    ))
    assert amap.lookup(0x1f) == SourceLocation("a.c", 1)
    assert amap.lookup(0x20) is None
    assert amap.lookup(0x2f) is None
    assert amap.lookup(0x30) == SourceLocation("a.c", 2)


def test_marker_applies_until_superseded():
    text = (
        "0000000000000000 <f>:\n"
        "f():\n"
        "/src/x.c:3\n"
        "   0:\t90                   \tnop\n"
        "   1:\t90                   \tnop\n"
        "/src/x.c:9\n"
        "   2:\t90                   \tnop\n"
    )
    amap = parse_annotated_disassembly(text)
    assert amap.lookup(0x1).line == 3
    assert amap.lookup(0x2).line == 9


def test_instructions_before_any_marker_have_no_file():
    text = (
        "0000000000000000 <f>:\n"
        "   0:\t90                   \tnop\n"
    )
    amap = parse_annotated_disassembly(text)
    loc = amap.lookup(0)
    assert loc == SourceLocation(None, None, "f")


def test_no_instructions_is_an_error():
    with pytest.raises(NoInstructionsFound):
        parse_annotated_disassembly("just some text\n")
    with pytest.raises(NoInstructionsFound):
        parse_annotated_disassembly("")


def test_ranges_must_be_sorted_and_disjoint():
    with pytest.raises(ValueError):
        AddressMap(ranges=((0x10, 0x20, SourceLocation("a.c", 1)),
                           (0x18, 0x30, SourceLocation("a.c", 2))))
    with pytest.raises(ValueError):
        AddressMap(ranges=((0x10, 0x10, SourceLocation("a.c", 1)),))


def test_line_numbers_start_at_one():
    with pytest.raises(ValueError):
        SourceLocation("a.c", 0)


def test_json_round_trip():
    amap = parse_annotated_disassembly(TWOFUNC)
    assert AddressMap.from_json(amap.to_json()) == amap
