"""Regenerates the committed trace bundles under tests/fixtures/bundles/.

Each case function models what the instrumentation shim records for one run
of the matching corpus function: branch events carry the taken flag, memory
events carry the normalized index, and the ip is a stable per-site constant
(the shim uses source lines the same way). Only sites on the secret-derived
data path are modeled; always-constant bookkeeping the real shim would also
record cannot change any finding and is elided where it adds nothing.
Sixteen runs with seeded random secrets make up one bundle. The two *_ct
cases model constant-time rewrites and must come out clean under analysis.

Usage: python3 tests/fixtures/gen_bundles.py [outdir]
"""

from __future__ import annotations

import argparse
import random
import sys
from pathlib import Path

from leakpatch.trace import (
    EventKind,
    ExecutionTrace,
    TraceEvent,
    trace_file_name,
    write_trace_path,
)

B = EventKind.BRANCH
R = EventKind.MEM_READ
W = EventKind.MEM_WRITE

INPUTS_PER_BUNDLE = 16
SECRET_BYTES = 16

# the fixed stored password the compare cases check guesses against
PW = bytes((i * 7 + 3) % 256 for i in range(16))


def _mismatch_guess(secret: bytes) -> bytes:
    """A guess equal to PW except at one secret-chosen position."""
    pos = secret[0] % 16
    guess = bytearray(PW)
    guess[pos] ^= secret[1] | 1
    return bytes(guess)


# ---------------------------------------------------------------------------
# memory-access section


def memory_leakage_case_1(secret):
    # the one case that leaks through both channels: the branch chooses a
    # path and the fallthrough path indexes with the secret
    x = secret[0]
    option = secret[1] % 8
    ev = [(W, 11, 0), (W, 11, 1), (W, 11, 2), (W, 12, 2)]
    taken = option > 3
    ev.append((B, 13, int(taken)))
    if taken:
        ev.append((R, 14, 1))
    else:
        ev.append((R, 16, x % 3))
    return ev


def memory_leakage_case_2(secret):
    key = secret[0]
    ev = []
    for kval in (0, key):
        ev.append((R, 9, kval % 16))
    return ev


def memory_leakage_case_3(secret):
    s = secret[0]
    ev = [(W, 7, i) for i in range(128)]
    index = 0
    for _ in range(200):
        index = (index + s) % 128
        ev.append((R, 13, index))
        ev.append((R, 14, index % 64))
    return ev


def memory_leakage_case_4(secret):
    ev = []
    for i, b in enumerate(secret[:10]):
        digit = b % 10
        ev.append((R, 8, digit))
        ev.append((W, 8, i))
    return ev


def memory_leakage_case_5(secret):
    s = secret[0] % 24
    ev = [(B, 7, int(s < 16))]
    if s < 16:
        ev.append((R, 8, s))
    return ev


# ---------------------------------------------------------------------------
# branch section


def branch_leakage_case_1(secret):
    guess = _mismatch_guess(secret)
    ev = []
    for i in range(16):
        ne = PW[i] != guess[i]
        ev.append((B, 9, int(ne)))
        if ne:
            break
    return ev


def branch_leakage_case_2(secret):
    a = list(secret[:8])
    ev = []
    for i in range(1, 8):
        index = a[i]
        j = i
        while True:
            cond = j > 0 and a[j - 1] > index
            ev.append((B, 10, int(cond)))
            if not cond:
                break
            a[j] = a[j - 1]
            j -= 1
        a[j] = index
    return ev


def branch_leakage_case_3(secret):
    p = bytes((5, 29, 71))
    pos = secret[0] % 4
    q = bytearray(p)
    if pos < 3:
        q[pos] ^= secret[1] | 1
    ev = [(B, 8, int(p[0] != q[0]))]
    if p[0] == q[0]:
        ev.append((B, 10, int(p[1] != q[1])))
        # the final byte compare is a branch-free return expression
    return ev


def branch_leakage_case_4(secret):
    high = secret[0] & 1
    low = 8
    ev = [(B, 8, int(high == 0))]
    if high == 0:
        i = 0
        while i < low:
            ev.append((B, 10, 1))
            i += 1
        ev.append((B, 10, 0))
    else:
        i = low
        while i > 0:
            ev.append((B, 14, 1))
            i -= 1
        ev.append((B, 14, 0))
    return ev


def branch_leakage_case_5(secret):
    low = secret[0] % 7 - 3
    high = secret[1] & 1
    ev = [(B, 8, int(low > 0))]
    if low > 0:
        i = 0
        while i < low:
            ev.append((B, 10, 1))
            i += 1
        ev.append((B, 10, 0))
        while i > 0:
            ev.append((B, 11, 1))
            i -= 1
        ev.append((B, 11, 0))
    else:
        ev.append((B, 13, int(high == 0)))
    return ev


def branch_leakage_case_6(secret):
    x = secret[0] % 20
    return [(B, 6, int(x > 10))]


def branch_leakage_case_7(secret):
    option = secret[0] % 8
    ev = [(W, 7, 0), (W, 7, 1), (W, 7, 2), (W, 8, 2)]
    taken = option > 3
    ev.append((B, 9, int(taken)))
    if taken:
        ev.append((R, 10, 1))
    else:
        ev.append((R, 12, 2))
    return ev


def branch_leakage_case_8(secret):
    guess = _mismatch_guess(secret)
    ev = []
    for i in range(16):
        ne = PW[i] != guess[i]
        ev.append((B, 9, int(ne)))
        if ne:
            break
    return ev


def branch_leakage_case_9(secret):
    a = [
        int.from_bytes(secret[0:4], "little"),
        int.from_bytes(secret[4:8], "little"),
        int.from_bytes(secret[8:12], "little"),
    ]
    ev = []
    for _ in range(32):
        ev.append((B, 12, a[0] & 1))
        ev.append((B, 14, a[1] & 1))
        ev.append((B, 16, a[2] & 1))
        a = [w >> 1 for w in a]
    return ev


def branch_leakage_case_10(secret):
    public_arr = (5, 20, 9, 31)
    i = secret[0] % 4
    x = public_arr[i]
    ev = [(R, 7, i)]
    for j in range(4):
        ev.append((R, 9, j))
        ev.append((W, 9, j))
    taken = x > 10
    ev.append((B, 11, int(taken)))
    if taken:
        ev.append((R, 12, 0))
    else:
        ev.append((R, 14, 1))
    return ev


def branch_leakage_case_11(secret):
    a = list(secret[:6])
    n = 6
    ev = []
    for i in range(n - 1):
        for j in range(n - 1 - i):
            swap = a[j] > a[j + 1]
            ev.append((B, 9, int(swap)))
            if swap:
                a[j], a[j + 1] = a[j + 1], a[j]
    return ev


def branch_leakage_case_12(secret):
    a = list(secret[:6])
    ev = []
    for i in range(5):
        m = i
        for j in range(i + 1, 6):
            less = a[j] < a[m]
            ev.append((B, 8, int(less)))
            if less:
                m = j
        a[i], a[m] = a[m], a[i]
    return ev


# ---------------------------------------------------------------------------
# constant-time references


def memory_leakage_case_2_ct(secret):
    key = secret[0]
    ev = []
    for kval in (0, key):
        del kval  # the masked scan touches every slot regardless
        for i in range(16):
            ev.append((B, 10, 1))
            ev.append((R, 11, i))
        ev.append((B, 10, 0))
    return ev


def branch_leakage_case_1_ct(secret):
    ev = []
    for i in range(16):
        ev.append((R, 8, i))
        ev.append((R, 9, i))
    return ev


ALL_CASES = {
    "memory_leakage_case_1": memory_leakage_case_1,
    "memory_leakage_case_2": memory_leakage_case_2,
    "memory_leakage_case_3": memory_leakage_case_3,
    "memory_leakage_case_4": memory_leakage_case_4,
    "memory_leakage_case_5": memory_leakage_case_5,
    "branch_leakage_case_1": branch_leakage_case_1,
    "branch_leakage_case_2": branch_leakage_case_2,
    "branch_leakage_case_3": branch_leakage_case_3,
    "branch_leakage_case_4": branch_leakage_case_4,
    "branch_leakage_case_5": branch_leakage_case_5,
    "branch_leakage_case_6": branch_leakage_case_6,
    "branch_leakage_case_7": branch_leakage_case_7,
    "branch_leakage_case_8": branch_leakage_case_8,
    "branch_leakage_case_9": branch_leakage_case_9,
    "branch_leakage_case_10": branch_leakage_case_10,
    "branch_leakage_case_11": branch_leakage_case_11,
    "branch_leakage_case_12": branch_leakage_case_12,
    "memory_leakage_case_2_ct": memory_leakage_case_2_ct,
    "branch_leakage_case_1_ct": branch_leakage_case_1_ct,
}


def case_secret(case: str, input_id: int) -> bytes:
    rng = random.Random(f"{case}-{input_id}")
    return bytes(rng.randrange(256) for _ in range(SECRET_BYTES))


def build_case(case: str, out_dir: Path) -> None:
    emit = ALL_CASES[case]
    case_dir = out_dir / case
    case_dir.mkdir(parents=True, exist_ok=True)
    for input_id in range(INPUTS_PER_BUNDLE):
        rows = emit(case_secret(case, input_id))
        events = tuple(
            TraceEvent(kind=kind, ip=ip, payload=payload) for kind, ip, payload in rows
        )
        trace = ExecutionTrace(input_id=input_id, events=events)
        write_trace_path(case_dir / trace_file_name(input_id), trace)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "outdir",
        nargs="?",
        default=str(Path(__file__).parent / "bundles"),
        help="directory to write the per-case bundle directories into",
    )
    args = parser.parse_args(argv)
    out = Path(args.outdir)
    for case in ALL_CASES:
        build_case(case, out)
    print(f"wrote {len(ALL_CASES)} bundles under {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
