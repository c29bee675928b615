/* Three-byte equality with no if statement in sight: the && chain still
 * short-circuits, so the compiler emits one conditional jump per leg and
 * the source-level "branch-free" look is an illusion. The instrumented
 * build records those decisions; the plain optimized build shows them in
 * the disassembly. Secret bytes used: 2 (mismatch position, flip bits). */

#include "zltr_shim.h"

#include "driver_support.h"

int equal(const unsigned char *p, const unsigned char *q)
{
    return TRACE_BRANCH(p[0] == q[0]) && TRACE_BRANCH(p[1] == q[1]) &&
           TRACE_BRANCH(p[2] == q[2]);
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    const unsigned char p[3] = {11, 47, 102};
    unsigned char q[3] = {11, 47, 102};
    int pos = secret[0] % 4; /* 3 means equal inputs */
    if (pos < 3)
        q[pos] ^= (unsigned char)(secret[1] | 1);
    int got = equal(p, q);
    CHECK(got == (pos == 3));
}
