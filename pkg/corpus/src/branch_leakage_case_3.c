/* Chained-if triple compare: equality of the first two bytes is decided
 * by branches, only the last byte compare is a branch-free expression,
 * so where the chain exits leaks the first difference.
 * Secret bytes used: 2 (mismatch position and the flipped bits). */

#include "zltr_shim.h"

#include "driver_support.h"

int branch_leakage_case_3(const unsigned char *p, const unsigned char *q)
{
    if (TRACE_BRANCH(p[0] != q[0]))
        return 0;
    else if (TRACE_BRANCH(p[1] != q[1]))
        return 0;
    else
        return p[2] == q[2];
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    const unsigned char p[3] = {5, 29, 71};
    unsigned char q[3] = {5, 29, 71};
    int pos = secret[0] % 4; /* 3 means equal inputs */
    if (pos < 3)
        q[pos] ^= (unsigned char)(secret[1] | 1);
    int got = branch_leakage_case_3(p, q);
    CHECK(got == (pos == 3));
}
