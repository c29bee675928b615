/* Single secret-dependent if/else: one branch outcome, one bit leaked.
 * Secret bytes used: 1. */

#include "zltr_shim.h"

#include "driver_support.h"

int branch_leakage_case_6(int x)
{
    if (TRACE_BRANCH(x > 10))
        return x % 2;
    else
        return x + 10;
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int x = secret[0] % 20;
    int got = branch_leakage_case_6(x);
    CHECK(got == (x > 10 ? x % 2 : x + 10));
}
