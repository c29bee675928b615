/* Option-gated table read with fixed indices: both arms read a constant
 * slot, so only the branch itself is secret-dependent (contrast with
 * memory_leakage_case_1, where one arm's index is the secret).
 * Secret bytes used: 2 (option, x). */

#include "zltr_shim.h"

#include "driver_support.h"

int branch_leakage_case_7(int x, int y, int option)
{
    (void)x;
    volatile int z[3] = {0, 2, 300};
    z[TRACE_WRITE(2)] = y;
    if (TRACE_BRANCH(option > 3))
        return z[TRACE_READ(1)];
    else
        return z[TRACE_READ(2)];
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int option = secret[0] % 8;
    int got = branch_leakage_case_7(secret[1], 7, option);
    CHECK(got == (option > 3 ? 2 : 7));
}
