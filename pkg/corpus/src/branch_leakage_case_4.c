/* Two-arm counting loops (Blazer benchmark shape): which while loop spins
 * depends on the secret flag, so the branch sites differ per arm even
 * though both arms do the same amount of work.
 * Secret bytes used: 1 (the flag). */

#include "zltr_shim.h"

#include "driver_support.h"

int branch_leakage_case_4(int high, int low)
{
    int i;
    if (TRACE_BRANCH(high == 0)) {
        i = 0;
        while (TRACE_BRANCH(i < low))
            i++;
    } else {
        i = low;
        while (TRACE_BRANCH(i > 0))
            i--;
    }
    return i;
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int high = secret[0] & 1;
    int got = branch_leakage_case_4(high, 8);
    CHECK(got == (high == 0 ? 8 : 0));
}
