/* Branching on one secret inside the arm selected by another (Blazer
 * benchmark shape): the positive arm runs two counting loops, the
 * negative arm picks a constant by a second secret flag.
 * Secret bytes used: 2 (low, high). */

#include "zltr_shim.h"

#include "driver_support.h"

int branch_leakage_case_5(int high, int low)
{
    int i = 0;
    if (TRACE_BRANCH(low > 0)) {
        i = 0;
        while (TRACE_BRANCH(i < low))
            i++;
        while (TRACE_BRANCH(i > 0))
            i--;
    } else {
        if (TRACE_BRANCH(high == 0)) {
            i = 5;
        } else {
            i = 0;
            i++;
        }
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
    int low = secret[0] % 7 - 3;
    int high = secret[1] & 1;
    int got = branch_leakage_case_5(high, low);
    if (low > 0)
        CHECK(got == 0);
    else
        CHECK(got == (high == 0 ? 5 : 1));
}
