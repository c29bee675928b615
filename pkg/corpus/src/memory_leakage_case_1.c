/* Option-gated table access: the untaken arm indexes the table with a
 * secret-derived value, so this case leaks through both the branch and
 * the access pattern. Secret bytes used: 2 (x, option). */

#include "zltr_shim.h"

#include "driver_support.h"

int memory_leakage_case_1(int x, int y, int option)
{
    volatile int z[3] = {0, 2, 300};
    z[TRACE_WRITE(2)] = y;
    if (TRACE_BRANCH(option > 3))
        return z[TRACE_READ(1)];
    else
        return z[TRACE_READ(x % 3)];
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int x = secret[0];
    int option = secret[1] % 8;
    int got = memory_leakage_case_1(x, 7, option);
    if (option > 3) {
        CHECK(got == 2);
    } else {
        int plain[3] = {0, 2, 7};
        CHECK(got == plain[x % 3]);
    }
}
