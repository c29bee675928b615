/* Guarded direct indexing with the secret: in range, the read address is
 * the secret itself. The driver keeps inputs inside the guard, making
 * this a pure access-pattern leak. Secret bytes used: 1. */

#include "zltr_shim.h"

#include "driver_support.h"

static const int A[16] = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};

int memory_leakage_case_5(int secret)
{
    if (TRACE_BRANCH(secret < 16))
        return A[TRACE_READ(secret)];
    return 0;
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int s = secret[0] % 16;
    CHECK(memory_leakage_case_5(s) == s);
}
