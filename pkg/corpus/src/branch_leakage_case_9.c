/* Word-reversal step of the 3-Way cipher: each round tests the low bit
 * of every state word with an if, so the branch trace is the key bits.
 * The transform is an involution, which the driver checks by applying it
 * twice. Secret bytes used: 12 (three 32-bit words). */

#include "zltr_shim.h"

#include <stdint.h>

#include "driver_support.h"

void branch_leakage_case_9(uint32_t *a)
{
    uint32_t b[3] = {0, 0, 0};
    for (int k = 0; k < 32; k++) {
        b[0] <<= 1;
        b[1] <<= 1;
        b[2] <<= 1;
        if (TRACE_BRANCH(a[0] & 1))
            b[2] |= 1;
        if (TRACE_BRANCH(a[1] & 1))
            b[1] |= 1;
        if (TRACE_BRANCH(a[2] & 1))
            b[0] |= 1;
        a[0] >>= 1;
        a[1] >>= 1;
        a[2] >>= 1;
    }
    a[0] = b[0];
    a[1] = b[1];
    a[2] = b[2];
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    uint32_t a[3];
    uint32_t orig[3];
    for (int w = 0; w < 3; w++) {
        a[w] = (uint32_t)secret[4 * w] | ((uint32_t)secret[4 * w + 1] << 8) |
               ((uint32_t)secret[4 * w + 2] << 16) |
               ((uint32_t)secret[4 * w + 3] << 24);
        orig[w] = a[w];
    }
    branch_leakage_case_9(a);
    branch_leakage_case_9(a);
    for (int w = 0; w < 3; w++)
        CHECK(a[w] == orig[w]);
}
