/* Byte-compare loop with early exit, the shape the ctgrind examples use
 * to demonstrate non-constant-time memory comparison.
 * Secret bytes used: 2 (mismatch position and the flipped bits). */

#include "zltr_shim.h"

#include "driver_support.h"

static unsigned char stored_key[16];

int branch_leakage_case_8(const unsigned char *a, const unsigned char *b, int len)
{
    for (int i = 0; i < len; i++) {
        if (TRACE_BRANCH(a[i] != b[i]))
            return 0;
    }
    return 1;
}

void InitTarget(FILE *input)
{
    (void)input;
    for (int i = 0; i < 16; i++)
        stored_key[i] = (unsigned char)(i * 13 + 5);
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    unsigned char probe[16];
    memcpy(probe, stored_key, 16);
    int pos = secret[0] % 17;
    if (pos < 16)
        probe[pos] ^= (unsigned char)(secret[1] | 1);
    int ok = branch_leakage_case_8(stored_key, probe, 16);
    CHECK(ok == (pos == 16));
}
