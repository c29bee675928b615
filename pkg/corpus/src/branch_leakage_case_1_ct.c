/* Constant-time rewrite of branch_leakage_case_1: differences accumulate
 * bitwise over all 16 bytes with no data-dependent branch, so rejection
 * takes the same path as acceptance. Functional behavior is unchanged.
 * Secret bytes used: 2 (mismatch position and the flipped bits). */

#include "zltr_shim.h"

#include "driver_support.h"

static unsigned char stored_pw[16];

int branch_leakage_case_1_ct(const unsigned char *pw, const unsigned char *in)
{
    unsigned diff = 0;
    for (int i = 0; i < 16; i++)
        diff |= (unsigned)(pw[TRACE_READ(i)] ^ in[TRACE_READ(i)]);
    return diff == 0;
}

void InitTarget(FILE *input)
{
    (void)input;
    for (int i = 0; i < 16; i++)
        stored_pw[i] = (unsigned char)(i * 7 + 3);
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    unsigned char guess[16];
    memcpy(guess, stored_pw, 16);
    int pos = secret[0] % 17;
    if (pos < 16)
        guess[pos] ^= (unsigned char)(secret[1] | 1);
    int ok = branch_leakage_case_1_ct(stored_pw, guess);
    CHECK(ok == (pos == 16));
}
