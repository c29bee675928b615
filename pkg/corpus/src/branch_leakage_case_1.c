/* Early-exit password compare: the loop stops at the first mismatching
 * byte, so the number of compare branches tracks the mismatch position.
 * Secret bytes used: 2 (mismatch position and the flipped bits). */

#include "zltr_shim.h"

#include "driver_support.h"

static unsigned char stored_pw[16];

int branch_leakage_case_1(const unsigned char *pw, const unsigned char *in)
{
    for (int i = 0; i < 16; i++) {
        if (TRACE_BRANCH(pw[i] != in[i]))
            return 0;
    }
    return 1;
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
    int pos = secret[0] % 17; /* 16 means a fully matching guess */
    if (pos < 16)
        guess[pos] ^= (unsigned char)(secret[1] | 1);
    int ok = branch_leakage_case_1(stored_pw, guess);
    CHECK(ok == (pos == 16));
}
