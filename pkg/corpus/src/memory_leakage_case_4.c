/* Digit-substitution cipher over a small codebook: each message byte
 * selects the codebook slot to read, so the access pattern spells out
 * the message. Secret bytes used: 10 (the digits). */

#include "zltr_shim.h"

#include "driver_support.h"

static const unsigned char book[10] __attribute__((aligned(64))) = {
    52, 48, 55, 51, 56, 54, 50, 49, 57, 53,
};

void memory_leakage_case_4(unsigned char *msg, int len)
{
    for (int i = 0; i < len; i++)
        msg[TRACE_WRITE(i)] = book[TRACE_READ(msg[i] - 48)];
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    unsigned char msg[10];
    unsigned char digits[10];
    for (int i = 0; i < 10; i++) {
        digits[i] = secret[i] % 10;
        msg[i] = (unsigned char)('0' + digits[i]);
    }
    memory_leakage_case_4(msg, 10);
    for (int i = 0; i < 10; i++)
        CHECK(msg[i] == book[digits[i]]);
}
