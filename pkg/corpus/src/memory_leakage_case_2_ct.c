/* Constant-time rewrite of memory_leakage_case_2: the masked scan reads
 * every table slot in order regardless of the key, so the access pattern
 * carries no information. Functional behavior is unchanged.
 * Secret bytes used: 1 (key). */

#include "zltr_shim.h"

#include "driver_support.h"

static const unsigned char LUT[16] = {
    0x52, 0x19, 0x3E, 0x7F, 0x0C, 0x5A, 0x6D, 0x2B,
    0x3F, 0x1A, 0x7E, 0x53, 0x6C, 0x5B, 0x0D, 0x37,
};

static unsigned masked_transform(unsigned kval)
{
    unsigned idx = kval % 16;
    unsigned result = 0;
    for (unsigned i = 0; i < 16; i++) {
        unsigned mask = (unsigned)-(unsigned)(i == idx);
        result |= LUT[TRACE_READ(i)] & mask;
    }
    return result;
}

unsigned memory_leakage_case_2_ct(unsigned key)
{
    return masked_transform(0) + masked_transform(key);
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    unsigned key = secret[0];
    unsigned got = memory_leakage_case_2_ct(key);
    CHECK(got == (unsigned)LUT[0] + (unsigned)LUT[key % 16]);
}
