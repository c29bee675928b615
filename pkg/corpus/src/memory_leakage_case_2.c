/* Key-dependent lookup table access, the classic cache-leakage shape. The
 * transform is split out (and kept externally visible) so a patching run
 * can target it by name. Secret bytes used: 1 (key). */

#include "zltr_shim.h"

#include "driver_support.h"

static const unsigned char LUT[16] = {
    0x52, 0x19, 0x3E, 0x7F, 0x0C, 0x5A, 0x6D, 0x2B,
    0x3F, 0x1A, 0x7E, 0x53, 0x6C, 0x5B, 0x0D, 0x37,
};

unsigned memory_leakage_case_2_transform(unsigned kval)
{
    return LUT[TRACE_READ(kval % 16)];
}

unsigned memory_leakage_case_2(unsigned key)
{
    return memory_leakage_case_2_transform(0) + memory_leakage_case_2_transform(key);
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
    unsigned got = memory_leakage_case_2(key);
    CHECK(got == (unsigned)LUT[0] + (unsigned)LUT[key % 16]);
}
