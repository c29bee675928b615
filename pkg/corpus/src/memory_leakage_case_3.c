/* Secret-stride table walk: the read index advances by the secret each
 * iteration, so the access sequence is a function of the secret. The
 * second lookup reduces the same index to the table's lower half.
 * Secret bytes used: 1. */

#include "zltr_shim.h"

#include "driver_support.h"

int memory_leakage_case_3(int secret)
{
    int table[128];
    int index = 0;
    int t = 0;
    for (int i = 0; i < 128; i++)
        table[TRACE_WRITE(i)] = i;
    for (int i = 0; i < 200; i++) {
        index = (index + secret) % 128;
        t = table[TRACE_READ(index)];
        t = table[TRACE_READ(index % 64)];
    }
    return t;
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int s = secret[0];
    int index = 0;
    for (int i = 0; i < 200; i++)
        index = (index + s) % 128;
    CHECK(memory_leakage_case_3(s) == index % 64);
}
