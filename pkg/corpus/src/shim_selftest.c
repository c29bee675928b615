/* Exercises every record kind the shim can emit, including the heap
 * normalization path: two allocations freed in reverse order must get
 * ids 1 and 2 no matter what addresses malloc returns.
 * Secret bytes used: 1 (a read index, to keep the trace input-dependent). */

#include "zltr_shim.h"

#include "driver_support.h"

static const int table[8] = {3, 1, 4, 1, 5, 9, 2, 6};

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int idx = secret[0] % 8;

    int value = table[TRACE_READ(idx)];
    int out[8];
    out[TRACE_WRITE(0)] = value;
    CHECK(out[0] == table[idx]);

    if (TRACE_BRANCH(value > 2)) {
        CHECK(value > 2);
    } else {
        CHECK(value <= 2);
    }

    char *first = TRACE_ALLOC(malloc(32), 32);
    char *second = TRACE_ALLOC(malloc(64), 64);
    CHECK(first != NULL && second != NULL);
    TRACE_FREE(second);
    free(second);
    TRACE_FREE(first);
    free(first);
}
