/* Public-data branch made secret (haybale shape): the index into the
 * public array is secret-derived, so the value branched on, and the read
 * that fetched it, both depend on the secret.
 * Secret bytes used: 4 (the in-out array; byte 0 also picks the index). */

#include "zltr_shim.h"

#include "driver_support.h"

int branch_leakage_case_10(const int *public_arr, int len, int *secret_arr, int i)
{
    int x = public_arr[TRACE_READ(i)];
    for (int j = 0; j < len; j++)
        secret_arr[TRACE_WRITE(j)] += x;
    if (TRACE_BRANCH(x > 10))
        return public_arr[TRACE_READ(0)] + secret_arr[0];
    else
        return public_arr[TRACE_READ(1)] + secret_arr[1];
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    const int public_arr[4] = {5, 20, 9, 31};
    int secret_arr[4];
    for (int j = 0; j < 4; j++)
        secret_arr[j] = secret[j];
    int i = secret[0] % 4;
    int x = public_arr[i];
    int got = branch_leakage_case_10(public_arr, 4, secret_arr, i);
    int want = (x > 10) ? public_arr[0] + secret[0] + x : public_arr[1] + secret[1] + x;
    CHECK(got == want);
}
