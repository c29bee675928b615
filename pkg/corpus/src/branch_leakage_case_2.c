/* Insertion sort: the inner shift loop runs once per inversion, so the
 * branch trace reveals the ordering of the (secret) elements.
 * Secret bytes used: 8 (the array). */

#include "zltr_shim.h"

#include "driver_support.h"

void branch_leakage_case_2(int *a, int n)
{
    for (int i = 1; i < n; i++) {
        int index = a[i];
        int j;
        for (j = i; TRACE_BRANCH(j > 0 && a[j - 1] > index); j--)
            a[j] = a[j - 1];
        a[j] = index;
    }
}

void InitTarget(FILE *input)
{
    (void)input;
}

void RunTarget(FILE *input)
{
    unsigned char secret[SECRET_BYTES];
    read_secret(input, secret, sizeof secret);
    int a[8];
    int seen[256] = {0};
    for (int i = 0; i < 8; i++) {
        a[i] = secret[i];
        seen[secret[i]]++;
    }
    branch_leakage_case_2(a, 8);
    for (int i = 1; i < 8; i++)
        CHECK(a[i - 1] <= a[i]);
    for (int i = 0; i < 8; i++)
        seen[a[i]]--;
    for (int v = 0; v < 256; v++)
        CHECK(seen[v] == 0);
}
