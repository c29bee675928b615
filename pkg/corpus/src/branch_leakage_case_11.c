/* Bubble sort: every compare-and-swap decision is a branch on secret
 * data, leaking the full ordering. Secret bytes used: 6 (the array). */

#include "zltr_shim.h"

#include "driver_support.h"

void branch_leakage_case_11(int *a, int n)
{
    for (int i = 0; i < n - 1; i++) {
        for (int j = 0; j < n - 1 - i; j++) {
            if (TRACE_BRANCH(a[j] > a[j + 1])) {
                int tmp = a[j];
                a[j] = a[j + 1];
                a[j + 1] = tmp;
            }
        }
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
    int a[6];
    int seen[256] = {0};
    for (int i = 0; i < 6; i++) {
        a[i] = secret[i];
        seen[secret[i]]++;
    }
    branch_leakage_case_11(a, 6);
    for (int i = 1; i < 6; i++)
        CHECK(a[i - 1] <= a[i]);
    for (int i = 0; i < 6; i++)
        seen[a[i]]--;
    for (int v = 0; v < 256; v++)
        CHECK(seen[v] == 0);
}
