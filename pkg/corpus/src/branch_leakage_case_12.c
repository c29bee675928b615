/* Selection sort: the min-scan branch fires on secret comparisons, so
 * the branch trace encodes the rank order.
 * Secret bytes used: 6 (the array). */

#include "zltr_shim.h"

#include "driver_support.h"

void branch_leakage_case_12(int *a, int n)
{
    for (int i = 0; i < n - 1; i++) {
        int min = i;
        for (int j = i + 1; j < n; j++) {
            if (TRACE_BRANCH(a[j] < a[min]))
                min = j;
        }
        int tmp = a[i];
        a[i] = a[min];
        a[min] = tmp;
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
    branch_leakage_case_12(a, 6);
    for (int i = 1; i < 6; i++)
        CHECK(a[i - 1] <= a[i]);
    for (int i = 0; i < 6; i++)
        seen[a[i]]--;
    for (int v = 0; v < 256; v++)
        CHECK(seen[v] == 0);
}
