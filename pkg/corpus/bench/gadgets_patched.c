/* Patched gadget variant: case_1 rewritten with index masking, the
 * standard software mitigation that clamps the index before any use so a
 * mispredicted bounds check cannot steer the load out of bounds. Only
 * case_1 ships pre-patched; patched versions of the other cases are what
 * a patching session produces, not fixtures.
 *
 * Requires publicarray_size to be a power of two (it is 16 here).
 */

#include <stdint.h>

uint64_t publicarray_size = 16;
uint8_t publicarray[17] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 0};
uint8_t publicarray2[512 * 256];
volatile uint8_t temp = 0;

void case_1(uint64_t idx)
{
    uint64_t safe_idx = idx & (publicarray_size - 1);
    uint64_t value = publicarray[safe_idx];
    if (idx < publicarray_size)
        temp &= publicarray2[value * 512];
}
