/* Bounds-check-bypass gadget set, after Kocher's published victim
 * functions as adapted in the Pitchfork benchmark suite (publicarray
 * naming). The originals are not redistributed here; each body is a
 * reconstruction of the published shape and is labeled as such where the
 * source material leaves room (the three case_11 memcmp variants).
 *
 * Compile twice:
 *   baseline          plain bodies
 *   -DWITH_LFENCE     a serializing lfence inside each guarded block,
 *                     before the dependent access
 *
 * case_8 guards its index with a ternary expression instead of an if
 * block, so there is no place for an inline fence; it only exists in the
 * baseline build.
 */

#include <stddef.h>
#include <stdint.h>

uint64_t publicarray_size = 16;
/* one spare slot so case_4 and case_8's architectural (idx + 1) stays in
 * bounds for every idx the guard accepts */
uint8_t publicarray[17] = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 0};
uint8_t publicarray2[512 * 256];
volatile uint8_t temp = 0;
static uint8_t scratch = 0;

void case_1(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[idx] * 512];
    }
}

/* leak moved into a helper the compiler may inline */
static void leak_byte_local(uint8_t k)
{
    temp &= publicarray2[(uint64_t)k * 512];
}

void case_2(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        leak_byte_local(publicarray[idx]);
    }
}

/* leak moved into a helper the compiler must not inline */
__attribute__((noinline)) static void leak_byte_noinline(uint8_t k)
{
    temp &= publicarray2[(uint64_t)k * 512];
}

void case_3(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        leak_byte_noinline(publicarray[idx]);
    }
}

/* off-by-one style index arithmetic after the check */
void case_4(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[idx + 1] * 512];
    }
}

/* the checked value seeds a descending loop */
void case_5(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        for (int64_t i = (int64_t)idx - 1; i >= 0; i--)
            temp &= publicarray2[publicarray[i] * 512];
    }
}

/* bounds check expressed as a mask compare */
void case_6(uint64_t idx)
{
    if ((idx & (publicarray_size - 1)) == idx) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[idx] * 512];
    }
}

/* compare against the last value that passed the real check */
void case_7(uint64_t idx)
{
    static uint64_t last_idx = 0;
    if (idx == last_idx) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[idx] * 512];
    }
    if (idx < publicarray_size)
        last_idx = idx;
}

#ifndef WITH_LFENCE
/* ternary guard used directly as the array index: no if block, so no
 * inline-fence variant exists for this case */
void case_8(uint64_t idx)
{
    temp &= publicarray2[publicarray[idx < publicarray_size ? (idx + 1) : 0] * 512];
}
#endif

/* the safety decision arrives through a pointer */
void case_9(uint64_t idx, const int *idx_is_safe)
{
    if (*idx_is_safe) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[idx] * 512];
    }
}

/* leak a comparison result rather than the loaded byte */
void case_10(uint64_t idx, uint8_t k)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        if (publicarray[idx] == k)
            temp &= publicarray2[0];
    }
}

/* The three case_11 bodies route the leak through a memcmp of the
 * secret-indexed location. The exact library internals differ per
 * implementation; these loops are reconstructions of the well-known
 * shapes (builtin expansion, kernel-style loop, subtraction-only). */

static int memcmp_gcc_style(const unsigned char *a, const unsigned char *b, size_t n)
{
    for (size_t i = 0; i < n; i++) {
        if (a[i] != b[i])
            return a[i] < b[i] ? -1 : 1;
    }
    return 0;
}

void case_11gcc(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp = (uint8_t)memcmp_gcc_style(&scratch, publicarray2 + publicarray[idx] * 512, 1);
    }
}

static int memcmp_kernel_style(const void *cs, const void *ct, size_t count)
{
    const unsigned char *su1 = cs;
    const unsigned char *su2 = ct;
    int res = 0;
    for (; count > 0; ++su1, ++su2, count--) {
        if ((res = *su1 - *su2) != 0)
            break;
    }
    return res;
}

void case_11ker(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp = (uint8_t)memcmp_kernel_style(&scratch, publicarray2 + publicarray[idx] * 512, 1);
    }
}

static int memcmp_sub_style(const unsigned char *a, const unsigned char *b, size_t n)
{
    int res = 0;
    for (size_t i = 0; i < n && res == 0; i++)
        res = a[i] - b[i];
    return res;
}

void case_11sub(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp = (uint8_t)memcmp_sub_style(&scratch, publicarray2 + publicarray[idx] * 512, 1);
    }
}

/* the guarded index is the sum of two parameters */
void case_12(uint64_t x, uint64_t y)
{
    if (x + y < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[x + y] * 512];
    }
}

/* the bounds check lives in an inlineable helper */
static inline int idx_is_safe(uint64_t idx)
{
    if (idx < publicarray_size)
        return 1;
    return 0;
}

void case_13(uint64_t idx)
{
    if (idx_is_safe(idx)) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[idx] * 512];
    }
}

/* low bits of the checked index inverted before use */
void case_14(uint64_t idx)
{
    if (idx < publicarray_size) {
#ifdef WITH_LFENCE
        asm volatile("lfence");
#endif
        temp &= publicarray2[publicarray[idx ^ (publicarray_size - 1)] * 512];
    }
}
