/* Source-level tracing shim.
 *
 * Wrap the secret-relevant sites of a function in these macros and link
 * against src/shim.c; every wrapped site then emits one record into the
 * trace file named by the ZLTR_OUT environment variable. The site id is
 * the source line of the macro call, which is stable across runs of the
 * same build, so an analyzer can aggregate observations per call site the
 * same way it would per instruction address.
 *
 * The macros pass their value through, so they can wrap expressions in
 * place: a[TRACE_READ(i)], if (TRACE_BRANCH(x > 0)), and so on.
 *
 * Compile with -DZLTR_DISABLE to turn every macro into the bare
 * expression (no tracing, no shim dependency).
 */

#ifndef ZLTR_SHIM_H
#define ZLTR_SHIM_H

#include <stddef.h>
#include <stdint.h>

#ifdef ZLTR_DISABLE

#define TRACE_READ(idx) (idx)
#define TRACE_WRITE(idx) (idx)
#define TRACE_BRANCH(cond) (cond)
#define TRACE_ALLOC(ptr, size) (ptr)
#define TRACE_FREE(ptr) (ptr)

#else

uint64_t zltr_read(uint64_t site, uint64_t index);
uint64_t zltr_write(uint64_t site, uint64_t index);
int zltr_branch(uint64_t site, int taken);
void *zltr_alloc(uint64_t site, void *ptr, uint64_t size);
void *zltr_free(uint64_t site, void *ptr);

/* idx is the normalized access index (array slot, not raw address). */
#define TRACE_READ(idx) zltr_read(__LINE__, (uint64_t)(idx))
#define TRACE_WRITE(idx) zltr_write(__LINE__, (uint64_t)(idx))
#define TRACE_BRANCH(cond) zltr_branch(__LINE__, (cond) ? 1 : 0)
#define TRACE_ALLOC(ptr, size) zltr_alloc(__LINE__, (ptr), (uint64_t)(size))
#define TRACE_FREE(ptr) zltr_free(__LINE__, (ptr))

#endif /* ZLTR_DISABLE */

#endif /* ZLTR_SHIM_H */
