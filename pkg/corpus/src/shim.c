/* Trace writer behind the TRACE_* macros (see include/zltr_shim.h).
 *
 * Configuration comes from the environment, so an uninstrumented driver
 * binary doubles as the traced binary:
 *   ZLTR_OUT       directory to write the trace into; unset means plain
 *                  mode (run normally, record nothing)
 *   ZLTR_INPUT_ID  numeric id, stamped into the header and into the file
 *                  name trace_<id>.zltr (default 0)
 *
 * Wire format, all little-endian:
 *   header  "ZLTR" | u16 version = 1 | u32 input_id
 *   record  u8 kind | u64 site | u64 payload | u64 aux
 * with kind 0 = branch, 1 = read, 2 = write, 3 = alloc, 4 = free.
 *
 * A trace that cannot be opened or written is useless to the analyzer, so
 * any output failure terminates the run with a nonzero exit code instead
 * of producing a silently truncated file.
 */

#include "zltr_shim.h"

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#define EXIT_TRACE_IO 66

#define KIND_BRANCH 0
#define KIND_READ 1
#define KIND_WRITE 2
#define KIND_ALLOC 3
#define KIND_FREE 4

static FILE *trace_out;
static int trace_ready;

/* Heap pointers are normalized to the order the allocations happened in,
 * so two runs that allocate the same way produce identical traces even
 * though malloc hands out different addresses. */
#define MAX_LIVE_ALLOCS 256
static struct {
    const void *ptr;
    uint64_t id;
} live_allocs[MAX_LIVE_ALLOCS];
static uint64_t next_alloc_id = 1;

static void put_le(unsigned char *dst, uint64_t value, int bytes)
{
    for (int i = 0; i < bytes; i++)
        dst[i] = (unsigned char)(value >> (8 * i));
}

static void trace_write_all(const unsigned char *buf, size_t len)
{
    if (fwrite(buf, 1, len, trace_out) != len) {
        fprintf(stderr, "zltr: short write to trace file\n");
        exit(EXIT_TRACE_IO);
    }
}

static void trace_close(void)
{
    if (trace_out && fclose(trace_out) != 0) {
        fprintf(stderr, "zltr: failed to flush trace file\n");
        _Exit(EXIT_TRACE_IO);
    }
    trace_out = NULL;
}

static void trace_init(void)
{
    trace_ready = 1;
    const char *dir = getenv("ZLTR_OUT");
    if (dir == NULL || *dir == '\0')
        return; /* plain mode */
    uint64_t input_id = 0;
    const char *id_text = getenv("ZLTR_INPUT_ID");
    if (id_text != NULL && *id_text != '\0')
        input_id = strtoull(id_text, NULL, 10);

    char path[4096];
    int n = snprintf(path, sizeof path, "%s/trace_%llu.zltr", dir,
                     (unsigned long long)input_id);
    if (n < 0 || (size_t)n >= sizeof path) {
        fprintf(stderr, "zltr: trace directory path too long\n");
        exit(EXIT_TRACE_IO);
    }
    trace_out = fopen(path, "wb");
    if (trace_out == NULL) {
        fprintf(stderr, "zltr: cannot open trace file %s\n", path);
        exit(EXIT_TRACE_IO);
    }

    unsigned char header[10];
    memcpy(header, "ZLTR", 4);
    put_le(header + 4, 1, 2);
    put_le(header + 6, input_id, 4);
    trace_write_all(header, sizeof header);
    atexit(trace_close);
}

static void emit(unsigned char kind, uint64_t site, uint64_t payload, uint64_t aux)
{
    if (!trace_ready)
        trace_init();
    if (trace_out == NULL)
        return;
    unsigned char record[25];
    record[0] = kind;
    put_le(record + 1, site, 8);
    put_le(record + 9, payload, 8);
    put_le(record + 17, aux, 8);
    trace_write_all(record, sizeof record);
}

uint64_t zltr_read(uint64_t site, uint64_t index)
{
    emit(KIND_READ, site, index, 0);
    return index;
}

uint64_t zltr_write(uint64_t site, uint64_t index)
{
    emit(KIND_WRITE, site, index, 0);
    return index;
}

int zltr_branch(uint64_t site, int taken)
{
    emit(KIND_BRANCH, site, taken ? 1 : 0, 0);
    return taken;
}

void *zltr_alloc(uint64_t site, void *ptr, uint64_t size)
{
    uint64_t id = 0;
    if (ptr != NULL) {
        id = next_alloc_id++;
        for (int i = 0; i < MAX_LIVE_ALLOCS; i++) {
            if (live_allocs[i].ptr == NULL) {
                live_allocs[i].ptr = ptr;
                live_allocs[i].id = id;
                break;
            }
        }
    }
    emit(KIND_ALLOC, site, id, size);
    return ptr;
}

void *zltr_free(uint64_t site, void *ptr)
{
    uint64_t id = 0;
    for (int i = 0; i < MAX_LIVE_ALLOCS; i++) {
        if (ptr != NULL && live_allocs[i].ptr == ptr) {
            id = live_allocs[i].id;
            live_allocs[i].ptr = NULL;
            break;
        }
    }
    emit(KIND_FREE, site, id, 0);
    return ptr;
}
