/* Helpers shared by the per-case RunTarget/InitTarget implementations. */

#ifndef DRIVER_SUPPORT_H
#define DRIVER_SUPPORT_H

#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#define SECRET_BYTES 16

/* Read up to `want` secret bytes; pad deterministically if the file is
 * short so every input length produces a defined run. */
static void read_secret(FILE *input, unsigned char *buf, size_t want)
{
    size_t got = fread(buf, 1, want, input);
    for (size_t i = got; i < want; i++)
        buf[i] = (unsigned char)(i * 7 + 3);
}

#define CHECK(cond)                                                          \
    do {                                                                     \
        if (!(cond)) {                                                       \
            fprintf(stderr, "%s:%d: check failed: %s\n", __FILE__, __LINE__, \
                    #cond);                                                  \
            exit(1);                                                         \
        }                                                                    \
    } while (0)

#endif /* DRIVER_SUPPORT_H */
