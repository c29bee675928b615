/* Shared entry point for every corpus case binary.
 *
 * Convention: the secret input file is the first program argument. The
 * case file provides InitTarget (one-time setup) and RunTarget (read the
 * secret, run the function under test, verify the result). A failed
 * verification exits nonzero, so the binary doubles as the case's test
 * command.
 */

#include <stdio.h>
#include <stdlib.h>

extern void InitTarget(FILE *input);
extern void RunTarget(FILE *input);

int main(int argc, char **argv)
{
    if (argc < 2) {
        fprintf(stderr, "usage: %s <secret-input-file>\n", argv[0]);
        return 64;
    }
    FILE *input = fopen(argv[1], "rb");
    if (input == NULL) {
        perror(argv[1]);
        return 66;
    }
    InitTarget(input);
    rewind(input);
    RunTarget(input);
    fclose(input);
    return 0;
}
