/* Smoke test: drive the library purely through the installed header. */

#include <stdio.h>
#include <string.h>

#include "taintmend.h"

static int failures = 0;

#define CHECK(cond)                                                  \
    do {                                                             \
        if (!(cond)) {                                               \
            fprintf(stderr, "FAIL %s:%d: %s\n", __FILE__, __LINE__,  \
                    #cond);                                          \
            failures++;                                              \
        }                                                            \
    } while (0)

int main(void)
{
    TmSequence *sequence = NULL;
    TmTrace *original = NULL;
    TmTrace *patched = NULL;
    char *text = NULL;
    TmHunkClass verdict;
    double tsc = 0.0;
    int flag = -1;

    CHECK(tm_sequence_parse("{1,2,3,4,5,[ADD],6,[7],[ADD],8}", &sequence) == TM_OK);
    CHECK(tm_sequence_canonical(sequence, &text) == TM_OK);
    CHECK(strcmp(text, "{1,2,3,4,5,[ADD],6,[7],[ADD],8}") == 0);
    tm_string_free(text);
    tm_sequence_free(sequence);

    CHECK(tm_sequence_parse("{2,1}", &sequence) == TM_INVARIANT_VIOLATION);
    CHECK(strlen(tm_last_error_message()) > 0);

    CHECK(tm_diff_sequence("a\nb\nc\n", "a\nx\nb\n", &text) == TM_OK);
    CHECK(strcmp(text, "{1,[ADD],2,[3]}") == 0);
    tm_string_free(text);

    CHECK(tm_diff_classify("a\nb\nc\n", "a\nb\nc\n", &verdict) == TM_OK);
    CHECK(verdict == TM_UNCHANGED);

    CHECK(tm_trace_parse(
              "SOURCE a.c:3\nSTMT a.c:3\nSTMT a.c:5\nSINK a.c:5 CWE-119\nTOTAL 10\n",
              &original) == TM_OK);
    CHECK(tm_trace_coverage(original, &tsc) == TM_OK);
    CHECK(tsc > 0.19 && tsc < 0.21);

    CHECK(tm_trace_parse(
              "SOURCE a.c:3\nSTMT a.c:3\nSTMT a.c:9\nSINK a.c:9 CWE-119\nTOTAL 10\n",
              &patched) == TM_OK);
    CHECK(tm_trace_new_vuln(original, patched, &flag) == TM_OK);
    CHECK(flag == 1);

    tm_trace_free(original);
    tm_trace_free(patched);

    if (failures == 0) {
        printf("consumer ok\n");
        return 0;
    }
    return 1;
}
