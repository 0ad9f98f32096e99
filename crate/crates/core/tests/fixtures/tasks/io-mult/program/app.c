#include <stdio.h>
#include <stdlib.h>
#include <string.h>

static FILE *tr;

static void trace_open(void)
{
    const char *path = getenv("TRACE_OUT");
    if (path != NULL)
        tr = fopen(path, "w");
}

static void trace_stmt(int id)
{
    if (tr) {
        fprintf(tr, "STMT app.c:%d\n", id);
        fflush(tr);
    }
}

static void trace_source(int id)
{
    if (tr) {
        fprintf(tr, "SOURCE app.c:%d\n", id);
        fflush(tr);
    }
    trace_stmt(id);
}

static void trace_sink(int id, const char *cwe)
{
    trace_stmt(id);
    if (tr) {
        fprintf(tr, "SINK app.c:%d %s\n", id, cwe);
        fprintf(tr, "TOTAL 10\n");
        fflush(tr);
    }
}

static int alloc_size(int count, int width)
{
    long long wide;
    if (count < 0 || width < 0) {
        return -1;
    }
    wide = (long long) count * (long long) width;
    if (wide > 2147483647LL) {
        trace_sink(9, "CWE-190");
        fprintf(stderr, "ERROR: integer-overflow in alloc_size\n");
        exit(1);
    }
    return (int) wide;
}

int main(int argc, char **argv)
{
    char text[256];
    FILE *f;
    size_t n;
    int count = 0;
    int width = 0;

    if (argc < 2)
        return 2;
    trace_open();
    f = fopen(argv[1], "rb");
    if (f == NULL)
        return 2;
    n = fread(text, 1, sizeof text - 1, f);
    fclose(f);
    text[n] = '\0';
    if (sscanf(text, "%d %d", &count, &width) != 2)
        return 2;
    trace_source(1);
    if (alloc_size(count, width) < 0) {
        printf("rejected\n");
        return 0;
    }
    printf("ok\n");
    return 0;
}
