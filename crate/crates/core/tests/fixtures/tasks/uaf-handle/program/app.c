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

typedef struct {
    int freed;
    char data[4];
} buffer_t;

static void buffer_release(buffer_t *h)
{
    h->freed = 1;
}

static int read_handle(buffer_t *h, int release_first)
{
    if (h == NULL) {
        return -1;
    }
    if (release_first) {
        buffer_release(h);
    }
    if (h->freed) {
        trace_sink(9, "CWE-416");
        fprintf(stderr, "ERROR: use-after-free in read_handle\n");
        exit(1);
    }
    return h->data[0];
}

int main(int argc, char **argv)
{
    char text[16];
    FILE *f;
    size_t n;
    int command = 0;
    buffer_t handle = {0, {7, 0, 0, 0}};

    if (argc < 2)
        return 2;
    trace_open();
    f = fopen(argv[1], "rb");
    if (f == NULL)
        return 2;
    n = fread(text, 1, sizeof text - 1, f);
    fclose(f);
    text[n] = '\0';
    if (sscanf(text, "%d", &command) != 1)
        return 2;
    trace_source(1);
    if (read_handle(&handle, command) < 0) {
        printf("rejected\n");
        return 0;
    }
    printf("ok\n");
    return 0;
}
