#include <stdio.h>

int main(int argc, char **argv)
{
    FILE *f;
    char buf[64];
    size_t n;

    if (argc < 2)
        return 2;
    f = fopen(argv[1], "rb");
    if (f == NULL)
        return 2;
    n = fread(buf, 1, sizeof buf, f);
    fclose(f);
    printf("read %zu bytes\n", n);
    return 0;
}
