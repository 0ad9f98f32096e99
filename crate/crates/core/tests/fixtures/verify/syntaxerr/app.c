#include <stdio.h>

int main(int argc, char **argv)
{
    printf("this translation unit does not compile\n")
    return 0;
}
