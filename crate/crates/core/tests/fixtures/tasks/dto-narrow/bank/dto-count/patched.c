static char small_count(int n)
{
    if (n < -128 || n > 127)
        return 0;
    char c = (char) n;
    return c;
}
