static char small_count(int n)
{
    char c = (char) n;
    return c;
}
