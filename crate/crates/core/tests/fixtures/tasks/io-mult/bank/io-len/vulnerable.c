static int total_len(int header, int body)
{
    int total = header + body;
    return total;
}
