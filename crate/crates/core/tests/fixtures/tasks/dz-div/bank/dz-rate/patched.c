static long bytes_per_tick(long bytes, long ticks)
{
    if (ticks == 0)
        return -1;
    long rate = bytes / ticks;
    return rate;
}
