static long bytes_per_tick(long bytes, long ticks)
{
    long rate = bytes / ticks;
    return rate;
}
