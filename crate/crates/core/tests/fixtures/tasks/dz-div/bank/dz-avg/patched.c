static int average(int sum, int samples)
{
    if (samples == 0)
        return 0;
    return sum / samples;
}
