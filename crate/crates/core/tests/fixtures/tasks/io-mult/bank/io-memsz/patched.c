static size_t frame_bytes(size_t rows, size_t cols)
{
    if (rows != 0 && cols > SIZE_MAX / rows / 4)
        return 0;
    return rows * cols * 4;
}
