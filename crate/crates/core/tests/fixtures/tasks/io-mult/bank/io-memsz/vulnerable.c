static size_t frame_bytes(size_t rows, size_t cols)
{
    return rows * cols * 4;
}
