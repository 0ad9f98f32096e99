static int
readextension(void)
{
    int count;
    char buf[255];
    (void) getc(infile);
    while ((count = getc(infile)) && count <= 255)
        if (fread(buf, 1, count, infile) != (size_t) count) {
            fprintf(stderr, "short read from file %s (%s)\n",
                filename, strerror(errno));
            status = 0;
            break;
        }
    if (count > 0)
        process(buf, count);
    flushextension();
    return (status);
}
