static unsigned short parse_port(long value)
{
    return (unsigned short) value;
}
