static void close_session(session_t *s)
{
    free(s->buf);
    log_close(s->buf);
    s->buf = NULL;
}
