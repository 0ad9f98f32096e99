static int cache_get(cache_t *c, int key)
{
    entry_t *e = cache_evict(c, key);
    if (e == NULL || e->evicted)
        return -1;
    return e->value;
}
