"""Split sequences into fixed-size pages."""


def page_count(items, size):
    return (len(items) + size - 1) // size


def page(items, number, size):
    """Return page `number` (1-based) of `items`."""
    start = number * size
    return items[start:start + size]
