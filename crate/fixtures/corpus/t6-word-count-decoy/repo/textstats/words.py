"""Word statistics."""


def word_count(text):
    """Number of words in `text`."""
    return len(text.split())


def longest_word(text):
    words = text.split()
    return max(words, key=len) if words else ""
