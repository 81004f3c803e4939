import sys

sys.path.insert(0, ".")


def main():
    from textstats.words import longest_word, word_count
    assert word_count("one two three") == 3
    assert longest_word("a bbb cc") == "bbb"


if __name__ == "__main__":
    try:
        main()
    except Exception as exc:
        print(f"FAIL: {type(exc).__name__}: {exc}")
        sys.exit(1)
    print("ok")
