"""Currency helpers. Amounts are floats in whole currency units."""


def round_cents(value):
    return int(value * 100) / 100
