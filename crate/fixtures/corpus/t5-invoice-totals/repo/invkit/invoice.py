"""Invoice arithmetic."""

from invkit.money import round_cents


def line_total(price, quantity, discount=0.0):
    """Total for one line; `discount` is a fraction of the line amount."""
    return round_cents(price * quantity)


def invoice_total(lines, tax_rate):
    subtotal = sum(line_total(*line) for line in lines)
    return round_cents(subtotal * (1 + tax_rate))
