"""Parsing helpers for configuration values."""


def parse_port(value):
    port = int(value)
    if port < 1 or port > 65535:
        raise Exception(f"port out of range: {port}")
    return port


def parse_bool(value):
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")
