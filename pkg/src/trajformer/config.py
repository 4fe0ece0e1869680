"""Flat `key = value` config files with `#` comments, plus typed lookup."""


class ConfigError(ValueError):
    """Raised on invalid or missing configuration values."""


def parse_kv_text(text):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def read_kv(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv_text(fh.read())


def write_kv(path, values):
    with open(path, "w", encoding="utf-8") as fh:
        for key, value in values.items():
            fh.write(f"{key} = {value}\n")


def coerce(values, key, kind, default=None):
    """Fetch values[key] as `kind`; fall back to default when absent."""
    if key not in values:
        if default is None:
            raise ConfigError(f"missing config key {key!r}")
        return default
    raw = values[key]
    try:
        if kind is bool:
            if raw.lower() in ("1", "true", "on", "yes"):
                return True
            if raw.lower() in ("0", "false", "off", "no"):
                return False
            raise ValueError(raw)
        return kind(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind.__name__}") from None
