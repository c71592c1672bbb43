"""Flat key=value configuration files.

One `key=value` pair per line; `#` starts a comment; blank lines ignored.
Values are strings until a typed getter converts them.  All errors name the
offending key so CLI messages stay actionable.
"""

from __future__ import annotations

from pathlib import Path

from .errors import UsageError


def parse_kv_text(text: str, source: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise UsageError(f"{source}:{lineno}: empty key")
        if key in out:
            raise UsageError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def parse_kv_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    return parse_kv_text(path.read_text(encoding="utf-8"), source=str(path))


def _get(cfg: dict[str, str], key: str, default, required: bool):
    if key not in cfg:
        if required:
            raise UsageError(f"missing required config key {key!r}")
        return None, default
    return cfg[key], default


def get_str(cfg: dict[str, str], key: str, default: str | None = None, required: bool = False) -> str:
    raw, d = _get(cfg, key, default, required)
    return d if raw is None else raw


def get_int(cfg: dict[str, str], key: str, default: int | None = None, required: bool = False) -> int:
    raw, d = _get(cfg, key, default, required)
    if raw is None:
        return d
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: expected integer, got {raw!r}") from None


def get_float(cfg: dict[str, str], key: str, default: float | None = None, required: bool = False) -> float:
    raw, d = _get(cfg, key, default, required)
    if raw is None:
        return d
    try:
        return float(raw)
    except ValueError:
        raise UsageError(f"config key {key!r}: expected number, got {raw!r}") from None


def get_bool(cfg: dict[str, str], key: str, default: bool | None = None, required: bool = False) -> bool:
    raw, d = _get(cfg, key, default, required)
    if raw is None:
        return d
    low = raw.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise UsageError(f"config key {key!r}: expected boolean, got {raw!r}")


def reject_unknown(cfg: dict[str, str], known: set[str], prefixes: tuple[str, ...] = ()):
    """Fail on misspelled keys instead of silently ignoring them."""
    for key in cfg:
        if key in known or any(key.startswith(p) for p in prefixes):
            continue
        raise UsageError(f"unknown config key {key!r}")
