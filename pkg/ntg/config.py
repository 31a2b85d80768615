import dataclasses
import logging
import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

from ntg.errors import ConfigError, UsageError

load_dotenv()

logger = logging.getLogger(__name__)

# Worker threads for correlation blocks (unset = all cores, --threads overrides)
NTG_THREADS = os.getenv("NTG_THREADS", "")

# Sentry DSN (optional, leave empty to disable)
NTG_SENTRY_DSN = os.getenv("NTG_SENTRY_DSN", "")

LOG_LEVEL = os.getenv("NTG_LOG_LEVEL", "INFO").upper()
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# Reference patches per correlation block. Fixed block size keeps the
# matching result independent of the thread count.
MATCH_CHUNK = int(os.getenv("NTG_MATCH_CHUNK", "256"))

# Set by the CLI after flag/env resolution
_threads: int = 1


def resolve_threads(flag: Optional[int] = None) -> int:
    """Flag beats NTG_THREADS, which beats the core count."""
    if flag is not None:
        value = flag
    elif NTG_THREADS.strip():
        try:
            value = int(NTG_THREADS)
        except ValueError:
            raise UsageError(f"NTG_THREADS must be an integer, got {NTG_THREADS!r}")
    else:
        value = os.cpu_count() or 1
    if value < 1:
        raise UsageError(f"thread count must be >= 1, got {value}")
    return value


def set_threads(n: int) -> None:
    global _threads
    _threads = max(1, int(n))


def get_threads() -> int:
    return _threads


def _coerce(field: dataclasses.Field, raw: str):
    kind = field.type if isinstance(field.type, str) else getattr(field.type, "__name__", str(field.type))
    try:
        if kind == "int":
            return int(raw, 0)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            lowered = raw.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{field.name}: cannot parse {raw!r} as {kind}")


def parse_config_text(text: str, base):
    """Overlay `key = value` lines onto the dataclass instance `base`."""
    fields = {f.name: f for f in dataclasses.fields(base)}
    seen = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in fields:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen[key] = _coerce(fields[key], value)
    return dataclasses.replace(base, **seen)


def load_config_file(path, base):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except UnicodeDecodeError:
        raise ConfigError(f"config file is not UTF-8: {path}")
    config = parse_config_text(text, base)
    logger.info("Loaded config overrides from %s", path)
    return config
