"""``key=value`` experiment files layered under command-line flags."""

import argparse
import logging
import os
from pathlib import Path
from typing import Any, Dict, Union

from tcinn.errors import ValidationError

logger = logging.getLogger("TCINN.CLI")

TRUE_WORDS = {"1", "true", "yes", "on"}
FALSE_WORDS = {"0", "false", "no", "off"}


def load_config_file(path: Union[str, os.PathLike]) -> Dict[str, str]:
    """Raw ``key=value`` pairs; blank lines and ``#`` comments are skipped."""
    path = Path(path)
    values: Dict[str, str] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ValidationError(f"{path}:{lineno}: expected key=value, got {line.strip()!r}")
        values[key] = value.strip()
    return values


def _parse_bool(key: str, text: str) -> bool:
    lowered = text.lower()
    if lowered in TRUE_WORDS:
        return True
    if lowered in FALSE_WORDS:
        return False
    raise ValidationError(f"config key {key!r} expects a boolean, got {text!r}")


def resolve_config(parser: argparse.ArgumentParser, values: Dict[str, str]) -> Dict[str, Any]:
    """Convert file values with the parser's own option types; returns ``dest -> value``.

    Keys are long flag names with ``_`` in place of ``-``. Unknown keys are
    rejected.
    """
    options = parser._option_string_actions
    resolved: Dict[str, Any] = {}
    for key, text in values.items():
        action = options.get("--" + key.replace("_", "-"))
        if action is None or action.dest in ("help", "config"):
            raise ValidationError(f"unknown config key {key!r} for '{parser.prog}'")
        if action.nargs == 0:
            resolved[action.dest] = _parse_bool(key, text)
            continue
        try:
            value = action.type(text) if action.type is not None else text
        except (argparse.ArgumentTypeError, TypeError, ValueError) as exc:
            raise ValidationError(f"config key {key!r}: {exc}") from exc
        if action.choices is not None and value not in action.choices:
            raise ValidationError(f"config key {key!r}: {value!r} is not one of {list(action.choices)}")
        resolved[action.dest] = value
    logger.debug("Config file sets %s", sorted(resolved))
    return resolved
