"""Deterministic text serialization.

Every real number is written as decimal text with 17 significant digits,
which is enough to reproduce the exact IEEE double on parse.  The JSON
emitter below exists only because the stdlib encoder does not expose the
float format; writing is byte-stable across runs and platforms.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .errors import InputError


def format_real(value: float) -> str:
    """Render a finite float as decimal text that round-trips bit-exactly."""
    value = float(value)
    if not math.isfinite(value):
        raise InputError(f"cannot serialize non-finite real {value!r}")
    return format(value, ".17g")


def dumps(obj) -> str:
    """Compact JSON with 17-significant-digit floats (NaN becomes null)."""
    parts: list[str] = []
    _emit(obj, parts)
    return "".join(parts)


def _emit(obj, parts: list[str]) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, (int, np.integer)) and not isinstance(obj, bool):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        obj = float(obj)
        parts.append("null" if math.isnan(obj) else format_real(obj))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if not isinstance(key, str):
                raise InputError(f"JSON object keys must be strings, got {key!r}")
            if i:
                parts.append(",")
            parts.append(json.dumps(key))
            parts.append(":")
            _emit(value, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple)):
        parts.append("[")
        for i, value in enumerate(obj):
            if i:
                parts.append(",")
            _emit(value, parts)
        parts.append("]")
    else:
        raise InputError(f"cannot serialize {type(obj).__name__}")


def loads(text: str):
    return json.loads(text)
