"""Step identifiers such as ``9.A.2``.

A step id is a dot-separated hierarchy whose first component is a number.
Later components may be numeric or alphanumeric. Ordering compares
component by component: numbers numerically, and numbers sort before words.
"""

from __future__ import annotations

import re

_STEP_RE = re.compile(r"^\d+(\.[A-Za-z0-9]+)*$")


def is_step_id(text: str) -> bool:
    return bool(_STEP_RE.match(text))


def parse_step_id(text: str) -> tuple[str, ...]:
    if not isinstance(text, str) or not is_step_id(text):
        raise ValueError(f"malformed step id: {text!r}")
    return tuple(text.split("."))


def step_key(text: str) -> tuple:
    """Sort key implementing numeric-then-lexicographic comparison."""
    return tuple((0, int(p), "") if p.isdigit() else (1, 0, p) for p in parse_step_id(text))


def major_step(text: str) -> int:
    return int(parse_step_id(text)[0])
