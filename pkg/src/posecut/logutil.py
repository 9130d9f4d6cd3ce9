"""Structured key=value logging on standard error.

One line per event so timing and objective claims stay machine-checkable.
"""

from __future__ import annotations

import sys


def log_kv(**fields) -> None:
    parts = []
    for key, value in fields.items():
        if isinstance(value, float):
            parts.append(f"{key}={value:.6g}")
        else:
            parts.append(f"{key}={value}")
    print(" ".join(parts), file=sys.stderr)
