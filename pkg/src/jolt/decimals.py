"""Exact fixed-point decimal values stored as scaled integers.

A value with precision ``p`` is stored as ``round(value * 10**p)`` so that
rendering is byte-stable (no binary-float drift in prompts) and the bin
width of a rendered number is exactly ``10**-p``.
"""

from __future__ import annotations

import re
from fractions import Fraction

_FIXED_POINT_RE = re.compile(r"^(-?)(\d+)(?:\.(\d+))?$")


class DecimalParseError(ValueError):
    """Text does not denote a fixed-point number at the required precision."""


def parse_scaled(text: str, precision: int) -> int:
    """Parse ``text`` into a scaled integer at fixed ``precision``.

    Accepts an optional leading minus, an integer part, and at most
    ``precision`` fractional digits; shorter fractions are zero-padded,
    longer ones are rejected. ``-0.0`` normalizes to 0.
    """
    if precision < 0:
        raise ValueError(f"precision must be >= 0, got {precision}")
    m = _FIXED_POINT_RE.match(text)
    if m is None:
        raise DecimalParseError(f"not a fixed-point number: {text!r}")
    sign, int_part, frac_part = m.group(1), m.group(2), m.group(3) or ""
    if len(frac_part) > precision:
        raise DecimalParseError(
            f"{text!r} has {len(frac_part)} fractional digits, column precision is {precision}"
        )
    scaled = int(int_part) * 10**precision + int(frac_part.ljust(precision, "0") or "0")
    return -scaled if sign == "-" else scaled


def render_scaled(scaled: int, precision: int) -> str:
    """Render a scaled integer with exactly ``precision`` fractional digits."""
    if precision < 0:
        raise ValueError(f"precision must be >= 0, got {precision}")
    if precision == 0:
        return str(scaled)
    sign = "-" if scaled < 0 else ""
    mag = abs(scaled)
    return f"{sign}{mag // 10**precision}.{mag % 10**precision:0{precision}d}"


def round_half_away(x: Fraction) -> int:
    """Round to the nearest integer, halves away from zero."""
    if x >= 0:
        return int((2 * x + 1) // 2)
    return -int((-2 * x + 1) // 2)
