"""Offset conversions into Unicode code points.

Engines report entity positions in whatever unit their runtime uses: byte
offsets over UTF-8, UTF-16 code units, or code points. The harness protocol
is defined in code points, so everything funnels through these converters.
"""

from __future__ import annotations

import bisect

OFFSET_UNITS = ("codepoint", "byte", "utf16")


class OffsetConversionError(ValueError):
    pass


def _prefix_lengths(text: str, unit: str) -> list[int]:
    """prefix[i] = offset of code point i in the target unit; sentinel at end."""
    sizes = []
    if unit == "byte":
        sizes = [len(ch.encode("utf-8")) for ch in text]
    elif unit == "utf16":
        sizes = [2 if ord(ch) > 0xFFFF else 1 for ch in text]
    else:
        raise OffsetConversionError(f"unknown offset unit {unit!r}")
    prefix = [0]
    for size in sizes:
        prefix.append(prefix[-1] + size)
    return prefix


def to_codepoint_span(
    start: int, end: int, text: str, unit: str
) -> tuple[int, int]:
    """Convert one (start, end) span from `unit` offsets to code points.

    Offsets must land on code-point boundaries; a span cutting a multibyte
    character apart is an engine bug worth surfacing, not papering over.
    """
    if unit == "codepoint":
        if not 0 <= start < end <= len(text):
            raise OffsetConversionError(f"span ({start}, {end}) out of bounds")
        return start, end
    prefix = _prefix_lengths(text, unit)
    if not 0 <= start < end <= prefix[-1]:
        raise OffsetConversionError(f"span ({start}, {end}) out of bounds")
    cp_start = bisect.bisect_left(prefix, start)
    cp_end = bisect.bisect_left(prefix, end)
    if prefix[cp_start] != start or prefix[cp_end] != end:
        raise OffsetConversionError(
            f"span ({start}, {end}) does not align with code point boundaries"
        )
    return cp_start, cp_end


def from_codepoint_span(
    start: int, end: int, text: str, unit: str
) -> tuple[int, int]:
    """Inverse of to_codepoint_span, for building engine-side fixtures."""
    if unit == "codepoint":
        return start, end
    prefix = _prefix_lengths(text, unit)
    return prefix[start], prefix[end]
