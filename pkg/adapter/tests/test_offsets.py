import pytest

from deidadapter.offsets import (
    OffsetConversionError,
    from_codepoint_span,
    to_codepoint_span,
)

SAMPLE = "José Müller saw Ngô. 癌症 noted."


def test_codepoint_passthrough():
    assert to_codepoint_span(0, 4, SAMPLE, "codepoint") == (0, 4)


def test_byte_conversion():
    # "José" is 5 bytes (é = 2), 4 code points
    start, end = from_codepoint_span(0, 4, SAMPLE, "byte")
    assert (start, end) == (0, 5)
    assert to_codepoint_span(0, 5, SAMPLE, "byte") == (0, 4)
    # "Müller" starts at code point 5; byte offset is 6
    start, end = from_codepoint_span(5, 11, SAMPLE, "byte")
    assert start == 6
    assert to_codepoint_span(start, end, SAMPLE, "byte") == (5, 11)


def test_byte_conversion_cjk():
    cp = SAMPLE.index("癌"), SAMPLE.index("癌") + 2
    byte_span = from_codepoint_span(cp[0], cp[1], SAMPLE, "byte")
    assert byte_span[1] - byte_span[0] == 6  # two 3-byte characters
    assert to_codepoint_span(*byte_span, SAMPLE, "byte") == cp


def test_utf16_conversion():
    text = "x\U0001F600y name z"  # astral char = 2 UTF-16 units
    cp = text.index("name"), text.index("name") + 4
    utf16_span = from_codepoint_span(cp[0], cp[1], text, "utf16")
    assert utf16_span == (cp[0] + 1, cp[1] + 1)
    assert to_codepoint_span(*utf16_span, text, "utf16") == cp


def test_roundtrip_random_spans():
    text = SAMPLE * 3
    for unit in ("byte", "utf16"):
        for start in range(0, len(text) - 1, 5):
            end = min(start + 7, len(text))
            converted = from_codepoint_span(start, end, text, unit)
            assert to_codepoint_span(*converted, text, unit) == (start, end)


def test_rejects_non_boundary_cut():
    # byte offset 1 cuts into "é" of "José"? no: J=1 byte, o=1, s=1, é=2 bytes
    # bytes: J(0) o(1) s(2) é(3,4) -> offset 4 is inside é
    with pytest.raises(OffsetConversionError, match="align"):
        to_codepoint_span(0, 4, "José", "byte")


def test_rejects_out_of_bounds():
    with pytest.raises(OffsetConversionError):
        to_codepoint_span(0, 99, "short", "byte")
    with pytest.raises(OffsetConversionError):
        to_codepoint_span(3, 3, "short", "codepoint")


def test_rejects_unknown_unit():
    with pytest.raises(OffsetConversionError):
        to_codepoint_span(0, 1, "ab", "ebcdic")
