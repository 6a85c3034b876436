import numpy as np
import pytest

from posterlab.font import CELL, CHARSET, DEFAULT_FONT


def test_charset_contents():
    assert len(CHARSET) == 46
    for c in "ABCXYZ0189 !?.,-:%&+":
        assert c in CHARSET


def test_masks_are_8x8_bool():
    for c in CHARSET:
        m = DEFAULT_FONT.mask_for(c)
        assert m.shape == (CELL, CELL)
        assert m.dtype == np.bool_


def test_last_row_and_column_blank():
    # inter-glyph spacing relies on the guard row/column staying empty
    for c in CHARSET:
        m = DEFAULT_FONT.mask_for(c)
        assert not m[CELL - 1].any()
        assert not m[:, CELL - 1].any()


def test_space_is_empty_all_others_inked():
    assert not DEFAULT_FONT.mask_for(" ").any()
    for c in CHARSET:
        if c != " ":
            assert DEFAULT_FONT.mask_for(c).any()


def test_glyphs_distinct():
    seen = {}
    for c in CHARSET:
        key = DEFAULT_FONT.mask_for(c).tobytes()
        assert key not in seen, f"{c!r} duplicates {seen[key]!r}"
        seen[key] = c


def test_glyph_a_popcount():
    # frozen oracle: ink pixel count of 'A' in the shipped face
    assert int(DEFAULT_FONT.mask_for("A").sum()) == 20


def test_text_extent_arithmetic():
    assert DEFAULT_FONT.text_extent("ABC", 1) == (3 * CELL, CELL)
    assert DEFAULT_FONT.text_extent("AB", 3) == (2 * CELL * 3, CELL * 3)


def test_render_text_mask_scaling():
    m1 = DEFAULT_FONT.render_text_mask("HI", 1)
    m2 = DEFAULT_FONT.render_text_mask("HI", 2)
    assert m2.shape == (m1.shape[0] * 2, m1.shape[1] * 2)
    # nearest-neighbor upscaling preserves the ink count times s^2
    assert int(m2.sum()) == 4 * int(m1.sum())


def test_unsupported_char():
    assert not DEFAULT_FONT.supports("a")
    with pytest.raises(KeyError):
        DEFAULT_FONT.mask_for("a")
