import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posterlab.captioner import (
    NO_TEXT,
    CaptionParseError,
    caption_glyph,
    caption_layout,
    color_word,
    parse_caption,
    position_word,
    quantize_span,
    size_word,
)
from posterlab.corpus import PALETTE, generate_record


def test_size_word_boundaries():
    assert size_word(1) == "small"
    assert size_word(2) == "medium"
    assert size_word(3) == "large"
    assert size_word(4) == "large"


def test_color_word_exact_palette():
    for name, rgb in PALETTE.items():
        assert color_word(rgb) == name


def test_color_word_nearest():
    assert color_word((250, 5, 5)) == "red"
    assert color_word((8, 8, 8)) == "black"


def test_position_word_grid():
    canvas = (90, 90)
    assert position_word((0, 0, 10, 10), canvas) == "top-left"
    assert position_word((40, 40, 10, 10), canvas) == "center"
    assert position_word((80, 80, 10, 10), canvas) == "bottom-right"
    assert position_word((40, 0, 10, 10), canvas) == "top"
    assert position_word((0, 40, 10, 10), canvas) == "left"


def test_round_trip_on_corpus(small_corpus):
    for rec, _ in small_corpus:
        parsed = parse_caption(caption_glyph(rec))
        truth = [quantize_span(s, (rec.width, rec.height)) for s in rec.spans]
        assert parsed == truth, rec.id


@settings(max_examples=100, deadline=None)
@given(st.integers(min_value=0, max_value=10_000_000), st.integers(0, 7))
def test_round_trip_property(seed, index):
    rec = generate_record(seed, index)
    if rec is None:
        return
    parsed = parse_caption(caption_glyph(rec))
    assert parsed == [quantize_span(s, (rec.width, rec.height)) for s in rec.spans]


def test_layout_caption_mentions_everything(one_record):
    rec, _ = one_record
    cap = caption_layout(rec)
    roles = {s.role: s for s in rec.spans}
    if "title" in roles:
        assert f"'{roles['title'].content}'" in cap
    assert "poster" in cap


def test_empty_record_caption():
    # a record with no spans captions as the sentinel
    rec, _ = None, None
    from posterlab.corpus import PosterRecord

    base = generate_record(3, 1)
    d = base.to_dict()
    d["spans"] = []
    bare = PosterRecord.from_dict(d)
    assert caption_glyph(bare) == NO_TEXT
    assert parse_caption(NO_TEXT) == []


def test_parse_error_names_clause():
    good = caption_glyph(generate_record(3, 1))
    broken = good.replace(" at ", " nowhere ", 1)
    with pytest.raises(CaptionParseError) as exc:
        parse_caption(broken)
    assert "clause" in str(exc.value)
