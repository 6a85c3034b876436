"""Deterministic two-caption grammar over poster ground truth.

caption_glyph describes each text span (size word, nearest color name,
role, quoted content, 3x3-grid position word); caption_layout describes
the subject, quotes title/subtitle, and names the composition class.
parse_caption inverts the glyph grammar exactly at its quantization
resolution. Any backend returning a CaptionBundle can replace this one.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import PALETTE, PosterRecord

NO_TEXT = "no text"
SIZE_WORDS = ("small", "medium", "large")  # scale <=1, ==2, >=3
ROLE_WORDS = {"title": "title", "subtitle": "subtitle", "body": "body"}

# 3x3 grid labels; center axes collapse to single words
POSITION_WORDS = (
    ("top-left", "top", "top-right"),
    ("left", "center", "right"),
    ("bottom-left", "bottom", "bottom-right"),
)

COMPOSITION_WORDS = {
    "symmetric": "symmetrical",
    "left-aligned": "left-aligned",
    "top-banner": "top-banner",
}

SUBJECT_WORDS = {"circle": "circle", "rect": "rectangle", "triangle": "triangle"}


@dataclass
class CaptionBundle:
    glyph_caption: str
    layout_caption: str


class CaptionParseError(ValueError):
    def __init__(self, message: str, clause: int, token: str):
        super().__init__(f"clause {clause}: {message} (at {token!r})")
        self.clause = clause
        self.token = token


def size_word(scale: int) -> str:
    if scale <= 1:
        return "small"
    if scale == 2:
        return "medium"
    return "large"


def color_word(rgb) -> str:
    """Nearest of the 11 named colors by squared RGB distance; ties break
    in table order."""
    best_name, best_d = None, None
    for name, ref in PALETTE.items():
        d = sum((int(a) - int(b)) ** 2 for a, b in zip(rgb, ref))
        if best_d is None or d < best_d:
            best_name, best_d = name, d
    return best_name


def position_word(bbox, canvas: tuple[int, int]) -> str:
    x, y, w, h = bbox
    cw, ch = canvas
    col = min(2, int(3 * (x + w / 2.0) / cw))
    row = min(2, int(3 * (y + h / 2.0) / ch))
    return POSITION_WORDS[row][col]


def quantize_span(span, canvas: tuple[int, int]) -> tuple[str, str, str, str, str]:
    return (
        size_word(span.scale),
        color_word(span.fill_color),
        ROLE_WORDS[span.role],
        span.content,
        position_word(span.bbox, canvas),
    )


def caption_glyph(record: PosterRecord) -> str:
    """One clause per span in reading order:
    `<size> <color> <role> text '<content>' at <position>`, joined by '; '."""
    if not record.spans:
        return NO_TEXT
    canvas = (record.width, record.height)
    spans = sorted(record.spans, key=lambda s: (s.bbox[1], s.bbox[0]))
    clauses = []
    for span in spans:
        size, color, role, content, pos = quantize_span(span, canvas)
        clauses.append(f"{size} {color} {role} text '{content}' at {pos}")
    return "; ".join(clauses)


def caption_layout(record: PosterRecord) -> str:
    shape = SUBJECT_WORDS[record.subject["kind"]]
    parts = [f"A poster featuring a {shape} as the main subject."]
    spans = sorted(record.spans, key=lambda s: (s.bbox[1], s.bbox[0]))
    title = next((s for s in spans if s.role == "title"), None)
    subtitle = next((s for s in spans if s.role == "subtitle"), None)
    if title is not None:
        parts.append(f"The main title reads '{title.content}'.")
    if subtitle is not None:
        parts.append(f"The subtitle says '{subtitle.content}'.")
    parts.append(f"The composition is {COMPOSITION_WORDS[record.layout_class]}.")
    return " ".join(parts)


def caption_bundle(record: PosterRecord) -> CaptionBundle:
    return CaptionBundle(
        glyph_caption=caption_glyph(record), layout_caption=caption_layout(record)
    )


_ALL_POSITIONS = {w for row in POSITION_WORDS for w in row}
_ALL_ROLES = set(ROLE_WORDS.values())


def parse_caption(glyph_caption: str) -> list[tuple[str, str, str, str, str]]:
    """Exact inverse of caption_glyph at grammar resolution."""
    if glyph_caption == NO_TEXT:
        return []
    out = []
    for i, clause in enumerate(glyph_caption.split("; ")):
        head, sep, tail = clause.partition(" text '")
        if not sep:
            raise CaptionParseError("missing \" text '\" marker", i, clause)
        head_words = head.split(" ")
        if len(head_words) != 3:
            raise CaptionParseError("expected '<size> <color> <role>'", i, head)
        size, color, role = head_words
        if size not in SIZE_WORDS:
            raise CaptionParseError("unknown size word", i, size)
        if color not in PALETTE:
            raise CaptionParseError("unknown color word", i, color)
        if role not in _ALL_ROLES:
            raise CaptionParseError("unknown role word", i, role)
        content, sep, pos_part = tail.rpartition("' at ")
        if not sep:
            raise CaptionParseError("missing \"' at \" marker", i, tail)
        if not content:
            raise CaptionParseError("empty content", i, tail)
        if pos_part not in _ALL_POSITIONS:
            raise CaptionParseError("unknown position word", i, pos_part)
        out.append((size, color, role, content, pos_part))
    return out
