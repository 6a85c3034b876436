"""Fixed 8x8 bitmap glyph font used for rendering and template-match OCR.

Every glyph is a binary mask in an 8x8 cell. The charset covers uppercase
letters, digits, space, and basic punctuation. Masks are the ground truth
for both the renderer and the OCR backend, so text detection on clean
renders is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CELL = 8

# 8 rows of 8 chars, '#' = ink. Row 7 and column 7 are left blank as
# inter-glyph spacing; individual glyphs may use fewer columns.
_GLYPH_ART: dict[str, tuple[str, ...]] = {
    "A": (
        ".####...",
        "#....#..",
        "#....#..",
        "######..",
        "#....#..",
        "#....#..",
        "#....#..",
        "........",
    ),
    "B": (
        "#####...",
        "#....#..",
        "#....#..",
        "#####...",
        "#....#..",
        "#....#..",
        "#####...",
        "........",
    ),
    "C": (
        ".####...",
        "#....#..",
        "#.......",
        "#.......",
        "#.......",
        "#....#..",
        ".####...",
        "........",
    ),
    "D": (
        "####....",
        "#...#...",
        "#....#..",
        "#....#..",
        "#....#..",
        "#...#...",
        "####....",
        "........",
    ),
    "E": (
        "######..",
        "#.......",
        "#.......",
        "####....",
        "#.......",
        "#.......",
        "######..",
        "........",
    ),
    "F": (
        "######..",
        "#.......",
        "#.......",
        "####....",
        "#.......",
        "#.......",
        "#.......",
        "........",
    ),
    "G": (
        ".####...",
        "#....#..",
        "#.......",
        "#..###..",
        "#....#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "H": (
        "#....#..",
        "#....#..",
        "#....#..",
        "######..",
        "#....#..",
        "#....#..",
        "#....#..",
        "........",
    ),
    "I": (
        ".###....",
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        ".###....",
        "........",
    ),
    "J": (
        "...###..",
        "....#...",
        "....#...",
        "....#...",
        "#...#...",
        "#...#...",
        ".###....",
        "........",
    ),
    "K": (
        "#....#..",
        "#...#...",
        "#..#....",
        "###.....",
        "#..#....",
        "#...#...",
        "#....#..",
        "........",
    ),
    "L": (
        "#.......",
        "#.......",
        "#.......",
        "#.......",
        "#.......",
        "#.......",
        "######..",
        "........",
    ),
    "M": (
        "#....#..",
        "##..##..",
        "#.##.#..",
        "#.##.#..",
        "#....#..",
        "#....#..",
        "#....#..",
        "........",
    ),
    "N": (
        "#....#..",
        "##...#..",
        "#.#..#..",
        "#..#.#..",
        "#...##..",
        "#....#..",
        "#....#..",
        "........",
    ),
    "O": (
        ".####...",
        "#....#..",
        "#....#..",
        "#....#..",
        "#....#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "P": (
        "#####...",
        "#....#..",
        "#....#..",
        "#####...",
        "#.......",
        "#.......",
        "#.......",
        "........",
    ),
    "Q": (
        ".####...",
        "#....#..",
        "#....#..",
        "#....#..",
        "#..#.#..",
        "#...#...",
        ".###.#..",
        "........",
    ),
    "R": (
        "#####...",
        "#....#..",
        "#....#..",
        "#####...",
        "#..#....",
        "#...#...",
        "#....#..",
        "........",
    ),
    "S": (
        ".#####..",
        "#.......",
        "#.......",
        ".####...",
        ".....#..",
        ".....#..",
        "#####...",
        "........",
    ),
    "T": (
        "#####...",
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        "........",
    ),
    "U": (
        "#....#..",
        "#....#..",
        "#....#..",
        "#....#..",
        "#....#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "V": (
        "#....#..",
        "#....#..",
        "#....#..",
        "#....#..",
        ".#..#...",
        ".#..#...",
        "..##....",
        "........",
    ),
    "W": (
        "#....#..",
        "#....#..",
        "#....#..",
        "#.##.#..",
        "#.##.#..",
        "##..##..",
        "#....#..",
        "........",
    ),
    "X": (
        "#....#..",
        "#....#..",
        ".#..#...",
        "..##....",
        ".#..#...",
        "#....#..",
        "#....#..",
        "........",
    ),
    "Y": (
        "#....#..",
        "#....#..",
        ".#..#...",
        "..##....",
        "..#.....",
        "..#.....",
        "..#.....",
        "........",
    ),
    "Z": (
        "######..",
        ".....#..",
        "....#...",
        "...#....",
        "..#.....",
        ".#......",
        "######..",
        "........",
    ),
    "0": (
        ".####...",
        "#...##..",
        "#..#.#..",
        "#.#..#..",
        "##...#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "1": (
        "..#.....",
        ".##.....",
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        ".####...",
        "........",
    ),
    "2": (
        ".####...",
        "#....#..",
        ".....#..",
        "...##...",
        "..#.....",
        ".#......",
        "######..",
        "........",
    ),
    "3": (
        ".####...",
        "#....#..",
        ".....#..",
        "..###...",
        ".....#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "4": (
        "...##...",
        "..#.#...",
        ".#..#...",
        "#...#...",
        "######..",
        "....#...",
        "....#...",
        "........",
    ),
    "5": (
        "######..",
        "#.......",
        "#####...",
        ".....#..",
        ".....#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "6": (
        ".####...",
        "#.......",
        "#.......",
        "#####...",
        "#....#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "7": (
        "######..",
        ".....#..",
        "....#...",
        "...#....",
        "..#.....",
        "..#.....",
        "..#.....",
        "........",
    ),
    "8": (
        ".####...",
        "#....#..",
        "#....#..",
        ".####...",
        "#....#..",
        "#....#..",
        ".####...",
        "........",
    ),
    "9": (
        ".####...",
        "#....#..",
        "#....#..",
        ".#####..",
        ".....#..",
        ".....#..",
        ".####...",
        "........",
    ),
    " ": (
        "........",
        "........",
        "........",
        "........",
        "........",
        "........",
        "........",
        "........",
    ),
    "!": (
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        "..#.....",
        "........",
        "..#.....",
        "........",
    ),
    "?": (
        ".####...",
        "#....#..",
        "....#...",
        "...#....",
        "..#.....",
        "........",
        "..#.....",
        "........",
    ),
    ".": (
        "........",
        "........",
        "........",
        "........",
        "........",
        ".##.....",
        ".##.....",
        "........",
    ),
    ",": (
        "........",
        "........",
        "........",
        "........",
        ".##.....",
        "..#.....",
        ".#......",
        "........",
    ),
    "-": (
        "........",
        "........",
        "........",
        ".####...",
        "........",
        "........",
        "........",
        "........",
    ),
    ":": (
        "........",
        ".##.....",
        ".##.....",
        "........",
        ".##.....",
        ".##.....",
        "........",
        "........",
    ),
    "%": (
        "##...#..",
        "##..#...",
        "...#....",
        "..##....",
        ".#......",
        "#...##..",
        "#...##..",
        "........",
    ),
    "&": (
        ".##.....",
        "#..#....",
        "#..#....",
        ".##.....",
        "#..#.#..",
        "#...#...",
        ".###.#..",
        "........",
    ),
    "+": (
        "........",
        "..#.....",
        "..#.....",
        "#####...",
        "..#.....",
        "..#.....",
        "........",
        "........",
    ),
}

CHARSET = "".join(sorted(_GLYPH_ART))


def _art_to_mask(rows: tuple[str, ...]) -> np.ndarray:
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


@dataclass(frozen=True)
class GlyphFont:
    """Binary bitmap font over a fixed cell. Non-space masks are nonempty."""

    cell_height: int = CELL
    cell_width: int = CELL
    glyphs: dict[str, np.ndarray] = field(
        default_factory=lambda: {c: _art_to_mask(a) for c, a in _GLYPH_ART.items()}
    )

    def __post_init__(self):
        for ch, mask in self.glyphs.items():
            if mask.shape != (self.cell_height, self.cell_width):
                raise ValueError(f"glyph {ch!r} has shape {mask.shape}")
            if ch != " " and not mask.any():
                raise ValueError(f"glyph {ch!r} is empty")

    @property
    def charset(self) -> str:
        return "".join(sorted(self.glyphs))

    def supports(self, text: str) -> bool:
        return all(c in self.glyphs for c in text)

    def mask_for(self, ch: str) -> np.ndarray:
        return self.glyphs[ch]

    def text_extent(self, text: str, scale: int) -> tuple[int, int]:
        """(width, height) in pixels of a rendered string at integer scale."""
        return (len(text) * self.cell_width * scale, self.cell_height * scale)

    def render_text_mask(self, text: str, scale: int) -> np.ndarray:
        """Binary mask of a whole string, glyph cells side by side."""
        if not self.supports(text):
            bad = next(c for c in text if c not in self.glyphs)
            raise ValueError(f"unsupported character {bad!r}")
        w, h = self.text_extent(text, scale)
        out = np.zeros((h, w), dtype=bool)
        cw = self.cell_width * scale
        for i, ch in enumerate(text):
            big = np.kron(self.glyphs[ch], np.ones((scale, scale), dtype=bool))
            out[:, i * cw : (i + 1) * cw] = big
        return out


DEFAULT_FONT = GlyphFont()
