"""Synthetic poster corpus with complete ground truth.

Each poster is described by a PosterRecord (background, one geometric
subject, styled text spans, layout class). Rendering is a pure function of
the record, so every downstream stage has an exact oracle: the pixel set
of every glyph is recomputable from (font, span).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image

from .font import DEFAULT_FONT, GlyphFont

log = logging.getLogger(__name__)

PATCH_SIZE = 8
DEFAULT_BUCKETS = ((64, 64), (64, 96), (96, 64), (48, 96))
MIN_CONTRAST = 0.3
CENTER_TOL = 2.0
MARGIN = 2
MIN_GAP = 3

LAYOUT_CLASSES = ("symmetric", "left-aligned", "top-banner")
SUBJECT_KINDS = ("circle", "rect", "triangle")
ROLES = ("title", "subtitle", "body")

# Named palette shared with the captioner's color-word table.
PALETTE: dict[str, tuple[int, int, int]] = {
    "black": (0, 0, 0),
    "white": (255, 255, 255),
    "red": (220, 30, 30),
    "green": (30, 160, 60),
    "blue": (30, 60, 200),
    "yellow": (240, 210, 40),
    "cyan": (40, 200, 210),
    "magenta": (200, 40, 180),
    "orange": (240, 140, 30),
    "purple": (130, 40, 160),
    "gray": (128, 128, 128),
}

DARK_COLORS = ("black", "blue", "purple", "red")
LIGHT_COLORS = ("white", "yellow", "cyan")

TITLE_WORDS = (
    "SALE", "MEGA", "NEW", "HOT", "FEST", "BONUS", "GRAND", "DEAL",
    "EXPO", "GALA", "SHOW", "TOUR", "GO", "WIN", "ART", "LIVE",
)
SUBTITLE_PHRASES = (
    "50% OFF", "NEW IN", "TODAY", "2 FOR 1", "ACT NOW", "BIG WIN",
    "ON NOW", "SAVE", "HURRY", "VIP", "FREE",
)
BODY_PHRASES = (
    "ENDS SOON", "SHOP NOW", "ALL WEEK", "DONT WAIT", "JOIN US",
    "OPEN LATE", "COME SEE",
)


class RecordInvariantError(ValueError):
    """A PosterRecord violates one of its invariants."""


class LayoutError(RuntimeError):
    """Content cannot be laid out on the requested canvas."""


def luminance(rgb) -> float:
    r, g, b = (float(v) / 255.0 for v in rgb)
    return 0.2126 * r + 0.7152 * g + 0.0722 * b


@dataclass
class TextSpan:
    content: str
    bbox: tuple[int, int, int, int]  # x, y, w, h
    fill_color: tuple[int, int, int]
    scale: int
    role: str

    def to_dict(self) -> dict:
        return {
            "content": self.content,
            "bbox": list(self.bbox),
            "fill_color": list(self.fill_color),
            "scale": self.scale,
            "role": self.role,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TextSpan":
        return cls(
            content=d["content"],
            bbox=tuple(d["bbox"]),
            fill_color=tuple(d["fill_color"]),
            scale=int(d["scale"]),
            role=d["role"],
        )


@dataclass
class PosterRecord:
    id: str
    width: int
    height: int
    background: dict  # {"kind": "solid", "color": [...]} or {"kind": "gradient", "top": [...], "bottom": [...]}
    subject: dict  # {"kind": ..., "bbox": [x,y,w,h], "color": [...]}
    spans: list[TextSpan]
    layout_class: str
    seed: int

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spans"] = [s.to_dict() for s in self.spans]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PosterRecord":
        return cls(
            id=d["id"],
            width=int(d["width"]),
            height=int(d["height"]),
            background=d["background"],
            subject=d["subject"],
            spans=[TextSpan.from_dict(s) for s in d["spans"]],
            layout_class=d["layout_class"],
            seed=int(d["seed"]),
        )


def background_rows(bg: dict, h: int) -> np.ndarray:
    """(H, 3) uint8 array: the background color of each row."""
    if bg["kind"] == "solid":
        return np.tile(np.array(bg["color"], dtype=np.uint8), (h, 1))
    top = np.array(bg["top"], dtype=np.float64)
    bot = np.array(bg["bottom"], dtype=np.float64)
    t = np.arange(h, dtype=np.float64) / max(h - 1, 1)
    rows = np.rint(top[None, :] + (bot - top)[None, :] * t[:, None])
    return rows.astype(np.uint8)


def _boxes_overlap(a, b) -> bool:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    return ax < bx + bw and bx < ax + aw and ay < by + bh and by < ay + ah


def validate_record(record: PosterRecord, font: GlyphFont = DEFAULT_FONT) -> None:
    """Raise RecordInvariantError naming the first violated invariant."""
    w, h = record.width, record.height
    if w <= 0 or h <= 0:
        raise RecordInvariantError("canvas dimensions must be positive")
    if record.layout_class not in LAYOUT_CLASSES:
        raise RecordInvariantError(f"unknown layout_class {record.layout_class!r}")
    sx, sy, sw, sh = record.subject["bbox"]
    if sx < 0 or sy < 0 or sx + sw > w or sy + sh > h:
        raise RecordInvariantError("subject bbox outside canvas")
    if record.subject["kind"] not in SUBJECT_KINDS:
        raise RecordInvariantError(f"unknown subject kind {record.subject['kind']!r}")

    bg_rows = background_rows(record.background, record.height)
    bg_lum = np.array([luminance(c) for c in bg_rows])
    for i, span in enumerate(record.spans):
        if not span.content or span.content != span.content.strip(" "):
            raise RecordInvariantError(
                f"span {i}: content must be nonempty without leading/trailing spaces"
            )
        if not font.supports(span.content):
            raise RecordInvariantError(f"span {i}: unsupported characters")
        if span.role not in ROLES:
            raise RecordInvariantError(f"span {i}: unknown role {span.role!r}")
        if span.scale < 1:
            raise RecordInvariantError(f"span {i}: scale must be positive")
        x, y, bw, bh = span.bbox
        ew, eh = font.text_extent(span.content, span.scale)
        if (bw, bh) != (ew, eh):
            raise RecordInvariantError(
                f"span {i}: bbox extent {(bw, bh)} != rendered extent {(ew, eh)}"
            )
        if x < 0 or y < 0 or x + bw > w or y + bh > h:
            raise RecordInvariantError(f"span {i}: bbox outside canvas")
        fill_lum = luminance(span.fill_color)
        if np.min(np.abs(bg_lum[y : y + bh] - fill_lum)) < MIN_CONTRAST:
            raise RecordInvariantError(
                f"span {i}: contrast vs background below {MIN_CONTRAST}"
            )
    for i in range(len(record.spans)):
        for j in range(i + 1, len(record.spans)):
            if _boxes_overlap(record.spans[i].bbox, record.spans[j].bbox):
                raise RecordInvariantError(f"spans {i} and {j} overlap")

    # layout_class consistency: symmetric <=> all title/subtitle centroids centered
    centroids = [
        s.bbox[0] + s.bbox[2] / 2.0
        for s in record.spans
        if s.role in ("title", "subtitle")
    ]
    centered = all(abs(c - w / 2.0) <= CENTER_TOL for c in centroids)
    if record.layout_class == "symmetric" and not centered:
        raise RecordInvariantError("symmetric layout has off-center title/subtitle")
    if record.layout_class != "symmetric" and centered and centroids:
        raise RecordInvariantError(
            f"{record.layout_class} layout has fully centered title/subtitle"
        )


def subject_mask(record: PosterRecord) -> np.ndarray:
    """Exact boolean pixel set of the record's subject shape."""
    h, w = record.height, record.width
    mask = np.zeros((h, w), dtype=bool)
    x, y, bw, bh = record.subject["bbox"]
    yy, xx = np.mgrid[0:bh, 0:bw]
    kind = record.subject["kind"]
    if kind == "rect":
        local = np.ones((bh, bw), dtype=bool)
    elif kind == "circle":
        cy, cx = (bh - 1) / 2.0, (bw - 1) / 2.0
        ry, rx = bh / 2.0, bw / 2.0
        local = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    else:  # triangle: apex top-center, base bottom edge
        cx = (bw - 1) / 2.0
        rel = yy / max(bh - 1, 1)
        half = rel * (bw - 1) / 2.0
        local = np.abs(xx - cx) <= half
    mask[y : y + bh, x : x + bw] = local
    return mask


def glyph_mask(record: PosterRecord, font: GlyphFont = DEFAULT_FONT) -> np.ndarray:
    """Exact boolean pixel set of all rendered glyphs."""
    mask = np.zeros((record.height, record.width), dtype=bool)
    for span in record.spans:
        x, y, bw, bh = span.bbox
        mask[y : y + bh, x : x + bw] |= font.render_text_mask(span.content, span.scale)
    return mask


def render_poster(record: PosterRecord, font: GlyphFont = DEFAULT_FONT) -> np.ndarray:
    """Deterministically render a record to an (H, W, 3) uint8 image."""
    validate_record(record, font)
    img = np.repeat(
        background_rows(record.background, record.height)[:, None, :],
        record.width,
        axis=1,
    ).copy()
    img[subject_mask(record)] = np.array(record.subject["color"], dtype=np.uint8)
    for span in record.spans:
        x, y, bw, bh = span.bbox
        m = font.render_text_mask(span.content, span.scale)
        region = img[y : y + bh, x : x + bw]
        region[m] = np.array(span.fill_color, dtype=np.uint8)
    return img


def ink_pixel_count(record: PosterRecord, font: GlyphFont = DEFAULT_FONT) -> int:
    return int(glyph_mask(record, font).sum())


# --- generation -------------------------------------------------------------


def _pick_background(rng: np.random.Generator) -> tuple[dict, list[str]]:
    """Background spec plus the luminance family ('dark'/'light') it belongs to."""
    family = "dark" if rng.random() < 0.6 else "light"
    names = DARK_COLORS if family == "dark" else LIGHT_COLORS
    if rng.random() < 0.35:
        a, b = rng.choice(len(names), size=2, replace=False)
        bg = {
            "kind": "gradient",
            "top": list(PALETTE[names[a]]),
            "bottom": list(PALETTE[names[b]]),
        }
    else:
        bg = {"kind": "solid", "color": list(PALETTE[names[rng.integers(len(names))]])}
    return bg, family


def _text_color_names(family: str) -> tuple[str, ...]:
    # Opposite-luminance colors guarantee the contrast floor against every
    # background row of the same family.
    if family == "dark":
        return ("white", "yellow", "cyan", "orange")
    return ("black", "blue", "purple", "red")


def _fits(word: str, scale: int, w: int, symmetric: bool) -> bool:
    pw = len(word) * DEFAULT_FONT.cell_width * scale
    limit = w - 2 * MARGIN
    if not symmetric:
        # keep the centroid measurably off-center when left-anchored
        limit = w - 2 * MARGIN - 5
    return pw <= limit


def _choose_content(
    rng: np.random.Generator, words, scale: int, w: int, symmetric: bool
) -> str | None:
    ok = [t for t in words if _fits(t, scale, w, symmetric)]
    if not ok:
        return None
    return ok[rng.integers(len(ok))]


def plan_record(
    rng: np.random.Generator,
    rec_id: str,
    bucket: tuple[int, int],
    seed: int,
    font: GlyphFont = DEFAULT_FONT,
) -> PosterRecord:
    """One layout attempt; raises LayoutError when content cannot fit."""
    w, h = bucket
    background, family = _pick_background(rng)
    layout_class = LAYOUT_CLASSES[rng.integers(len(LAYOUT_CLASSES))]
    symmetric = layout_class == "symmetric"
    text_names = _text_color_names(family)

    bg_row_colors = {tuple(int(v) for v in c) for c in background_rows(background, h)}
    usable = [n for n in text_names if tuple(PALETTE[n]) not in bg_row_colors]
    if not usable:
        raise LayoutError("no usable text colors for this background")

    # content plan: title always, optional subtitle/body
    title_scale = 2 if _fits(min(TITLE_WORDS, key=len), 2, w, symmetric) else 1
    title = _choose_content(rng, TITLE_WORDS, title_scale, w, symmetric)
    if title is None:
        title_scale = 1
        title = _choose_content(rng, TITLE_WORDS, 1, w, symmetric)
    if title is None:
        raise LayoutError("no title fits the canvas width")
    plan: list[tuple[str, str, int]] = [("title", title, title_scale)]
    if rng.random() < 0.7:
        sub = _choose_content(rng, SUBTITLE_PHRASES, 1, w, symmetric)
        if sub is not None:
            plan.append(("subtitle", sub, 1))
    if rng.random() < 0.4:
        body = _choose_content(rng, BODY_PHRASES, 1, w, symmetric)
        if body is not None:
            plan.append(("body", body, 1))

    subj_kind = SUBJECT_KINDS[rng.integers(len(SUBJECT_KINDS))]
    # subject drawn from the same high-contrast family, distinct from text colors
    subj_name = usable[rng.integers(len(usable))]
    text_usable = [n for n in usable if n != subj_name]
    if not text_usable:
        raise LayoutError("no text color distinct from the subject color")
    subj_color = PALETTE[subj_name]
    span_colors = [PALETTE[text_usable[rng.integers(len(text_usable))]] for _ in plan]

    return _layout(
        rng, rec_id, w, h, background, layout_class, plan, span_colors,
        subj_kind, subj_color, seed, font,
    )


def _layout(
    rng, rec_id, w, h, background, layout_class, plan, span_colors,
    subj_kind, subj_color, seed, font,
) -> PosterRecord:
    """Place planned spans plus the subject into vertical slots."""
    symmetric = layout_class == "symmetric"
    for role, content, scale in plan:
        if not _fits(content, scale, w, symmetric):
            raise LayoutError(f"{role} {content!r} too wide for {w}x{h}")

    def attempt(plan, subj_h):
        heights = [font.cell_height * s for _, _, s in plan] + [subj_h]
        total = sum(heights) + MIN_GAP * (len(heights) - 1) + 2 * MARGIN
        return total <= h, heights, total

    subj_h = max(10, h // 4)
    plan = list(plan)
    ok, heights, total = attempt(plan, subj_h)
    while not ok:
        if subj_h > 10:
            subj_h = max(10, subj_h - 4)
        elif len(plan) > 1:
            plan.pop()  # drop body first, then subtitle
        elif plan[0][2] > 1:
            role, content, _ = plan[0]
            plan[0] = (role, content, 1)
        else:
            raise LayoutError(f"content cannot fit on {w}x{h} canvas")
        ok, heights, total = attempt(plan, subj_h)

    # slot order per layout class; the subject fills one slot
    if layout_class == "top-banner":
        order = [plan[0], "subject"] + plan[1:]
    elif layout_class == "symmetric":
        order = list(plan[:2]) + ["subject"] + list(plan[2:])
    else:
        order = list(plan) + ["subject"]
    slot_heights = [
        subj_h if s == "subject" else font.cell_height * s[2] for s in order
    ]

    leftover = h - 2 * MARGIN - sum(slot_heights) - MIN_GAP * (len(order) - 1)
    extra = rng.multinomial(leftover, [1.0 / (len(order) + 1)] * (len(order) + 1))

    spans: list[TextSpan] = []
    color_iter = iter(span_colors)
    subject = None
    y = MARGIN + int(extra[0])
    for idx, slot in enumerate(order):
        if slot == "subject":
            # strictly under half the canvas width so the subject can never
            # become a row's dominant color (keeps the ink-mass heuristics sane)
            sw_max = w // 2 - 1
            sw = int(rng.integers(max(8, w // 3), max(9, sw_max) + 1))
            sw = min(sw, sw_max)
            if layout_class == "left-aligned":
                sx = w - MARGIN - sw  # counterweight for left-anchored text
            else:
                sx = (w - sw) // 2
            subject = {"kind": subj_kind, "bbox": [sx, y, sw, subj_h], "color": list(subj_color)}
            y += subj_h
        else:
            role, content, scale = slot
            pw, ph = font.text_extent(content, scale)
            x = (w - pw) // 2 if symmetric else MARGIN
            spans.append(
                TextSpan(content, (x, y, pw, ph), tuple(next(color_iter)), scale, role)
            )
            y += ph
        y += MIN_GAP + int(extra[idx + 1])

    record = PosterRecord(
        id=rec_id,
        width=w,
        height=h,
        background=background,
        subject=subject,
        spans=spans,
        layout_class=layout_class,
        seed=seed,
    )
    validate_record(record, font)
    if ink_pixel_count(record, font) < 0.035 * w * h:
        raise LayoutError("text coverage below the 3.5% floor")
    return record


def generate_record(
    seed: int,
    index: int,
    buckets=DEFAULT_BUCKETS,
    font: GlyphFont = DEFAULT_FONT,
    max_retries: int = 100,
) -> PosterRecord | None:
    """Deterministic per-index record; None when layout never succeeds."""
    rng = np.random.default_rng([seed, index])
    bucket = tuple(buckets[int(rng.integers(len(buckets)))])
    for _ in range(max_retries):
        try:
            return plan_record(rng, f"poster-{seed}-{index:06d}", bucket, seed)
        except (LayoutError, RecordInvariantError):
            continue
    return None


def generate_corpus(
    seed: int,
    count: int,
    buckets=DEFAULT_BUCKETS,
    font: GlyphFont = DEFAULT_FONT,
) -> list[tuple[PosterRecord, np.ndarray]]:
    if count < 0:
        raise ValueError("count must be >= 0")
    for bw, bh in buckets:
        if bw % PATCH_SIZE or bh % PATCH_SIZE:
            raise ValueError(f"bucket {bw}x{bh} not divisible by patch size {PATCH_SIZE}")
    out = []
    for i in range(count):
        record = generate_record(seed, i, buckets, font)
        if record is None:
            log.warning("record %d: unsatisfiable layout, skipped", i)
            continue
        out.append((record, render_poster(record, font)))
    return out


def rerender_at_ratio(
    record: PosterRecord,
    bucket: tuple[int, int],
    font: GlyphFont = DEFAULT_FONT,
    max_retries: int = 50,
) -> tuple[PosterRecord, np.ndarray]:
    """Re-lay out the same content on a different canvas bucket."""
    if tuple(bucket) == (record.width, record.height):
        raise ValueError("bucket must differ from the record's bucket")
    w, h = bucket
    plan = [(s.role, s.content, s.scale) for s in record.spans]
    span_colors = [s.fill_color for s in record.spans]
    rng = np.random.default_rng([record.seed, w, h, 0x5A])
    last_err: Exception | None = None
    for scale_down in (False, True):
        p = (
            [(r, c, 1) for r, c, _ in plan] if scale_down else plan
        )
        for _ in range(max_retries):
            try:
                new = _layout(
                    rng, record.id, w, h, record.background, record.layout_class,
                    p, span_colors, record.subject["kind"],
                    tuple(record.subject["color"]), record.seed, font,
                )
                return new, render_poster(new, font)
            except (LayoutError, RecordInvariantError) as e:
                last_err = e
    raise LayoutError(f"content does not fit at {w}x{h}: {last_err}")


# --- manifest / image io ----------------------------------------------------


def save_image(img: np.ndarray, path: Path | str) -> None:
    Image.fromarray(img, mode="RGB").save(path)


def load_image(path: Path | str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.uint8)


def write_manifest(records: list[PosterRecord], path: Path | str) -> None:
    with open(path, "w") as f:
        for r in records:
            f.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def read_manifest(path: Path | str) -> list[PosterRecord]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(PosterRecord.from_dict(json.loads(line)))
    return out


def write_corpus(
    pairs: list[tuple[PosterRecord, np.ndarray]], out_dir: Path | str
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for record, img in pairs:
        save_image(img, out_dir / f"{record.id}.png")
    manifest = out_dir / "corpus.jsonl"
    write_manifest([r for r, _ in pairs], manifest)
    return manifest
