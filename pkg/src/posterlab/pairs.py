"""Reverse-engineer posters into source/target training pairs.

Five task types: text_addition (clean background -> poster), text_deletion
(poster -> clean background), text_modification (swap one span's words),
multi_aspect (same content on a different canvas bucket), restyle (palette
permutation). Text removal uses dilated OCR boxes and Laplace-relaxation
inpainting; subjects are isolated from ground truth or by color
thresholding.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, asdict

import numpy as np

from . import corpus as cp
from .captioner import caption_bundle
from .corpus import PosterRecord, LayoutError, PALETTE
from .filtering import DetectedSpan, _pack
from .font import DEFAULT_FONT, GlyphFont

log = logging.getLogger(__name__)

TASKS = ("text_addition", "text_modification", "text_deletion", "multi_aspect", "restyle")

DEFAULT_DILATION = 2
DEFAULT_EPS = 0.5 / 255.0
DEFAULT_MAX_ITERS = 2000

REPLACEMENT_WORDS = (
    "NOW", "BIG", "TOP", "MAX", "ALL", "ONE", "JOY", "FUN", "SKY", "SUN",
)


@dataclass
class TextMask:
    mask: np.ndarray  # bool, image dims
    dilation_radius: int


@dataclass
class SubjectMask:
    mask: np.ndarray  # bool, image dims
    source: str  # ground_truth | color_threshold


@dataclass
class TrainingPair:
    pair_id: str
    task: str
    source_image: str  # file reference
    target_image: str
    instruction: str
    glyph_caption: str
    layout_caption: str
    source_dims: tuple[int, int]
    target_dims: tuple[int, int]
    record_id: str = ""
    aesthetic: float = 0.0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if not self.instruction:
            raise ValueError("instruction must be non-empty")
        same = self.source_dims == self.target_dims
        if self.task == "multi_aspect" and same:
            raise ValueError("multi_aspect pair must change dimensions")
        if self.task != "multi_aspect" and not same:
            raise ValueError(f"{self.task} pair must keep dimensions")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source_dims"] = list(self.source_dims)
        d["target_dims"] = list(self.target_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingPair":
        d = dict(d)
        d["source_dims"] = tuple(d["source_dims"])
        d["target_dims"] = tuple(d["target_dims"])
        return cls(**d)


def build_text_mask(
    spans: list[DetectedSpan], dims: tuple[int, int], r: int = DEFAULT_DILATION
) -> TextMask:
    """Union of span bboxes dilated by r px, clipped to the canvas."""
    if r < 0:
        raise ValueError("dilation radius must be >= 0")
    w, h = dims
    mask = np.zeros((h, w), dtype=bool)
    for span in spans:
        x, y, bw, bh = span.bbox
        mask[max(0, y - r) : min(h, y + bh + r), max(0, x - r) : min(w, x + bw + r)] = True
    return TextMask(mask=mask, dilation_radius=r)


try:
    from numba import njit

    @njit(cache=True)
    def _relax(img, inside, eps, max_iters):
        h, w, c = img.shape
        for _ in range(max_iters):
            delta = 0.0
            for y in range(h):
                for x in range(w):
                    if not inside[y, x]:
                        continue
                    for k in range(c):
                        acc = 0.0
                        n = 0
                        if y > 0:
                            acc += img[y - 1, x, k]
                            n += 1
                        if y < h - 1:
                            acc += img[y + 1, x, k]
                            n += 1
                        if x > 0:
                            acc += img[y, x - 1, k]
                            n += 1
                        if x < w - 1:
                            acc += img[y, x + 1, k]
                            n += 1
                        v = acc / n
                        d = abs(v - img[y, x, k])
                        if d > delta:
                            delta = d
                        img[y, x, k] = v
            if delta < eps:
                break
        return img

except ImportError:  # pragma: no cover - numba is a hard dep in practice

    def _relax(img, inside, eps, max_iters):
        h, w, c = img.shape
        for _ in range(max_iters):
            delta = 0.0
            for y in range(h):
                for x in range(w):
                    if not inside[y, x]:
                        continue
                    for k in range(c):
                        acc, n = 0.0, 0
                        if y > 0:
                            acc += img[y - 1, x, k]; n += 1
                        if y < h - 1:
                            acc += img[y + 1, x, k]; n += 1
                        if x > 0:
                            acc += img[y, x - 1, k]; n += 1
                        if x < w - 1:
                            acc += img[y, x + 1, k]; n += 1
                        v = acc / n
                        delta = max(delta, abs(v - img[y, x, k]))
                        img[y, x, k] = v
            if delta < eps:
                break
        return img


def _mask_runs(row: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive True values, as (start, stop_exclusive)."""
    idx = np.flatnonzero(row)
    if idx.size == 0:
        return []
    splits = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[splits + 1]))
    ends = np.concatenate((idx[splits], [idx[-1]]))
    return [(int(s), int(e) + 1) for s, e in zip(starts, ends)]


def inpaint(
    image: np.ndarray,
    mask: TextMask | np.ndarray,
    eps: float = DEFAULT_EPS,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> np.ndarray:
    """Fill masked pixels by Gauss-Seidel 4-neighbor averaging, row-major
    sweeps, until the max per-pixel channel change drops below eps. Pixels
    outside the mask are bit-identical to the input."""
    m = mask.mask if isinstance(mask, TextMask) else mask
    if m.shape != image.shape[:2]:
        raise ValueError("mask dimensions must match the image")
    if not m.any():
        return image.copy()
    if m.all():
        raise ValueError("mask covers the whole image: no boundary condition")
    work = image.astype(np.float64) / 255.0
    # seed masked pixels close to the harmonic fill: per-row linear
    # interpolation between the nearest unmasked neighbors (exact for the
    # row-constant gradient backgrounds), falling back to the boundary mean
    boundary_mean = work[~m].mean(axis=0)
    h, w = m.shape
    for y in range(h):
        row = m[y]
        if not row.any():
            continue
        for x0_run, x1_run in _mask_runs(row):
            left = work[y, x0_run - 1] if x0_run > 0 else None
            right = work[y, x1_run] if x1_run < w else None
            n = x1_run - x0_run
            if left is not None and right is not None:
                frac = (np.arange(1, n + 1) / (n + 1))[:, None]
                work[y, x0_run:x1_run] = left[None, :] * (1 - frac) + right[None, :] * frac
            elif left is not None:
                work[y, x0_run:x1_run] = left
            elif right is not None:
                work[y, x0_run:x1_run] = right
            else:
                work[y, x0_run:x1_run] = boundary_mean
    work = _relax(work, m, float(eps), int(max_iters))
    out = image.copy()
    filled = np.rint(np.clip(work, 0.0, 1.0) * 255.0).astype(np.uint8)
    out[m] = filled[m]
    return out


def segment_subject(
    record: PosterRecord | None = None,
    image: np.ndarray | None = None,
    font: GlyphFont = DEFAULT_FONT,
) -> SubjectMask:
    """Exact ground-truth pixels when the record is available; otherwise the
    dominant non-background, non-text color cluster."""
    if record is not None:
        return SubjectMask(mask=cp.subject_mask(record), source="ground_truth")
    if image is None:
        raise ValueError("need a record or an image")
    from .filtering import run_ocr

    h, w = image.shape[:2]
    packed = _pack(image)
    bg_colors = set()
    for r in range(h):
        colors, counts = np.unique(packed[r], return_counts=True)
        bg_colors.add(int(colors[int(np.argmax(counts))]))
    text_mask = np.zeros((h, w), dtype=bool)
    for span in run_ocr(image, font):
        x, y, bw, bh = span.bbox
        text_mask[y : y + bh, x : x + bw] = True
    candidates = ~text_mask & ~np.isin(packed, sorted(bg_colors))
    if not candidates.any():
        return SubjectMask(mask=np.zeros((h, w), dtype=bool), source="color_threshold")
    colors, counts = np.unique(packed[candidates], return_counts=True)
    dominant = int(colors[int(np.argmax(counts))])
    return SubjectMask(mask=(packed == dominant) & ~text_mask, source="color_threshold")


def _role_phrase(span) -> str:
    role = span.role if hasattr(span, "role") else "title"
    return {"title": "title", "subtitle": "subtitle", "body": "body text"}[role]


def extract_source_prompt(spans: list, task: str, replacement: tuple[str, str] | None = None) -> str:
    """Instruction template per task, embedding span texts verbatim.

    Templates:
      text_addition:     Add the <role> "X"[ and the <role> "Y"]... to this image.
      text_deletion:     Remove all text from this image.
      text_modification: Replace the text "OLD" with "NEW".
      multi_aspect:      Redesign this poster at a new aspect ratio.
      restyle:           Restyle this poster with a new color palette.
    """
    if task == "text_deletion":
        return "Remove all text from this image."
    if task == "multi_aspect":
        return "Redesign this poster at a new aspect ratio."
    if task == "restyle":
        return "Restyle this poster with a new color palette."
    if task == "text_modification":
        if replacement is None:
            raise ValueError("text_modification needs (old, new) texts")
        old, new = replacement
        return f'Replace the text "{old}" with "{new}".'
    if task == "text_addition":
        if not spans:
            return "Add text to this image."
        parts = [
            f'the {_role_phrase(s)} "{s.text if hasattr(s, "text") else s.content}"'
            for s in spans
        ]
        if len(parts) == 1:
            joined = parts[0]
        else:
            joined = ", ".join(parts[:-1]) + " and " + parts[-1]
        return f"Add {joined} to this image."
    raise ValueError(f"unknown task {task!r}")


def _restyled(record: PosterRecord, rng: np.random.Generator) -> PosterRecord:
    """Permute the palette (background family swap within contrast rules)."""
    for _ in range(50):
        bg, family = cp._pick_background(rng)
        usable = [
            n
            for n in cp._text_color_names(family)
            if tuple(PALETTE[n]) not in {tuple(int(v) for v in c) for c in cp.background_rows(bg, record.height)}
        ]
        if len(usable) < 2:
            continue
        subj_name = usable[int(rng.integers(len(usable)))]
        text_names = [n for n in usable if n != subj_name]
        new = PosterRecord(
            id=record.id,
            width=record.width,
            height=record.height,
            background=bg,
            subject={**record.subject, "color": list(PALETTE[subj_name])},
            spans=[
                cp.TextSpan(
                    s.content, s.bbox,
                    tuple(PALETTE[text_names[int(rng.integers(len(text_names)))]]),
                    s.scale, s.role,
                )
                for s in record.spans
            ],
            layout_class=record.layout_class,
            seed=record.seed,
        )
        if new.background == record.background:
            continue
        try:
            cp.validate_record(new)
            return new
        except cp.RecordInvariantError:
            continue
    raise LayoutError("could not permute palette under the contrast floor")


def _modified(record: PosterRecord, rng: np.random.Generator) -> tuple[PosterRecord, str, str]:
    """Substitute one span's content from the fixed replacement word list."""
    order = rng.permutation(len(record.spans))
    for idx in order:
        span = record.spans[int(idx)]
        fits = [
            wd
            for wd in REPLACEMENT_WORDS
            if wd != span.content
            and len(wd) * DEFAULT_FONT.cell_width * span.scale <= span.bbox[2]
        ]
        if not fits:
            continue
        new_word = fits[int(rng.integers(len(fits)))]
        ew, eh = DEFAULT_FONT.text_extent(new_word, span.scale)
        new_span = cp.TextSpan(
            new_word, (span.bbox[0], span.bbox[1], ew, eh), span.fill_color, span.scale, span.role
        )
        spans = list(record.spans)
        spans[int(idx)] = new_span
        new = PosterRecord(
            id=record.id, width=record.width, height=record.height,
            background=record.background, subject=record.subject,
            spans=spans, layout_class=record.layout_class, seed=record.seed,
        )
        try:
            cp.validate_record(new)
            return new, span.content, new_word
        except cp.RecordInvariantError:
            continue
    raise LayoutError("no replacement word fits any span")


@dataclass
class PairBuildConfig:
    tasks: tuple[str, ...] = TASKS
    dilation: int = DEFAULT_DILATION
    eps: float = DEFAULT_EPS
    max_iters: int = DEFAULT_MAX_ITERS
    seed: int = 0
    buckets: tuple = cp.DEFAULT_BUCKETS


def make_pairs(
    record: PosterRecord,
    image: np.ndarray,
    ocr: list[DetectedSpan],
    config: PairBuildConfig,
    aesthetic: float = 0.0,
    save_image=None,
    image_store: dict | None = None,
) -> list[TrainingPair]:
    """Build every requested pair type for one filtered record.

    save_image(name, array) persists an image and returns its reference;
    when omitted, arrays are kept in image_store (if given) keyed by the
    synthesized reference name.
    """

    def _save(name: str, arr: np.ndarray) -> str:
        if save_image is not None:
            return save_image(name, arr)
        if image_store is not None:
            image_store[name] = arr
        return name

    if not ocr:
        log.info("record %s: no OCR spans, no pairs", record.id)
        return []

    rng = np.random.default_rng([config.seed, record.seed, zlib.crc32(record.id.encode())])
    bundle = caption_bundle(record)
    dims = (record.width, record.height)
    poster_ref = _save(f"{record.id}__poster.png", image)
    pairs: list[TrainingPair] = []

    clean_ref = None
    if {"text_addition", "text_deletion"} & set(config.tasks):
        tmask = build_text_mask(ocr, dims, config.dilation)
        clean = inpaint(image, tmask, config.eps, config.max_iters)
        clean_ref = _save(f"{record.id}__clean.png", clean)

    def add(task, src_ref, tgt_ref, instruction, tgt_dims=dims):
        pairs.append(
            TrainingPair(
                pair_id=f"{record.id}__{task}",
                task=task,
                source_image=src_ref,
                target_image=tgt_ref,
                instruction=instruction,
                glyph_caption=bundle.glyph_caption,
                layout_caption=bundle.layout_caption,
                source_dims=dims,
                target_dims=tgt_dims,
                record_id=record.id,
                aesthetic=aesthetic,
            )
        )

    for task in config.tasks:
        try:
            if task == "text_addition":
                # record spans carry roles; OCR spans carry text only
                ordered = sorted(record.spans, key=lambda s: (s.bbox[1], s.bbox[0]))
                add(task, clean_ref, poster_ref, extract_source_prompt(ordered, task))
            elif task == "text_deletion":
                add(task, poster_ref, clean_ref, extract_source_prompt(ocr, task))
            elif task == "text_modification":
                new_rec, old, new = _modified(record, rng)
                tgt = cp.render_poster(new_rec)
                ref = _save(f"{record.id}__modified.png", tgt)
                add(task, poster_ref, ref, extract_source_prompt(ocr, task, (old, new)))
            elif task == "multi_aspect":
                others = [b for b in config.buckets if tuple(b) != dims]
                bucket = tuple(others[int(rng.integers(len(others)))])
                new_rec, tgt = cp.rerender_at_ratio(record, bucket)
                ref = _save(f"{record.id}__aspect.png", tgt)
                add(task, poster_ref, ref, extract_source_prompt(ocr, task), tgt_dims=bucket)
            elif task == "restyle":
                new_rec = _restyled(record, rng)
                tgt = cp.render_poster(new_rec)
                ref = _save(f"{record.id}__restyle.png", tgt)
                add(task, poster_ref, ref, extract_source_prompt(ocr, task))
        except (LayoutError, cp.RecordInvariantError, ValueError) as e:
            log.info("record %s: skipping %s pair: %s", record.id, task, e)
    return pairs


def write_pairs(pairs: list[TrainingPair], path) -> None:
    with open(path, "w") as f:
        for p in pairs:
            f.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")


def read_pairs(path) -> list[TrainingPair]:
    with open(path) as f:
        return [TrainingPair.from_dict(json.loads(line)) for line in f if line.strip()]
