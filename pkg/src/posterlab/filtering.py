"""Two-gate dataset filter: OCR text gate + aesthetic score gate.

The desk-scale OCR backend does exhaustive template matching of the bitmap
font's glyph masks at corpus scales. On clean corpus renders the match is
exact (recall/precision 1.0, confidence 1.0); a tolerance mode handles
model-generated images where colors are noisy. An adapter protocol lets an
external OCR/aesthetic service substitute for either gate.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Callable, Protocol

import numpy as np

from .corpus import luminance
from .font import DEFAULT_FONT, GlyphFont

CELL = 8
DEFAULT_SCALES = (1, 2, 3, 4)
DEFAULT_TAU = 0.5
AESTHETIC_WEIGHTS = (0.4, 0.3, 0.3)  # contrast, balance, coverage
COVERAGE_BAND = (0.02, 0.40)


@dataclass
class DetectedSpan:
    text: str
    bbox: tuple[int, int, int, int]
    confidence: float

    def to_dict(self) -> dict:
        return {"text": self.text, "bbox": list(self.bbox), "confidence": self.confidence}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectedSpan":
        return cls(d["text"], tuple(d["bbox"]), float(d["confidence"]))


@dataclass
class AestheticReport:
    score: float
    contrast: float
    coverage: float
    balance: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FilterDecision:
    keep: bool
    reason: str  # ok | no_text | low_aesthetic
    report: AestheticReport
    ocr: list[DetectedSpan] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "keep": self.keep,
            "reason": self.reason,
            "report": self.report.to_dict(),
            "ocr": [s.to_dict() for s in self.ocr],
        }


class OcrBackend(Protocol):
    def __call__(self, image: np.ndarray) -> list[DetectedSpan]: ...


def _pack(img: np.ndarray) -> np.ndarray:
    a = img.astype(np.uint32)
    return (a[..., 0] << 16) | (a[..., 1] << 8) | a[..., 2]


def _row_bands(rows_any: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of consecutive True rows, as (start, stop_exclusive)."""
    idx = np.flatnonzero(rows_any)
    if idx.size == 0:
        return []
    splits = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate(([idx[0]], idx[splits + 1]))
    ends = np.concatenate((idx[splits], [idx[-1]]))
    return [(int(s), int(e) + 1) for s, e in zip(starts, ends)]


def _downscale(cell: np.ndarray, s: int, exact: bool) -> np.ndarray | None:
    """Reduce an (8s, 8s) binary cell to 8x8. Exact mode requires every
    s-by-s block to be uniform (true nearest-neighbor upscaling)."""
    if s == 1:
        return cell
    blocks = cell.reshape(CELL, s, CELL, s).astype(np.float64).mean(axis=(1, 3))
    if exact and not np.all((blocks == 0.0) | (blocks == 1.0)):
        return None
    return blocks >= 0.5


class _GlyphTable:
    def __init__(self, font: GlyphFont):
        self.font = font
        self.chars = [c for c in font.charset if c != " "]
        self.masks = np.stack([font.glyphs[c] for c in self.chars]).reshape(
            len(self.chars), -1
        )
        self.exact = {font.glyphs[c].tobytes(): c for c in self.chars}
        self.blank = np.zeros(CELL * CELL, dtype=bool)

    def match(self, pattern: np.ndarray, exact: bool) -> tuple[str | None, float]:
        flat = pattern.reshape(-1)
        if exact:
            if not flat.any():
                return " ", 1.0
            ch = self.exact.get(flat.tobytes())
            return (ch, 1.0) if ch else (None, 0.0)
        scores = 1.0 - np.count_nonzero(self.masks != flat[None, :], axis=1) / flat.size
        space_score = 1.0 - np.count_nonzero(flat) / flat.size
        best = int(np.argmax(scores))
        if space_score >= scores[best]:
            return " ", float(space_score)
        return self.chars[best], float(scores[best])


_TABLES: dict[int, _GlyphTable] = {}


def _table(font: GlyphFont) -> _GlyphTable:
    key = id(font)
    if key not in _TABLES:
        _TABLES[key] = _GlyphTable(font)
    return _TABLES[key]


def _match_band(
    mask: np.ndarray,
    y0: int,
    y1: int,
    table: _GlyphTable,
    scales,
    exact: bool,
    min_cell_score: float,
) -> DetectedSpan | None:
    h_img, w_img = mask.shape
    band = mask[y0:y1]
    cols = np.flatnonzero(band.any(axis=0))
    if cols.size == 0:
        return None
    x0, x1 = int(cols[0]), int(cols[-1])
    h_band = y1 - y0
    best: tuple[float, DetectedSpan] | None = None
    for s in sorted(scales, reverse=True):
        cell_px = CELL * s
        if h_band > cell_px:
            continue
        rx = ry = None
        if exact and s > 1:
            # Exact matching requires nearest-neighbor-upscaled glyphs, so
            # every ink transition must lie on the scale-s grid: all
            # transition coordinates share one residue mod s, which also
            # fixes the grid phase. Reject mismatched bands (smooth color
            # blobs) outright and search only the compatible offsets.
            col_t = np.flatnonzero((band[:, 1:] != band[:, :-1]).any(axis=0)) + 1
            col_res = {int(v) % s for v in col_t}
            row_t = list(np.flatnonzero((band[1:] != band[:-1]).any(axis=1)) + 1 + y0)
            if y0 > 0:
                row_t.append(y0)
            if y1 < h_img:
                row_t.append(y1)
            row_res = {int(v) % s for v in row_t}
            if len(col_res) > 1 or len(row_res) > 1:
                continue
            rx = col_res.pop() if col_res else None
            ry = row_res.pop() if row_res else None
        for dy in range(cell_px - h_band + 1):
            gy = y0 - dy
            if gy < 0 or gy + cell_px > h_img:
                continue
            if ry is not None and gy % s != ry:
                continue
            for dx in range(cell_px):
                gx = x0 - dx
                if gx < 0:
                    break
                if rx is not None and gx % s != rx:
                    continue
                n = int(np.ceil((x1 - gx + 1) / cell_px))
                if gx + n * cell_px > w_img:
                    continue
                chars: list[str] = []
                scores: list[float] = []
                ok = True
                for k in range(n):
                    cell = mask[gy:gy + cell_px, gx + k * cell_px : gx + (k + 1) * cell_px]
                    pattern = _downscale(cell, s, exact)
                    if pattern is None:
                        ok = False
                        break
                    ch, score = table.match(pattern, exact)
                    if ch is None or score < min_cell_score:
                        ok = False
                        break
                    chars.append(ch)
                    scores.append(score)
                if not ok or not chars:
                    continue
                text = "".join(chars)
                if not text.strip(" "):
                    continue
                lead = len(text) - len(text.lstrip(" "))
                text = text.strip(" ")
                span = DetectedSpan(
                    text=text,
                    bbox=(gx + lead * cell_px, gy, len(text) * cell_px, cell_px),
                    confidence=float(min(scores)),
                )
                if exact:
                    return span
                if best is None or span.confidence > best[0]:
                    best = (span.confidence, span)
    return best[1] if best else None


def _candidate_masks(
    img: np.ndarray, exact: bool, color_tol: int, min_pixels: int
) -> list[np.ndarray]:
    h, w = img.shape[:2]
    packed = _pack(img)
    if exact:
        colors, counts = np.unique(packed, return_counts=True)
        return [packed == c for c, n in zip(colors, counts) if n >= min_pixels]
    # tolerant: coarse color bins, then distance thresholding around bin means
    q = 32
    bins = (img // q).astype(np.int32)
    keys = bins[..., 0] * 64 + bins[..., 1] * 8 + bins[..., 2]
    uniq, counts = np.unique(keys, return_counts=True)
    order = np.argsort(counts)[::-1]
    masks = []
    seen_means: list[np.ndarray] = []
    for i in order[:16]:
        if counts[i] < min_pixels:
            break
        sel = keys == uniq[i]
        mean = img[sel].astype(np.float64).mean(axis=0)
        if any(np.abs(mean - m).max() < q for m in seen_means):
            continue
        seen_means.append(mean)
        dist = np.abs(img.astype(np.int32) - mean[None, None, :]).max(axis=2)
        masks.append(dist <= color_tol)
    return masks


def run_ocr(
    image: np.ndarray,
    font: GlyphFont = DEFAULT_FONT,
    scales=DEFAULT_SCALES,
    exact: bool = True,
    color_tol: int = 48,
    min_cell_score: float = 0.84,
    min_pixels: int = 4,
) -> list[DetectedSpan]:
    """Template-match the font's glyphs against the image.

    exact=True: pixels are grouped by exact color and cells must equal a
    glyph mask bit for bit (confidence 1.0). exact=False: colors are
    clustered with tolerance and cells accept the best glyph above
    min_cell_score.
    """
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("expected an (H, W, 3) image")
    if image.shape[0] == 0 or image.shape[1] == 0:
        return []
    table = _table(font)
    found: list[DetectedSpan] = []
    for mask in _candidate_masks(image, exact, color_tol, min_pixels):
        for y0, y1 in _row_bands(mask.any(axis=1)):
            span = _match_band(mask, y0, y1, table, scales, exact, min_cell_score)
            # punctuation-only matches are overwhelmingly smooth-region
            # artifacts (a color run the width of a dash); real spans
            # always carry at least one letter or digit
            if span is not None and any(c.isalnum() for c in span.text):
                found.append(span)
    # drop duplicates from overlapping color clusters, keep highest confidence
    found.sort(key=lambda s: -s.confidence)
    kept: list[DetectedSpan] = []
    for span in found:
        x, y, w, h = span.bbox
        dup = False
        for other in kept:
            ox, oy, ow, oh = other.bbox
            ix = max(0, min(x + w, ox + ow) - max(x, ox))
            iy = max(0, min(y + h, oy + oh) - max(y, oy))
            inter = ix * iy
            if inter > 0.5 * min(w * h, ow * oh):
                dup = True
                break
        if not dup:
            kept.append(span)
    kept.sort(key=lambda s: (s.bbox[1], s.bbox[0]))
    return kept


def _span_ink_pixels(span: DetectedSpan, font: GlyphFont) -> int:
    s = span.bbox[3] // CELL
    return int(
        sum(font.glyphs.get(c, font.glyphs[" "]).sum() for c in span.text) * s * s
    )


def aesthetic_score(
    image: np.ndarray,
    ocr: list[DetectedSpan],
    font: GlyphFont = DEFAULT_FONT,
    weights=AESTHETIC_WEIGHTS,
) -> AestheticReport:
    """score = w0*contrast + w1*balance + w2*coverage_term, clamped to [0,1].

    contrast: RMS luminance contrast normalized by the max possible std
    (0.5). coverage: glyph-ink fraction from OCR detections, full credit on
    [0.02, 0.40] with linear decay outside. balance: 1 - |left - right|
    ink-mass difference over total, ink = pixels differing from their
    row's dominant color.
    """
    h, w = image.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("zero-area image")
    lum = (
        0.2126 * image[..., 0] + 0.7152 * image[..., 1] + 0.0722 * image[..., 2]
    ) / 255.0
    contrast = min(1.0, float(lum.std()) / 0.5)

    coverage = min(1.0, sum(_span_ink_pixels(s, font) for s in ocr) / (w * h))
    lo, hi = COVERAGE_BAND
    if coverage < lo:
        coverage_term = coverage / lo
    elif coverage <= hi:
        coverage_term = 1.0
    else:
        coverage_term = (1.0 - coverage) / (1.0 - hi)

    packed = _pack(image)
    ink = np.zeros((h, w), dtype=bool)
    for r in range(h):
        colors, counts = np.unique(packed[r], return_counts=True)
        ink[r] = packed[r] != colors[int(np.argmax(counts))]
    total = float(ink.sum())
    if total == 0:
        balance = 0.0
    else:
        left = float(ink[:, : w // 2].sum())
        right = total - left
        balance = 1.0 - abs(left - right) / total

    w0, w1, w2 = weights
    score = float(np.clip(w0 * contrast + w1 * balance + w2 * coverage_term, 0.0, 1.0))
    return AestheticReport(score=score, contrast=contrast, coverage=coverage, balance=balance)


def filter_record(
    image: np.ndarray,
    tau: float = DEFAULT_TAU,
    font: GlyphFont = DEFAULT_FONT,
    ocr_backend: OcrBackend | None = None,
) -> FilterDecision:
    """Reject no_text when OCR finds nothing, low_aesthetic when score < tau
    (strict: score == tau keeps)."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    spans = ocr_backend(image) if ocr_backend else run_ocr(image, font)
    if not spans:
        report = aesthetic_score(image, [], font)
        return FilterDecision(keep=False, reason="no_text", report=report, ocr=[])
    report = aesthetic_score(image, spans, font)
    if report.score < tau:
        return FilterDecision(keep=False, reason="low_aesthetic", report=report, ocr=spans)
    return FilterDecision(keep=True, reason="ok", report=report, ocr=spans)


class HttpOcrBackend:
    """Adapter stub for an external OCR service returning DetectedSpan JSON.

    Not exercised by the desk pipeline; it exists so a hosted OCR engine
    can replace template matching without touching callers.
    """

    def __init__(self, endpoint: str, timeout: float = 10.0, retries: int = 2):
        self.endpoint = endpoint
        self.timeout = timeout
        self.retries = retries

    def __call__(self, image: np.ndarray) -> list[DetectedSpan]:
        import io

        import requests
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(image, mode="RGB").save(buf, format="PNG")
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint,
                    data=buf.getvalue(),
                    headers={"Content-Type": "image/png"},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                return [DetectedSpan.from_dict(d) for d in resp.json()["spans"]]
            except Exception as e:  # noqa: BLE001 - retry then surface
                last = e
        raise RuntimeError(f"OCR service failed after {self.retries + 1} tries: {last}")


def write_decisions(decisions: list[tuple[str, FilterDecision]], path) -> None:
    with open(path, "w") as f:
        for rec_id, dec in decisions:
            f.write(json.dumps({"id": rec_id, **dec.to_dict()}, sort_keys=True) + "\n")


def read_decisions(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]
