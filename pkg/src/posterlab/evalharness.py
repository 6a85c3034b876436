"""Scoring machinery: automatic metric proxies, usability/satisfaction
rate formulas, and min-max normalized radar data.

Human-study figures from the published comparison are shipped as a
display-only reference table (REFERENCE_STUDY_RESULTS); they are never
used as test oracles.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .filtering import DetectedSpan, run_ocr
from .font import DEFAULT_FONT, GlyphFont

# External human-evaluation figures from a published rater study; shipped
# as display fixtures only — no test asserts system behavior against them.
REFERENCE_STUDY_RESULTS = {
    "usability_rate": {
        "reference_system": 0.8855,
        "general_editor_baseline": 0.4756,
        "subject_editor_baseline": 0.2596,
    },
    "prompt_following_of_5": {"reference_system": 3.88},
    "design_sense_of_5": {"reference_system": 3.19},
    "subject_preservation_of_5": {"reference_system": 3.38},
}

RADAR_AXES = (
    "prompt_following",
    "subject_preservation",
    "design_sense",
    "usability_rate",
    "satisfaction_rate",
)


@dataclass
class MetricReport:
    prompt_following: float
    subject_preservation: float
    design_sense: float
    per_sample: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "prompt_following": self.prompt_following,
            "subject_preservation": self.subject_preservation,
            "design_sense": self.design_sense,
            "per_sample": self.per_sample,
        }


@dataclass
class StudyReport:
    usability_rate: float
    satisfaction_rate: float
    issue_counts: list[int]


def edit_distance(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def text_similarity(a: str, b: str) -> float:
    if not a and not b:
        return 1.0
    return 1.0 - edit_distance(a, b) / max(len(a), len(b))


def prompt_following(
    output: np.ndarray,
    requested_texts: list[str],
    font: GlyphFont = DEFAULT_FONT,
    detections: list[DetectedSpan] | None = None,
    exact: bool = False,
) -> float:
    """Mean over requested strings of the best normalized edit similarity
    against OCR detections; 0 when nothing is detected."""
    if not requested_texts:
        raise ValueError("requested_texts must be nonempty")
    if detections is None:
        detections = run_ocr(output, font, exact=exact)
    if not detections:
        return 0.0
    detected = [d.text for d in detections]
    return float(
        np.mean(
            [max(text_similarity(req, d) for d in detected) for req in requested_texts]
        )
    )


def subject_preservation(
    cond: np.ndarray,
    output: np.ndarray,
    mask: np.ndarray,
    stride: int = 8,
) -> float:
    """Best match over integer grid shifts of the masked subject inside the
    output: max over shifts of 1 - mean |pixel difference| (normalized)."""
    if not mask.any():
        raise ValueError("empty subject mask")
    ys, xs = np.nonzero(mask)
    y0, y1 = ys.min(), ys.max() + 1
    x0, x1 = xs.min(), xs.max() + 1
    patch = cond[y0:y1, x0:x1].astype(np.float64)
    local = mask[y0:y1, x0:x1]
    ph, pw = patch.shape[:2]
    oh, ow = output.shape[:2]
    if ph > oh or pw > ow:
        # subject larger than the output: compare the overlapping crop
        patch = patch[: min(ph, oh), : min(pw, ow)]
        local = local[: min(ph, oh), : min(pw, ow)]
        ph, pw = patch.shape[:2]
        if not local.any():
            raise ValueError("empty subject mask after cropping")
    offsets = {
        (sy, sx)
        for sy in range(0, oh - ph + 1, stride)
        for sx in range(0, ow - pw + 1, stride)
    }
    if y0 <= oh - ph and x0 <= ow - pw:
        offsets.add((int(y0), int(x0)))  # the subject's original position
    best = 0.0
    for sy, sx in sorted(offsets):
        window = output[sy : sy + ph, sx : sx + pw].astype(np.float64)
        diff = np.abs(window[local] - patch[local]).mean() / 255.0
        best = max(best, 1.0 - diff)
    return float(best)


def design_sense(
    spans: list[DetectedSpan], dims: tuple[int, int], tol: int = 2
) -> float:
    """0.5 * alignment + 0.5 * margin. alignment: largest fraction of spans
    sharing a left edge, center line, or right edge within tol px; margin:
    fraction of spans at least 2% of the canvas away from every edge."""
    if not spans:
        return 0.0
    w, h = dims
    n = len(spans)

    def frac_sharing(values) -> float:
        best = 1
        for v in values:
            best = max(best, sum(1 for u in values if abs(u - v) <= tol))
        return best / n

    lefts = [s.bbox[0] for s in spans]
    centers = [s.bbox[0] + s.bbox[2] / 2.0 for s in spans]
    rights = [s.bbox[0] + s.bbox[2] for s in spans]
    alignment = max(frac_sharing(lefts), frac_sharing(centers), frac_sharing(rights))

    mx, my = 0.02 * w, 0.02 * h
    inside = sum(
        1
        for s in spans
        if s.bbox[0] >= mx
        and s.bbox[1] >= my
        and s.bbox[0] + s.bbox[2] <= w - mx
        and s.bbox[1] + s.bbox[3] <= h - my
    )
    margin = inside / n
    return 0.5 * alignment + 0.5 * margin


def usability_rate(issue_counts: list[int], k: int = 3) -> float:
    """Fraction of entries with strictly fewer than k issue points."""
    if not issue_counts:
        raise ValueError("issue_counts must be nonempty")
    if any(c < 0 for c in issue_counts):
        raise ValueError("issue counts must be >= 0")
    return sum(1 for c in issue_counts if c < k) / len(issue_counts)


def satisfaction_rate(issue_counts: list[int]) -> float:
    """Fraction of fully satisfactory entries (zero issues)."""
    if not issue_counts:
        raise ValueError("issue_counts must be nonempty")
    if any(c < 0 for c in issue_counts):
        raise ValueError("issue counts must be >= 0")
    return sum(1 for c in issue_counts if c == 0) / len(issue_counts)


def study_report(issue_counts: list[int], k: int = 3) -> StudyReport:
    return StudyReport(
        usability_rate=usability_rate(issue_counts, k),
        satisfaction_rate=satisfaction_rate(issue_counts),
        issue_counts=list(issue_counts),
    )


@dataclass
class RadarData:
    axes: tuple[str, ...]
    models: list[str]
    raw: dict[str, list[float]]
    normalized: dict[str, list[float]]

    def to_dict(self) -> dict:
        return {
            "axes": list(self.axes),
            "models": self.models,
            "raw": self.raw,
            "normalized": self.normalized,
        }


def emit_radar(
    model_values: dict[str, list[float]], axes: tuple[str, ...] = RADAR_AXES, path=None
) -> RadarData:
    """Per-axis min-max normalization to [0, 1]; axes where all models tie
    map everyone to 1."""
    if len(model_values) < 2:
        raise ValueError("radar needs at least 2 models")
    models = sorted(model_values)
    n_axes = len(axes)
    for m in models:
        if len(model_values[m]) != n_axes:
            raise ValueError(f"model {m!r} must supply {n_axes} values")
    normalized = {m: [] for m in models}
    for i in range(n_axes):
        col = [model_values[m][i] for m in models]
        lo, hi = min(col), max(col)
        for m in models:
            if hi == lo:
                normalized[m].append(1.0)
            else:
                normalized[m].append((model_values[m][i] - lo) / (hi - lo))
    data = RadarData(
        axes=tuple(axes),
        models=models,
        raw={m: list(map(float, model_values[m])) for m in models},
        normalized=normalized,
    )
    if path is not None:
        with open(path, "w") as f:
            json.dump(data.to_dict(), f, indent=2, sort_keys=True)
    return data


def read_issue_counts(path) -> list[int]:
    """JSON-lines annotation file: {"id": ..., "issues": int} per line."""
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(int(json.loads(line)["issues"]))
    return out
