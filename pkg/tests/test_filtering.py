import numpy as np
import pytest

from posterlab.corpus import PALETTE, render_poster
from posterlab.filtering import (
    AESTHETIC_WEIGHTS,
    COVERAGE_BAND,
    DetectedSpan,
    _pack,
    aesthetic_score,
    filter_record,
    read_decisions,
    run_ocr,
    write_decisions,
)
from posterlab.font import DEFAULT_FONT


def test_blank_image_no_detections():
    img = np.full((64, 64, 3), 200, dtype=np.uint8)
    assert run_ocr(img) == []


def test_ocr_exact_on_corpus(small_corpus):
    for rec, img in small_corpus:
        det = run_ocr(img)
        truth = {(s.content, tuple(s.bbox)) for s in rec.spans}
        found = {(d.text, tuple(d.bbox)) for d in det}
        assert truth == found, rec.id


def test_ocr_confidence_is_one_in_exact_mode(small_corpus):
    _, img = small_corpus[0]
    for d in run_ocr(img):
        assert d.confidence == 1.0


def test_ocr_tolerant_mode_handles_mild_noise(small_corpus):
    rec, img = small_corpus[0]
    noisy = img.astype(np.int16)
    rng = np.random.default_rng(0)
    noisy += rng.integers(-3, 4, size=noisy.shape)
    noisy = np.clip(noisy, 0, 255).astype(np.uint8)
    texts = {d.text for d in run_ocr(noisy, exact=False)}
    assert {s.content for s in rec.spans} <= texts


def test_ocr_scaled_glyphs():
    # build a two-scale image by hand on a white background
    img = np.full((64, 96, 3), 255, dtype=np.uint8)
    for text, scale, y in (("BIG", 2, 4), ("SMALL", 1, 40)):
        m = DEFAULT_FONT.render_text_mask(text, scale)
        img[y : y + m.shape[0], 4 : 4 + m.shape[1]][m] = (10, 10, 120)
    found = {d.text for d in run_ocr(img)}
    assert found == {"BIG", "SMALL"}


def test_aesthetic_formula_dual_implementation(small_corpus):
    # independent recomputation of the published combination rule
    for rec, img in small_corpus[:8]:
        det = run_ocr(img)
        rep = aesthetic_score(img, det)
        lum = (0.2126 * img[..., 0] + 0.7152 * img[..., 1] + 0.0722 * img[..., 2]) / 255.0
        contrast = min(1.0, float(lum.std()) / 0.5)
        lo, hi = COVERAGE_BAND
        cov = rep.coverage
        cov_term = cov / lo if cov < lo else (1.0 if cov <= hi else (1 - cov) / (1 - hi))
        w0, w1, w2 = AESTHETIC_WEIGHTS
        expected = np.clip(w0 * contrast + w1 * rep.balance + w2 * cov_term, 0, 1)
        assert rep.score == pytest.approx(float(expected), abs=1e-9)


def test_uniform_image_scores_low():
    img = np.full((64, 64, 3), 128, dtype=np.uint8)
    rep = aesthetic_score(img, [])
    assert rep.contrast == 0.0
    assert rep.coverage == 0.0
    assert rep.score <= 0.3


def test_balance_symmetric_ink():
    img = np.full((32, 32, 3), 255, dtype=np.uint8)
    img[10:14, 4:8] = 0      # left blob, 16 px
    img[10:14, 24:28] = 0    # mirrored right blob, 16 px
    rep = aesthetic_score(img, [])
    assert rep.balance == pytest.approx(1.0)


def test_balance_one_sided_ink():
    img = np.full((32, 32, 3), 255, dtype=np.uint8)
    img[10:14, 4:8] = 0
    rep = aesthetic_score(img, [])
    assert rep.balance == pytest.approx(0.0)


def test_filter_reasons():
    blank = np.full((64, 64, 3), 128, dtype=np.uint8)
    d = filter_record(blank)
    assert not d.keep and d.reason == "no_text"


def test_threshold_equality_keeps():
    img = np.full((64, 64, 3), 255, dtype=np.uint8)
    m = DEFAULT_FONT.render_text_mask("HELLO", 1)
    img[20 : 20 + m.shape[0], 8 : 8 + m.shape[1]][m] = (0, 0, 0)
    rep = aesthetic_score(img, run_ocr(img))
    # rejection is strict <, so tau exactly equal to the score keeps
    d = filter_record(img, tau=rep.score)
    assert d.keep


def test_zero_area_image_rejected():
    with pytest.raises(ValueError):
        aesthetic_score(np.zeros((0, 0, 3), dtype=np.uint8), [])


def test_decisions_round_trip(tmp_path, filtered):
    decisions = [(rec.id, dec) for rec, _, dec in filtered]
    path = tmp_path / "d.jsonl"
    write_decisions(decisions, path)
    back = read_decisions(path)
    assert len(back) == len(decisions)
    for row, (rid, dec) in zip(back, decisions):
        assert row["id"] == rid
        assert row["keep"] == dec.keep
        assert row["report"]["score"] == pytest.approx(dec.report.score)
        assert [DetectedSpan.from_dict(s).text for s in row["ocr"]] == [
            s.text for s in dec.ocr
        ]


def test_pack_is_injective_on_palette():
    colors = np.array(list(PALETTE.values()), dtype=np.uint8)[None]
    packed = _pack(colors)[0]
    assert len(set(packed.tolist())) == len(PALETTE)
