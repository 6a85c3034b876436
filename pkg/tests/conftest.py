import numpy as np
import pytest

from posterlab.corpus import generate_corpus, render_poster
from posterlab.filtering import filter_record
from posterlab.pairs import PairBuildConfig, make_pairs


@pytest.fixture(scope="session")
def small_corpus():
    """30 records across all buckets, rendered, seed-pinned."""
    return generate_corpus(7, 30)


@pytest.fixture(scope="session")
def one_record(small_corpus):
    return small_corpus[0]


@pytest.fixture(scope="session")
def filtered(small_corpus):
    out = []
    for rec, img in small_corpus:
        out.append((rec, img, filter_record(img)))
    return out


@pytest.fixture(scope="session")
def pair_set(filtered):
    """All training pairs for the small corpus plus their in-memory images."""
    store: dict[str, np.ndarray] = {}
    pairs = []
    cfg = PairBuildConfig(seed=0)
    for rec, img, dec in filtered:
        if not dec.keep:
            continue
        pairs.extend(
            make_pairs(rec, img, dec.ocr, cfg, aesthetic=dec.report.score, image_store=store)
        )
    return pairs, store


def rerender(record):
    return render_poster(record)


def pytest_terminal_summary(terminalreporter):
    """Echo the per-criterion verdict lines after the run, since pytest
    swallows stdout of passing tests."""
    import sys

    for name in ("tests.test_acceptance", "test_acceptance"):
        mod = sys.modules.get(name)
        if mod is not None and getattr(mod, "RESULT_LINES", None):
            terminalreporter.section("acceptance criteria")
            for line in sorted(set(mod.RESULT_LINES)):
                terminalreporter.write_line(line)
            break
