import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cwhybrid.corpus import LabeledSentence  # noqa: E402
from cwhybrid.embedding import EmbeddingBundle  # noqa: E402
from cwhybrid.extraction import Triple, TripleSet  # noqa: E402
from cwhybrid import fusion  # noqa: E402

DEBATE_ID = "debate-1976"
DEBATE_TEXT = (
    "I must remind him the Democrats have controlled the Congress for the last "
    "twenty-two years and they wrote all the tax bills."
)
# what a neural OpenIE system produces for the debate sentence
DEBATE_TRIPLES = [
    ("I", "must remind", "him the Democrats have controlled the Congress for the last twenty-two years"),
    ("the Democrats", "have controlled", "the Congress for the last twenty-two years"),
    ("they", "wrote", "all the tax bills"),
]


@pytest.fixture
def debate_sentence():
    return LabeledSentence(DEBATE_ID, DEBATE_TEXT, "en", 1)


@pytest.fixture
def debate_triples():
    return TripleSet(
        DEBATE_ID,
        tuple(Triple(s, p, o, DEBATE_ID, rank) for rank, (s, p, o) in enumerate(DEBATE_TRIPLES)),
    )


def random_bundle(rng, n_valid, sentence_dim=768, part_dim=300, scale=0.3, source_id="x"):
    parts = np.zeros((4, 3, part_dim))
    parts[:n_valid] = rng.normal(0.0, scale, (n_valid, 3, part_dim))
    sent = rng.normal(0.0, 3.0 / np.sqrt(sentence_dim), sentence_dim)
    return EmbeddingBundle(source_id, sent, parts, np.arange(4) < n_valid)


def random_model(seed, h=256, part_dim=300, sentence_dim=768, bias_scale=0.1, mean_mode="valid"):
    """Glorot weights plus random (nonzero) biases so no layer is homogeneous."""
    rng = np.random.default_rng(10_000 + seed)
    m = fusion.init(seed, h, part_dim, sentence_dim, mean_mode=mean_mode)
    biases = {
        name: rng.normal(0.0, bias_scale, np.shape(getattr(m, name)))
        for name in ("b_part", "b_proj", "b_hid")
    }
    biases["b_out"] = float(rng.normal(0.0, bias_scale))
    return m.with_params(**biases)


# -- acceptance reporting -----------------------------------------------------

def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    setattr(item, "rep_" + rep.when, rep)


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    results = test_acceptance.RESULTS if "test_acceptance" in sys.modules else {}
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(results, key=lambda s: int(s.split()[0])):
        ok, detail = results[label]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
