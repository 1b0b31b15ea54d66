import hashlib
import sys
import textwrap

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cwhybrid.corpus import LabeledSentence
from cwhybrid.embedding import (
    AdapterSentenceEncoder,
    EmbeddingBundle,
    FileWordVectors,
    SentenceEncoder,
    StubSentenceEncoder,
    StubWordVectors,
    WordVectors,
    build_bundle,
    cache_bundles,
    encode_part,
    load_bundles,
    simple_tokenize,
    stub_sentence_encoder,
)
from cwhybrid.errors import ConfigurationError, IntegrityError, ValidationError
from cwhybrid.extraction import RuleBasedExtractor, TripleSet, extract_triples

# regression fixture: stub encoder, seed 0, texts "sentence 0" .. "sentence 99"
STUB_CORPUS_SHA256 = "973b7617a8b495bd87e2533e95f6e683242d4ab41562767af3d3ef902a4ac2c1"


class TableWords:
    """Word vectors from an explicit table, for exact pooling checks."""

    name = "table"
    tokenizer = staticmethod(simple_tokenize)

    def __init__(self, table, dim):
        self.table, self.dim = table, dim

    def lookup(self, token):
        return self.table.get(token, np.zeros(self.dim))


def test_tokenizer_strips_punctuation():
    assert simple_tokenize(' "Taxes," he said. ') == ["Taxes", "he", "said"]


def test_encode_part_single_token():
    wv = StubWordVectors(3)
    assert np.array_equal(encode_part(wv, "wrote"), wv.lookup("wrote"))


def test_encode_part_mean_of_two():
    u, v = np.arange(4.0), np.array([1.0, -1.0, 0.5, 2.0])
    wv = TableWords({"a": u, "b": v}, 4)
    assert np.array_equal(encode_part(wv, "a b"), (u + v) / 2)


def test_encode_part_empty():
    out = encode_part(StubWordVectors(0), "")
    assert out.shape == (300,) and not out.any()


@given(st.text(alphabet="abcdefgh", min_size=1, max_size=6), st.text(alphabet="abcdefgh", min_size=1, max_size=6))
@settings(max_examples=30)
def test_encode_part_linearity(t1, t2):
    wv = StubWordVectors(1)
    pooled = encode_part(wv, f"{t1} {t2}")
    assert np.allclose(pooled, (encode_part(wv, t1) + encode_part(wv, t2)) / 2, rtol=0, atol=1e-15)


def test_stub_encoder_deterministic_and_unit_norm():
    enc = stub_sentence_encoder(5)
    a, b = enc.encode("Taxes rose."), StubSentenceEncoder(5).encode("Taxes rose.")
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9
    assert not np.array_equal(a, StubSentenceEncoder(6).encode("Taxes rose."))


def test_stub_encoder_regression_corpus():
    enc = StubSentenceEncoder(0)
    vecs = np.stack([enc.encode(f"sentence {i}") for i in range(100)])
    assert len({v.tobytes() for v in vecs}) == 100
    assert hashlib.sha256(vecs.astype("<f8").tobytes()).hexdigest() == STUB_CORPUS_SHA256
    assert np.allclose(vecs[0, :3], [0.02457385, 0.04975505, -0.06265271], atol=1e-8)


def test_providers_conform_to_interfaces():
    for obj in (StubSentenceEncoder(0),):
        assert isinstance(obj.name, str) and obj.dim == 768 and callable(obj.encode)
    for obj in (StubWordVectors(0),):
        assert isinstance(obj.name, str) and obj.dim == 300 and callable(obj.lookup) and callable(obj.tokenizer)
    # protocol annotations are for type checkers; this just keeps the names importable
    assert SentenceEncoder and WordVectors


def _sentence():
    return LabeledSentence("s1", "the Democrats have controlled the Congress and they wrote all the tax bills")


def test_build_bundle_shapes_and_mask():
    s = _sentence()
    ts = extract_triples(RuleBasedExtractor(), s)
    enc, wv = StubSentenceEncoder(0), StubWordVectors(0)
    b = build_bundle(enc, wv, s, ts)
    assert b.sentence_vec.shape == (768,)
    assert b.triple_parts.shape == (4, 3, 300)
    assert b.mask.tolist() == [True, True, False, False]
    assert np.array_equal(b.sentence_vec, enc.encode(s.text))
    assert np.array_equal(b.triple_parts[1, 1], encode_part(wv, "wrote"))
    assert not b.triple_parts[2:].any()


def test_build_bundle_no_triples():
    s = LabeledSentence("y", "Yes.")
    b = build_bundle(StubSentenceEncoder(0), StubWordVectors(0), s, TripleSet("y"))
    assert not b.mask.any() and not b.triple_parts.any()


def test_build_bundle_id_mismatch():
    with pytest.raises(ValidationError):
        build_bundle(StubSentenceEncoder(0), StubWordVectors(0), _sentence(), TripleSet("other"))


def test_build_bundle_dimension_mismatch():
    class Bad(StubSentenceEncoder):
        def encode(self, text):
            return np.zeros(10)

    with pytest.raises(ConfigurationError):
        build_bundle(Bad(0), StubWordVectors(0), LabeledSentence("y", "Yes."), TripleSet("y"))


def test_bundle_rejects_nonzero_masked_slot():
    parts = np.zeros((4, 3, 5))
    parts[3, 0, 0] = 1.0
    with pytest.raises(ValidationError):
        EmbeddingBundle("a", np.zeros(4), parts, [True, False, False, False])


def test_bundle_rejects_nan():
    with pytest.raises(ValidationError):
        EmbeddingBundle("a", np.array([np.nan, 0.0]), np.zeros((4, 3, 2)), np.zeros(4, bool))


def test_file_word_vectors(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("2 3\ntax 1 2 3\nbills 0.5 0.5 -1\n", encoding="utf-8")
    wv = FileWordVectors(path)
    assert wv.dim == 3
    assert np.array_equal(encode_part(wv, "tax bills"), [0.75, 1.25, 1.0])
    assert np.array_equal(wv.lookup("unknown"), np.zeros(3))


def test_file_word_vectors_ragged(tmp_path):
    path = tmp_path / "vec.txt"
    path.write_text("a 1 2\nb 1\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        FileWordVectors(path)


def _bundles():
    rng = np.random.default_rng(0)
    out = []
    for i, n in enumerate([0, 2, 4]):
        parts = np.zeros((4, 3, 300))
        parts[:n] = rng.normal(size=(n, 3, 300))
        out.append(EmbeddingBundle(f"id-{i}-é", rng.normal(size=768), parts, np.arange(4) < n))
    return out


def test_cache_round_trip(tmp_path):
    path = tmp_path / "f.cwb"
    bundles = _bundles()
    assert cache_bundles(bundles, path) == 3
    assert path.read_bytes()[:4] == b"CWB1"
    loaded = load_bundles(path)
    assert len(loaded) == 3
    for a, b in zip(bundles, loaded):
        assert a.equals(b)


def test_cache_empty(tmp_path):
    path = tmp_path / "f.cwb"
    assert cache_bundles([], path) == 0
    assert load_bundles(path) == []


def test_cache_truncated(tmp_path):
    path = tmp_path / "f.cwb"
    cache_bundles(_bundles(), path)
    data = path.read_bytes()
    path.write_bytes(data[:-100])
    with pytest.raises(IntegrityError):
        load_bundles(path)


def test_cache_bit_flip(tmp_path):
    path = tmp_path / "f.cwb"
    cache_bundles(_bundles(), path)
    data = bytearray(path.read_bytes())
    data[200] ^= 0x01
    path.write_bytes(bytes(data))
    with pytest.raises(IntegrityError, match="checksum"):
        load_bundles(path)


ENCODER = textwrap.dedent(
    """
    import json, sys
    for line in sys.stdin:
        req = json.loads(line)
        vec = [float(len(req["text"]))] + [0.0] * 7
        print(json.dumps({"id": req["id"], "vector": vec}), flush=True)
    """
)


def test_adapter_encoder(tmp_path):
    script = tmp_path / "enc.py"
    script.write_text(ENCODER)
    enc = AdapterSentenceEncoder([sys.executable, str(script)], dim=8)
    try:
        s = LabeledSentence("a", "they wrote all the tax bills")
        b = build_bundle(enc, StubWordVectors(0), s, extract_triples(RuleBasedExtractor(), s))
        assert b.sentence_vec[0] == len(s.text) and b.sentence_dim == 8
    finally:
        enc.close()
