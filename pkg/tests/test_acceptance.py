"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed
in the pytest terminal summary."""

import itertools
import json
import time

import numpy as np
import pytest

from conftest import DEBATE_ID, DEBATE_TEXT, random_bundle, random_model
from cwhybrid import fusion, training
from cwhybrid.cli import main
from cwhybrid.corpus import LabeledSentence
from cwhybrid.embedding import EmbeddingBundle, StubSentenceEncoder, StubWordVectors, build_bundle
from cwhybrid.evaluation import ScoredRun, build_report, macro_f1, positive_f1
from cwhybrid.extraction import (
    AdapterExtractor,
    RuleBasedExtractor,
    extract_triples,
    filter_named_entities,
    gazetteer_recognizer,
    resolve_coreference,
)
from cwhybrid.synthetic import marker_corpus, write_demo_corpus
from oracles import blockwise_relative_error, brute_force_f1, brute_force_macro_f1, straight_line_logit
from test_cli import TABLE_ADAPTER

RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of the calling test under its criterion label."""
    label = request.node.get_closest_marker("criterion").args[0]
    info = {}
    yield info
    failed = request.node.rep_call.failed if hasattr(request.node, "rep_call") else True
    RESULTS[label] = (not failed, info.get("detail", ""))


# ---------------------------------------------------------------------------


@pytest.mark.criterion("1 gradient oracle")
def test_gradient_oracle(criterion):
    start = time.perf_counter()
    step = 1e-6
    worst = 0.0
    for config in range(10):
        rng = np.random.default_rng(500 + config)
        m = random_model(config)
        b = random_bundle(rng, 1 + config % 4)
        y = config % 2
        g = fusion.backward(m, b, y)
        for name in fusion.PARAM_NAMES:
            value = getattr(m, name)
            if np.ndim(value) == 0:
                entries = [None]
            else:
                grad = np.asarray(g.params[name])
                entries = [np.unravel_index(np.argmax(np.abs(grad)), grad.shape)]
                entries += [tuple(int(rng.integers(s)) for s in value.shape) for _ in range(16)]
            analytic, numeric = [], []
            for ix in entries:
                def loss_at(delta):
                    v = value + delta if ix is None else value.copy()
                    if ix is not None:
                        v[ix] += delta
                    return fusion.loss(m.with_params(**{name: v}), b, y)

                numeric.append((loss_at(step) - loss_at(-step)) / (2 * step))
                analytic.append(g.params[name] if ix is None else g.params[name][ix])
            worst = max(worst, blockwise_relative_error(analytic, numeric))
        # input gradients, valid slots only
        for field in ("sentence_vec", "triple_parts"):
            grad = getattr(g, field)
            shape = grad.shape if field == "sentence_vec" else (b.n_triples, 3, b.part_dim)
            entries = [tuple(int(rng.integers(s)) for s in shape) for _ in range(16)]
            analytic, numeric = [], []
            for ix in entries:
                def loss_at(delta):
                    arrays = {"sentence_vec": b.sentence_vec.copy(), "triple_parts": b.triple_parts.copy()}
                    arrays[field][ix] += delta
                    return fusion.loss(m, EmbeddingBundle("x", arrays["sentence_vec"], arrays["triple_parts"], b.mask), y)

                numeric.append((loss_at(step) - loss_at(-step)) / (2 * step))
                analytic.append(grad[ix])
            worst = max(worst, blockwise_relative_error(analytic, numeric))
    elapsed = time.perf_counter() - start
    criterion["detail"] = f"max relative error {worst:.2e} (< 1e-5), {elapsed:.1f}s (< 30s)"
    assert worst < 1e-5
    assert elapsed < 30


@pytest.mark.criterion("2 forward oracle")
def test_forward_oracle(criterion):
    worst = 0.0
    for case in range(100):
        rng = np.random.default_rng(case)
        m = random_model(case % 10, mean_mode="padded" if case % 4 == 3 else "valid")
        b = random_bundle(rng, case % 5)
        _, prob, _ = straight_line_logit(m.params(), b.sentence_vec, b.triple_parts, b.mask, mean_mode=m.mean_mode)
        worst = max(worst, abs(fusion.forward(m, b).prob - prob))
    criterion["detail"] = f"max |p - p_ref| {worst:.2e} over 100 cases (< 1e-12)"
    assert worst < 1e-12


@pytest.mark.criterion("3 metric oracle")
def test_metric_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    cases = 0
    for k in range(200):
        n = int(rng.integers(1, 60))
        if k % 10 == 0:
            y_true = [k // 10 % 2] * n  # single-class truth
        else:
            y_true = rng.integers(0, 2, n).tolist()
        y_pred = [k // 20 % 2] * n if k % 10 == 5 else rng.integers(0, 2, n).tolist()
        worst = max(
            worst,
            abs(macro_f1(y_true, y_pred) - brute_force_macro_f1(y_true, y_pred)),
            abs(positive_f1(y_true, y_pred) - brute_force_f1(y_true, y_pred, 1)),
        )
        cases += 1
    criterion["detail"] = f"max deviation {worst:.1e} over {cases} cases (< 1e-12)"
    assert worst < 1e-12


@pytest.mark.criterion("4 debate-sentence triples")
def test_debate_fixture(criterion, tmp_path):
    sentence = LabeledSentence(DEBATE_ID, DEBATE_TEXT, "en", 1)
    with AdapterExtractor(TABLE_ADAPTER[len("adapter:"):]) as ext:
        ts = extract_triples(ext, sentence)
    assert [(t.subject, t.predicate, t.object) for t in ts] == [
        ("I", "must remind", "him the Democrats have controlled the Congress for the last twenty-two years"),
        ("the Democrats", "have controlled", "the Congress for the last twenty-two years"),
        ("they", "wrote", "all the tax bills"),
    ]
    resolved = resolve_coreference(ts, {"they": "the Democrats"})
    assert str(resolved.triples[2]) == "(the Democrats; wrote; all the tax bills)"
    kept = filter_named_entities(ts, gazetteer_recognizer(["Democrats", "Congress"]), mode="and")
    assert [t.subject for t in kept] == ["the Democrats"]
    assert all(t.subject != "I" for t in kept)
    criterion["detail"] = "3 triples, coreference rewrite, AND filter keeps only the second triple"


@pytest.mark.criterion("5 report arithmetic")
def test_report_arithmetic(criterion):
    table = {"en": (0.84042, 0.86458), "ar": (0.58273, 0.62300), "nl": (0.40866, 0.39832), "es": (0.59975, 0.62371)}
    runs = [ScoredRun("LM", "lm", lang, "devtest", lm) for lang, (lm, _) in table.items()]
    runs += [ScoredRun("LM+Triples", "fused", lang, "devtest", f) for lang, (_, f) in table.items()]
    gains = {g.language: g.delta for g in build_report(runs).gains}
    assert gains == {"en": "+2.416", "ar": "+4.027", "nl": "-1.034", "es": "+2.396"}
    criterion["detail"] = " ".join(f"{k}={v}" for k, v in gains.items())


@pytest.mark.criterion("6 synthetic triple signal")
def test_synthetic_signal(criterion):
    start = time.perf_counter()
    rows = marker_corpus(400, seed=11)
    ext = RuleBasedExtractor()
    enc, wv = StubSentenceEncoder(21), StubWordVectors(22)
    data = [(build_bundle(enc, wv, s, extract_triples(ext, s)), s.label) for s in rows]
    # the marker word only ever appears in the object of the extracted triple
    for s, (b, _) in zip(rows[:20], data[:20]):
        marker = s.text.split()[3]
        (triple,) = extract_triples(ext, s).triples
        assert marker in triple.object.split() and marker not in triple.subject + triple.predicate
    train_set, dev_set, held_out = data[:260], data[260:300], data[300:]
    cfg = training.TrainConfig(epochs=5, seed=3)
    fused = training.train(fusion.init(7), train_set, dev_set, cfg)
    lm = training.ablate_lm_only(fusion.init(7), train_set, dev_set, cfg)
    y = [label for _, label in held_out]
    fused_f1 = macro_f1(y, [p for *_, p in training.predict(fused.best_model, [b for b, _ in held_out])])
    lm_f1 = macro_f1(y, [p for *_, p in training.predict(lm.best_model, [b.without_triples() for b, _ in held_out])])
    elapsed = time.perf_counter() - start
    criterion["detail"] = f"fused {fused_f1:.3f} (>= 0.95), LM-only {lm_f1:.3f} (<= 0.60), {elapsed:.1f}s (< 120s)"
    assert fused_f1 >= 0.95
    assert lm_f1 <= 0.60
    assert elapsed < 120


@pytest.mark.criterion("7 pipeline determinism")
def test_pipeline_determinism(criterion, tmp_path):
    splits = write_demo_corpus(tmp_path / "data", n=100, seed=8)
    outputs = []
    for run in ("a", "b"):
        out = tmp_path / f"out-{run}"
        config = tmp_path / f"config-{run}.json"
        config.write_text(json.dumps({
            "splits": splits,
            "provider": {"kind": "stub", "seed": 4},
            "model": {"hidden": 64, "init_seed": 1},
            "train": {"seed": 2},
            "output_dir": str(out),
        }))
        for command in ("extract", "featurize", "train", "predict"):
            assert main([command, "--config", str(config)]) == 0
        outputs.append(out)
    compared = []
    for rel in sorted(p.relative_to(outputs[0]) for p in outputs[0].rglob("*") if p.is_file()):
        if rel.name in ("config.json", "timing.json"):
            continue
        assert (outputs[0] / rel).read_bytes() == (outputs[1] / rel).read_bytes(), str(rel)
        compared.append(str(rel))
    kinds = {".cwb", ".cwfm", ".json", ".tsv"}
    assert kinds <= {p[p.rfind("."):] for p in compared}
    criterion["detail"] = f"{len(compared)} artifacts byte-identical"


@pytest.mark.criterion("8 triple-order invariance")
def test_triple_order_invariance(criterion):
    worst = 0.0
    checked = 0
    for case in range(10):
        rng = np.random.default_rng(900 + case)
        m = random_model(case)
        n = 2 + case % 3
        b = random_bundle(rng, n)
        base = fusion.forward(m, b).prob
        for perm in itertools.permutations(range(n)):
            parts = b.triple_parts.copy()
            parts[:n] = b.triple_parts[list(perm)]
            worst = max(worst, abs(fusion.forward(m, EmbeddingBundle("p", b.sentence_vec, parts, b.mask)).prob - base))
            checked += 1
    criterion["detail"] = f"max change {worst:.1e} over {checked} permutations (< 1e-12)"
    assert worst < 1e-12


@pytest.mark.criterion("9 integrated-gradients completeness")
def test_ig_completeness(criterion):
    worst = 0.0
    for case in range(20):
        rng = np.random.default_rng(300 + case)
        m = random_model(case)
        b = random_bundle(rng, case % 5)
        attr = fusion.integrated_gradients(m, b, steps=512)
        worst = max(worst, abs(attr.completeness_residual))
        assert np.all(attr.triple_parts[~b.mask] == 0.0)
    # linear surrogate: attribution equals gradient times input difference
    rng = np.random.default_rng(1)
    m = random_model(3)
    b = random_bundle(rng, 3)
    attr = fusion.integrated_gradients(m, b, steps=512, linear=True)
    _, gs, gp = fusion.logit_input_gradient(m, b.sentence_vec[None], b.triple_parts[None], b.mask[None], linear=True)
    linear_dev = max(np.abs(attr.sentence_vec - gs[0] * b.sentence_vec).max(), np.abs(attr.triple_parts - gp[0] * b.triple_parts).max())
    criterion["detail"] = (
        f"max residual {worst:.1e} over 20 cases (< 1e-3); linear surrogate deviation {linear_dev:.1e}, "
        f"residual {abs(attr.completeness_residual):.1e}"
    )
    assert worst < 1e-3
    # equality up to float summation order across the 512 identical path gradients
    assert linear_dev < 1e-12
    assert abs(attr.completeness_residual) < 1e-12


@pytest.mark.criterion("10 training-loop contract")
def test_training_contract(criterion, monkeypatch):
    rng = np.random.default_rng(0)
    data = [(random_bundle(rng, i % 5, 12, 8, 1.0, f"b{i}"), i % 2) for i in range(40)]
    dims = dict(h=8, part_dim=8, sentence_dim=12)
    cfg = training.TrainConfig(seed=1)
    plain = training.train(fusion.init(0, **dims), data[:30], data[30:], cfg)
    assert len(plain.epochs) == 5

    scripted = iter([0.40, 0.55, 0.52, 0.55, 0.50])
    monkeypatch.setattr(training, "evaluate_macro_f1", lambda *a, **k: next(scripted))
    rec = training.train(fusion.init(0, **dims), data[:30], data[30:], cfg)
    assert [e.selection_macro_f1 for e in rec.epochs] == [0.40, 0.55, 0.52, 0.55, 0.50]
    assert rec.best_epoch == 2
    # the retained snapshot is the model after epoch 2
    monkeypatch.undo()
    monkeypatch.setattr(training, "select_best_epoch", lambda scores: len(scores))
    two = training.train(fusion.init(0, **dims), data[:30], data[30:], training.TrainConfig(epochs=2, seed=1))
    assert two.best_epoch == 2
    assert fusion.model_to_bytes(rec.best_model) == fusion.model_to_bytes(two.best_model)
    criterion["detail"] = "5 evaluation points; scripted [0.40,0.55,0.52,0.55,0.50] -> best epoch 2"
