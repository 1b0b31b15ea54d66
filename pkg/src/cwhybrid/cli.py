"""``cw`` command line: extract | featurize | train | eval | predict | explain.

Every subcommand reads one JSON config, writes its artifacts under
``output_dir`` and communicates with the other stages only through files.

Exit codes: 0 success, 1 other pipeline error, 2 configuration or missing
input, 3 featurization failure, 4 missing model, 5 unknown sentence id.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import corpus, embedding, evaluation, extraction, fusion, training
from .errors import ConfigurationError, CWError, IntegrityError, ModelFormatError, ValidationError

log = logging.getLogger("cwhybrid")

DEFAULTS = {
    "language": "en",
    "splits": {"train": None, "dev": None, "devtest": None, "test": None},
    "extractor": "rule",
    "ne_filter": {"mode": "off", "gazetteer": None},
    "coref_map": None,
    "provider": {"kind": "stub", "seed": 0, "wordvec_file": None, "encoder_adapter": None, "sentence_dim": 768},
    "model": {"hidden": 256, "init_seed": 0, "init_scale": 1.0, "mean_mode": "valid"},
    "train": {f.name: f.default for f in fields(training.TrainConfig)},
    "eval": {"splits": ["devtest"]},
    "predict": {"split": "test", "run_id": "HYBRID1"},
    "explain": {"steps": 512},
    "output_dir": "cw-out",
}

PATH_KEYS = ("coref_map", "output_dir")


class CLIExit(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# Config
# ---------------------------------------------------------------------------

def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(cfg: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigurationError(f"--set expects key=value, got {assignment!r}")
    key, raw = assignment.split("=", 1)
    node = cfg
    parts = key.split(".")
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"--set {key}: {part!r} is not a section")
    node[parts[-1]] = _parse_value(raw)


def _resolve(base: Path, value):
    if value is None:
        return None
    return str((base / value).resolve()) if not Path(value).is_absolute() else value


def load_config(path: str | Path, overrides=()) -> dict:
    """Read a config file, apply defaults and ``--set`` overrides, absolutize paths."""
    path = Path(path)
    if not path.is_file():
        raise CLIExit(2, f"config file not found: {path}")
    try:
        user = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CLIExit(2, f"{path}: invalid JSON: {exc}") from exc
    cfg = _merge(DEFAULTS, user)
    for assignment in overrides:
        apply_override(cfg, assignment)
    base = path.parent
    cfg["splits"] = {k: _resolve(base, v) for k, v in cfg["splits"].items()}
    for key in PATH_KEYS:
        cfg[key] = _resolve(base, cfg[key])
    cfg["ne_filter"]["gazetteer"] = _resolve(base, cfg["ne_filter"]["gazetteer"])
    cfg["provider"]["wordvec_file"] = _resolve(base, cfg["provider"]["wordvec_file"])
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    for name in corpus.LABELED_SPLITS:
        p = cfg["splits"].get(name)
        if not p:
            raise CLIExit(2, f"config: splits.{name} is required")
    for name, p in cfg["splits"].items():
        if p and not Path(p).is_file():
            raise CLIExit(2, f"corpus file not found: {p}")
    ext = cfg["extractor"]
    if not (ext == "rule" or (isinstance(ext, str) and ext.startswith("adapter:") and len(ext) > 8)):
        raise CLIExit(2, f"config: extractor must be 'rule' or 'adapter:<command>', got {ext!r}")
    if cfg["ne_filter"]["mode"] not in ("off", "or", "and"):
        raise CLIExit(2, f"config: ne_filter.mode must be off/or/and")
    prov = cfg["provider"]
    if prov["kind"] == "stub":
        pass
    elif prov["kind"] == "real":
        if not prov["wordvec_file"] or not prov["encoder_adapter"]:
            raise CLIExit(2, "config: real provider needs wordvec_file and encoder_adapter")
    else:
        raise CLIExit(2, f"config: provider.kind must be 'stub' or 'real'")
    for key in ("coref_map",):
        if cfg[key] and not Path(cfg[key]).is_file():
            raise CLIExit(2, f"file not found: {cfg[key]}")
    if cfg["ne_filter"]["gazetteer"] and not Path(cfg["ne_filter"]["gazetteer"]).is_file():
        raise CLIExit(2, f"file not found: {cfg['ne_filter']['gazetteer']}")
    try:
        train_config(cfg)
    except (ConfigurationError, TypeError) as exc:
        raise CLIExit(2, f"config: train: {exc}") from exc


def train_config(cfg: dict) -> training.TrainConfig:
    return training.TrainConfig(**cfg["train"])


def _out(cfg: dict, *parts: str) -> Path:
    path = Path(cfg["output_dir"]).joinpath(*parts)
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def echo_config(cfg: dict) -> None:
    _out(cfg, "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _splits(cfg: dict) -> corpus.DatasetSplits:
    try:
        return corpus.load_splits({k: v for k, v in cfg["splits"].items() if v}, cfg["language"])
    except ConfigurationError as exc:
        raise CLIExit(2, str(exc)) from exc


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _extractor(cfg: dict):
    spec = cfg["extractor"]
    if spec == "rule":
        return extraction.RuleBasedExtractor([cfg["language"]])
    return extraction.AdapterExtractor(spec[len("adapter:"):], [cfg["language"]])


def _coref_maps(cfg: dict) -> dict:
    if not cfg["coref_map"]:
        return {}
    return json.loads(Path(cfg["coref_map"]).read_text(encoding="utf-8"))


def _recognizer(cfg: dict):
    gaz = cfg["ne_filter"]["gazetteer"]
    if gaz:
        names = Path(gaz).read_text(encoding="utf-8").splitlines()
        return extraction.gazetteer_recognizer(n.strip() for n in names)
    return extraction.capitalized_recognizer


def cmd_extract(cfg: dict) -> int:
    splits = _splits(cfg)
    ext = _extractor(cfg)
    coref = _coref_maps(cfg)
    mode = cfg["ne_filter"]["mode"]
    recognizer = _recognizer(cfg) if mode != "off" else None
    everything = []
    try:
        for name, rows in splits.items():
            if not rows:
                continue
            sets = []
            for s in rows:
                ts = extraction.extract_triples(ext, s)
                antecedents = {**coref.get("*", {}), **coref.get(s.id, {})}
                ts = extraction.resolve_coreference(ts, antecedents)
                if recognizer is not None:
                    ts = extraction.filter_named_entities(ts, recognizer, mode)
                sets.append(ts)
            extraction.write_triples_jsonl(sets, _out(cfg, "triples", f"{name}.jsonl"))
            print(f"coverage@{extraction.MAX_TRIPLES}[{name}]={extraction.coverage_stats(sets):.3f}")
            everything.extend(sets)
    finally:
        if isinstance(ext, extraction.AdapterExtractor):
            ext.close()
    print(f"coverage@{extraction.MAX_TRIPLES}={extraction.coverage_stats(everything):.3f}")
    echo_config(cfg)
    return 0


def _providers(cfg: dict):
    prov = cfg["provider"]
    if prov["kind"] == "stub":
        seed = int(prov["seed"])
        return embedding.StubSentenceEncoder(seed, prov["sentence_dim"]), embedding.StubWordVectors(seed)
    return (
        embedding.AdapterSentenceEncoder(prov["encoder_adapter"], prov["sentence_dim"]),
        embedding.FileWordVectors(prov["wordvec_file"]),
    )


def cmd_featurize(cfg: dict) -> int:
    splits = _splits(cfg)
    enc, wv = _providers(cfg)
    try:
        for name, rows in splits.items():
            if not rows:
                continue
            tpath = _out(cfg, "triples", f"{name}.jsonl")
            if not tpath.is_file():
                raise CLIExit(3, f"triples file not found: {tpath} (run 'cw extract' first)")
            sets = extraction.read_triples_jsonl(tpath)
            bundles = embedding.featurize(enc, wv, rows, sets)
            n = embedding.cache_bundles(bundles, _out(cfg, "features", f"{name}.cwb"), enc.dim, wv.dim)
            print(f"{name}: {n} bundles")
    except (ConfigurationError, IntegrityError, ValidationError) as exc:
        raise CLIExit(3, str(exc)) from exc
    finally:
        if isinstance(enc, embedding.AdapterSentenceEncoder):
            enc.close()
    echo_config(cfg)
    return 0


def _features(cfg: dict, name: str) -> list[embedding.EmbeddingBundle]:
    path = _out(cfg, "features", f"{name}.cwb")
    if not path.is_file():
        raise CLIExit(3, f"feature cache not found: {path} (run 'cw featurize' first)")
    try:
        return embedding.load_bundles(path)
    except IntegrityError as exc:
        raise CLIExit(3, str(exc)) from exc


def _labeled(cfg: dict, splits: corpus.DatasetSplits, name: str):
    labels = {s.id: s.label for s in getattr(splits, name)}
    bundles = _features(cfg, name)
    try:
        return [(b, labels[b.source_id]) for b in bundles]
    except KeyError as exc:
        raise CLIExit(3, f"feature cache {name} has unknown id {exc}") from exc


ROLES = ("fused", "lm")


def cmd_train(cfg: dict) -> int:
    splits = _splits(cfg)
    tcfg = train_config(cfg)
    train_data = _labeled(cfg, splits, "train")
    selection = _labeled(cfg, splits, tcfg.selection_split)
    mcfg = cfg["model"]
    sdim, pdim = train_data[0][0].sentence_dim, train_data[0][0].part_dim
    timing = {}
    for role, fn in (("fused", training.train), ("lm", training.ablate_lm_only)):
        model0 = fusion.init(mcfg["init_seed"], mcfg["hidden"], pdim, sdim, mcfg["init_scale"], mcfg["mean_mode"])
        record = fn(model0, train_data, selection, tcfg)
        record.model_path = f"models/{role}.cwfm"
        fusion.save_model(record.best_model, _out(cfg, record.model_path))
        record.save(_out(cfg, "records", f"{role}.json"))
        timing[role] = record.wall_clock
        print(f"{role}: best epoch {record.best_epoch}, {tcfg.selection_split} macro-F1 {record.best_macro_f1:.4f}")
    # timings live outside the records so those stay byte-reproducible
    _out(cfg, "records", "timing.json").write_text(json.dumps(timing, indent=2, sort_keys=True) + "\n")
    echo_config(cfg)
    return 0


def _model(cfg: dict, role: str) -> fusion.FusionModel:
    path = _out(cfg, "models", f"{role}.cwfm")
    if not path.is_file():
        raise CLIExit(4, f"model not found: {path} (run 'cw train' first)")
    try:
        return fusion.load_model(path)
    except ModelFormatError as exc:
        raise CLIExit(4, f"{path}: {exc}") from exc


def _role_bundles(role: str, bundles):
    return [b.without_triples() for b in bundles] if role == "lm" else list(bundles)


def cmd_eval(cfg: dict) -> int:
    splits = _splits(cfg)
    threshold = cfg["train"]["threshold"]
    models = {role: _model(cfg, role) for role in ROLES}
    runs = []
    for name in cfg["eval"]["splits"]:
        if name not in corpus.LABELED_SPLITS:
            raise CLIExit(2, f"config: eval split {name!r} is not a labeled split")
        data = _labeled(cfg, splits, name)
        y_true = [y for _, y in data]
        for role in ROLES:
            preds = training.predict(models[role], _role_bundles(role, [b for b, _ in data]), threshold)
            system = "LM+Triples" if role == "fused" else "LM"
            runs.append(evaluation.ScoredRun.from_predictions(
                system, role, cfg["language"], name, y_true, [label for *_, label in preds]
            ))
    report = evaluation.build_report(runs)
    report.write(_out(cfg, "report"))
    sys.stdout.write(report.to_text())
    echo_config(cfg)
    return 0


def cmd_predict(cfg: dict) -> int:
    _splits(cfg)
    name = cfg["predict"]["split"]
    if name not in corpus.ALL_SPLITS or (name == "test" and not cfg["splits"].get("test")):
        raise CLIExit(2, f"config: no corpus configured for predict split {name!r}")
    model = _model(cfg, "fused")
    preds = training.predict(model, _features(cfg, name), cfg["train"]["threshold"])
    n = evaluation.write_submission(
        [(sid, label) for sid, _, label in preds], cfg["predict"]["run_id"], _out(cfg, "submission.tsv")
    )
    print(f"wrote {n} predictions to {_out(cfg, 'submission.tsv')}")
    echo_config(cfg)
    return 0


def cmd_explain(cfg: dict, sentence_id: str) -> int:
    splits = _splits(cfg)
    model = _model(cfg, "fused")
    for name, rows in splits.items():
        if any(s.id == sentence_id for s in rows):
            break
    else:
        raise CLIExit(5, f"unknown sentence id {sentence_id!r}")
    bundle = next((b for b in _features(cfg, name) if b.source_id == sentence_id), None)
    ts = next(
        (t for t in extraction.read_triples_jsonl(_out(cfg, "triples", f"{name}.jsonl")) if t.source_id == sentence_id),
        None,
    )
    if bundle is None or ts is None:
        raise CLIExit(5, f"no features/triples recorded for sentence id {sentence_id!r}")
    attr = fusion.integrated_gradients(model, bundle, steps=int(cfg["explain"]["steps"]))
    ranked = sorted(zip(ts.triples, attr.triple_scores), key=lambda pair: -abs(pair[1]))
    print(f"sentence {sentence_id}: p={fusion.forward(model, bundle).prob:.6f} logit={attr.logit:+.6f}")
    print(f"{'rank':>4} {'score':>12}  triple")
    for i, (triple, score) in enumerate(ranked, start=1):
        print(f"{i:>4} {score:>+12.6f}  {triple}")
    print(f"sentence embedding score {attr.sentence_score:+.6f}")
    print(f"completeness residual {attr.completeness_residual:+.3e}")
    echo_config(cfg)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cw", description="Check-worthiness with sentence + triple fusion.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("extract", "featurize", "train", "eval", "predict", "explain"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config leaf by dotted path, e.g. train.epochs=3")
        if name == "explain":
            p.add_argument("--sentence-id", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        if args.command == "explain":
            return cmd_explain(cfg, args.sentence_id)
        return {
            "extract": cmd_extract,
            "featurize": cmd_featurize,
            "train": cmd_train,
            "eval": cmd_eval,
            "predict": cmd_predict,
        }[args.command](cfg)
    except CLIExit as exc:
        print(f"cw {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except ConfigurationError as exc:
        print(f"cw {args.command}: {exc}", file=sys.stderr)
        return 2
    except CWError as exc:
        print(f"cw {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
