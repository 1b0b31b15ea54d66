"""Loading and validating check-worthiness datasets in the shared-task TSV format.

Files are UTF-8, tab-separated, with a header line and the columns
``sentence_id``, ``text`` and (except for unlabeled test files) ``class_label``
holding ``Yes`` or ``No``.
"""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, TextIO

from .errors import ConfigurationError, ParseError, ValidationError

HEADER_LABELED = ("sentence_id", "text", "class_label")
HEADER_UNLABELED = ("sentence_id", "text")

LABELED_SPLITS = ("train", "dev", "devtest")
ALL_SPLITS = LABELED_SPLITS + ("test",)

_LABELS = {"yes": 1, "no": 0}


@dataclass(frozen=True)
class LabeledSentence:
    id: str
    text: str
    language: str = "en"
    label: int | None = None
    # extra trailing columns, only populated when parsing with passthrough=True
    extra: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.id:
            raise ValidationError("sentence id must be nonempty")
        if not self.text.strip():
            raise ValidationError(f"sentence {self.id!r} has empty text")
        if self.label not in (None, 0, 1):
            raise ValidationError(f"sentence {self.id!r} has non-binary label {self.label!r}")


@dataclass(frozen=True)
class DatasetSplits:
    train: list[LabeledSentence]
    dev: list[LabeledSentence]
    devtest: list[LabeledSentence]
    test: list[LabeledSentence] = field(default_factory=list)
    language: str = "en"

    def __post_init__(self):
        for name in LABELED_SPLITS:
            for row in getattr(self, name):
                if row.label is None:
                    raise ValidationError(f"split {name!r}: sentence {row.id!r} is unlabeled")
        seen: dict[str, str] = {}
        for name in ALL_SPLITS:
            for row in getattr(self, name):
                if row.id in seen:
                    raise ValidationError(
                        f"sentence id {row.id!r} appears in both {seen[row.id]!r} and {name!r}"
                    )
                seen[row.id] = name

    def items(self):
        return [(name, getattr(self, name)) for name in ALL_SPLITS]


def parse_label(value: str, line: int | None = None) -> int:
    try:
        return _LABELS[value.strip().lower()]
    except KeyError:
        raise ValidationError(
            f"unknown class label {value!r}" + (f" at line {line}" if line is not None else "")
        ) from None


def format_label(label: int) -> str:
    return "Yes" if label == 1 else "No"


def parse_tsv(
    content: TextIO | str,
    has_labels: bool = True,
    language: str = "en",
    passthrough: bool = False,
) -> list[LabeledSentence]:
    """Parse a shared-task TSV stream into sentences, preserving row order.

    With ``passthrough=True`` columns past the expected ones are kept in
    ``LabeledSentence.extra`` instead of being rejected.
    """
    if isinstance(content, str):
        content = io.StringIO(content)
    expected = 3 if has_labels else 2
    records: list[LabeledSentence] = []
    ids: set[str] = set()
    header_seen = False
    for lineno, raw in enumerate(content, start=1):
        line = raw.rstrip("\n").rstrip("\r")
        if not header_seen:
            header_seen = True
            continue
        if not line:
            continue
        cells = line.split("\t")
        if len(cells) < expected or (len(cells) > expected and not passthrough):
            raise ParseError(f"expected {expected} tab-separated columns, got {len(cells)}", lineno)
        sid, text = cells[0], cells[1]
        label = parse_label(cells[2], lineno) if has_labels else None
        if sid in ids:
            raise ValidationError(f"duplicate sentence id {sid!r} at line {lineno}")
        ids.add(sid)
        try:
            records.append(
                LabeledSentence(sid, text, language, label, extra=tuple(cells[expected:]))
            )
        except ValidationError as exc:
            raise ValidationError(f"line {lineno}: {exc}") from None
    return records


def serialize_tsv(records: Iterable[LabeledSentence], has_labels: bool = True) -> str:
    header = HEADER_LABELED if has_labels else HEADER_UNLABELED
    lines = ["\t".join(header)]
    for r in records:
        cells = [r.id, r.text]
        if has_labels:
            if r.label is None:
                raise ValidationError(f"sentence {r.id!r} is unlabeled")
            cells.append(format_label(r.label))
        cells.extend(r.extra)
        lines.append("\t".join(cells))
    return "\n".join(lines) + "\n"


def _file_has_labels(path: Path) -> bool:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split("\t")
    return len(header) >= 3


def read_tsv(path: str | Path, has_labels: bool | None = None, language: str = "en") -> list[LabeledSentence]:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"corpus file not found: {path}")
    if has_labels is None:
        has_labels = _file_has_labels(path)
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_tsv(fh, has_labels, language)


def load_splits(paths: Mapping[str, str | Path], language: str = "en") -> DatasetSplits:
    """Read train/dev/devtest (and optionally test) files into validated splits.

    The test file may omit the label column; labeled splits must carry one.
    """
    missing = [name for name in LABELED_SPLITS if not paths.get(name)]
    if missing:
        raise ConfigurationError(f"missing required split(s): {', '.join(missing)}")
    unknown = set(paths) - set(ALL_SPLITS)
    if unknown:
        raise ConfigurationError(f"unknown split name(s): {', '.join(sorted(unknown))}")
    loaded = {}
    for name in LABELED_SPLITS:
        if not _file_has_labels(_existing(paths[name])):
            raise ValidationError(f"split {name!r} has no label column")
        loaded[name] = read_tsv(paths[name], True, language)
    loaded["test"] = read_tsv(paths["test"], None, language) if paths.get("test") else []
    return DatasetSplits(language=language, **loaded)


def _existing(path) -> Path:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"corpus file not found: {path}")
    return path


def class_balance(split: Iterable[LabeledSentence]) -> dict[int, int]:
    counts: Counter[int] = Counter()
    for row in split:
        if row.label is None:
            raise ValidationError(f"sentence {row.id!r} is unlabeled")
        counts[row.label] += 1
    if not counts:
        return {}
    return {1: counts[1], 0: counts[0]}
