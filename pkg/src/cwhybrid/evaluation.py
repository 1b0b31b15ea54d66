"""Binary classification metrics, comparison reports and submission files."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ReportError, UndefinedMetricError, ValidationError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def swapped(self) -> "ConfusionCounts":
        """Counts with the roles of the two classes exchanged."""
        return ConfusionCounts(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)


def _check(y_true: Sequence[int], y_pred: Sequence[int]):
    if len(y_true) != len(y_pred):
        raise ValidationError(f"length mismatch: {len(y_true)} labels vs {len(y_pred)} predictions")
    for v in (*y_true, *y_pred):
        if v not in (0, 1):
            raise ValidationError(f"non-binary label {v!r}")


def confusion(y_true: Sequence[int], y_pred: Sequence[int]) -> ConfusionCounts:
    _check(y_true, y_pred)
    tp = fp = fn = tn = 0
    for t, p in zip(y_true, y_pred):
        if t == 1 and p == 1:
            tp += 1
        elif t == 0 and p == 1:
            fp += 1
        elif t == 1:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp, fp, fn, tn)


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    # a denominator was zero somewhere and the zero convention was applied
    degenerate: bool


def class_scores(c: ConfusionCounts) -> ClassScores:
    """Precision/recall/F1 of the positive class; 0 wherever a denominator is 0."""
    precision = _ratio(c.tp, c.tp + c.fp)
    recall = _ratio(c.tp, c.tp + c.fn)
    f1 = _ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn)
    degenerate = (c.tp + c.fp == 0) or (c.tp + c.fn == 0)
    return ClassScores(precision, recall, f1, degenerate)


def positive_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    if not y_true:
        raise UndefinedMetricError("F1 is undefined on an empty evaluation set")
    return class_scores(confusion(y_true, y_pred)).f1


def macro_f1(y_true: Sequence[int], y_pred: Sequence[int]) -> float:
    if not y_true:
        raise UndefinedMetricError("macro-F1 is undefined on an empty evaluation set")
    c = confusion(y_true, y_pred)
    return (class_scores(c).f1 + class_scores(c.swapped()).f1) / 2


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def render(score: float, decimals: int = 3) -> str:
    """Score in [0, 1] as a percentage string, e.g. 0.84042 -> '84.042'."""
    return f"{score * 100:.{decimals}f}"


@dataclass
class ScoredRun:
    system: str
    role: str  # "lm" or "fused"
    language: str
    split: str
    macro_f1: float
    positive_f1: float | None = None
    precision: dict[int, float] = field(default_factory=dict)
    recall: dict[int, float] = field(default_factory=dict)
    n: int | None = None
    degenerate: bool = False

    @classmethod
    def from_predictions(cls, system, role, language, split, y_true, y_pred) -> "ScoredRun":
        c = confusion(y_true, y_pred)
        pos, neg = class_scores(c), class_scores(c.swapped())
        return cls(
            system, role, language, split,
            macro_f1=macro_f1(y_true, y_pred),
            positive_f1=pos.f1,
            precision={1: pos.precision, 0: neg.precision},
            recall={1: pos.recall, 0: neg.recall},
            n=c.n,
            degenerate=pos.degenerate or neg.degenerate,
        )


@dataclass
class GainRow:
    language: str
    split: str
    lm_score: str
    fused_score: str
    delta: str


@dataclass
class EvalReport:
    rows: list[ScoredRun]
    gains: list[GainRow]
    decimals: int = 3

    def to_json(self) -> dict:
        rows = []
        for r in self.rows:
            d = asdict(r)
            d["precision"] = {str(k): v for k, v in r.precision.items()}
            d["recall"] = {str(k): v for k, v in r.recall.items()}
            rows.append(d)
        return {"decimals": self.decimals, "rows": rows, "gains": [asdict(g) for g in self.gains]}

    def to_text(self) -> str:
        d = self.decimals
        lines = [
            f"{'system':<16} {'role':<6} {'lang':<5} {'split':<8} {'macro-F1':>9} {'pos-F1':>9} {'n':>6}",
        ]
        for r in self.rows:
            pos = render(r.positive_f1, d) if r.positive_f1 is not None else "-"
            flag = " *" if r.degenerate else ""
            lines.append(
                f"{r.system:<16} {r.role:<6} {r.language:<5} {r.split:<8} "
                f"{render(r.macro_f1, d):>9} {pos:>9} {r.n if r.n is not None else '-':>6}{flag}"
            )
        if self.gains:
            lines.append("")
            lines.append(f"{'lang':<5} {'split':<8} {'LM':>9} {'LM+Triples':>11} {'gain':>9}")
            for g in self.gains:
                lines.append(f"{g.language:<5} {g.split:<8} {g.lm_score:>9} {g.fused_score:>11} {g.delta:>9}")
        if any(r.degenerate for r in self.rows):
            lines.append("")
            lines.append("* a precision/recall denominator was zero; the zero convention was applied")
        return "\n".join(lines) + "\n"

    def write(self, stem: str | Path) -> None:
        stem = Path(stem)
        stem.with_suffix(".txt").write_text(self.to_text(), encoding="utf-8")
        stem.with_suffix(".json").write_text(
            json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )


def build_report(results: Iterable[ScoredRun], decimals: int = 3) -> EvalReport:
    """Tabulate runs and pair every LM run with its fused run on the same language and split.

    Gains are computed on the rendered (x100, rounded) scores so the printed
    delta always equals the difference of the printed scores.
    """
    rows = list(results)
    by_key: dict[tuple[str, str], dict[str, ScoredRun]] = {}
    for r in rows:
        if r.role not in ("lm", "fused"):
            raise ReportError(f"run {r.system!r} has unknown role {r.role!r}")
        slot = by_key.setdefault((r.language, r.split), {})
        if r.role in slot:
            raise ReportError(f"two {r.role} runs for language {r.language!r}, split {r.split!r}")
        slot[r.role] = r
    gains = []
    for (language, split), pair in by_key.items():
        if set(pair) != {"lm", "fused"}:
            raise ReportError(f"unmatched run for language {language!r}, split {split!r}")
        lm, fused = render(pair["lm"].macro_f1, decimals), render(pair["fused"].macro_f1, decimals)
        delta = Decimal(fused) - Decimal(lm)
        gains.append(GainRow(language, split, lm, fused, f"{delta:+.{decimals}f}"))
    return EvalReport(rows, gains, decimals)


# ---------------------------------------------------------------------------
# Submission
# ---------------------------------------------------------------------------

def format_submission(preds: Iterable[tuple[str, int]], run_id: str) -> str:
    seen: set[str] = set()
    lines = []
    for sid, label in preds:
        if sid in seen:
            raise ValidationError(f"duplicate id {sid!r} in submission")
        seen.add(sid)
        if label not in (0, 1):
            raise ValidationError(f"non-binary label {label!r} for id {sid!r}")
        lines.append(f"{sid}\t{'Yes' if label == 1 else 'No'}\t{run_id}")
    return "".join(line + "\n" for line in lines)


def write_submission(preds: Iterable[tuple[str, int]], run_id: str, path: str | Path) -> int:
    text = format_submission(preds, run_id)
    Path(path).write_text(text, encoding="utf-8", newline="\n")
    return text.count("\n")
