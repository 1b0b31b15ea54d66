"""Triple extraction, capping, named-entity filtering and pronoun substitution.

Extractors follow a small protocol (``name``, ``supported_languages``,
``extract(text)``).  Two implementations ship: a deterministic rule-based
fallback and an adapter that talks to an external OpenIE process over
line-delimited JSON on stdin/stdout.
"""

from __future__ import annotations

import json
import re
import shlex
import subprocess
import threading
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from .corpus import LabeledSentence
from .errors import CapabilityError, ExtractionError, IntegrityError, UndefinedMetricError, ValidationError

MAX_TRIPLES = 4


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    object: str = ""
    source_id: str = ""
    rank: int = 0

    def __post_init__(self):
        if not self.subject.strip() or not self.predicate.strip():
            raise ValidationError("triple subject and predicate must be nonempty")

    def parts(self) -> tuple[str, str, str]:
        return (self.subject, self.predicate, self.object)

    def __str__(self):
        return f"({self.subject}; {self.predicate}; {self.object})"


@dataclass(frozen=True)
class TripleSet:
    source_id: str
    triples: tuple[Triple, ...] = ()
    # number of triples the extractor produced before the cap was applied
    pre_cap_count: int | None = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "triples", tuple(self.triples))
        if len(self.triples) > MAX_TRIPLES:
            raise ValidationError(f"{self.source_id!r}: {len(self.triples)} triples exceeds cap {MAX_TRIPLES}")
        ranks = [t.rank for t in self.triples]
        if ranks != sorted(set(ranks)):
            raise ValidationError(f"{self.source_id!r}: triple ranks must be unique and ascending")
        if self.pre_cap_count is None:
            object.__setattr__(self, "pre_cap_count", len(self.triples))

    def __len__(self):
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)

    def with_triples(self, triples: Iterable[Triple]) -> "TripleSet":
        return replace(self, triples=tuple(triples))


class Extractor(Protocol):
    name: str
    supported_languages: frozenset[str]

    def extract(self, text: str) -> list[Triple]: ...


# ---------------------------------------------------------------------------
# Rule-based fallback
# ---------------------------------------------------------------------------

_CONJUNCTIONS = {"and", "but", "or", "nor", "yet", "so"}
_RELATIVE = {
    "who", "whom", "whose", "which", "that", "where", "when", "because",
    "while", "although", "though", "whereas", "since", "if", "unless",
}
_MODALS = {"can", "could", "may", "might", "must", "shall", "should", "will", "would"}
_AUXILIARIES = {
    "am", "is", "are", "was", "were", "be", "been", "being",
    "has", "have", "had", "having", "do", "does", "did",
} | _MODALS
_COMMON_VERBS = {
    "accuse", "accused", "add", "added", "agree", "agreed", "allow", "allowed",
    "announce", "announced", "approve", "approved", "ask", "asked", "became",
    "become", "began", "begin", "believe", "believed", "bought", "brought",
    "build", "built", "buy", "came", "claim", "claimed", "come", "control",
    "controlled", "cost", "costs", "create", "created", "cut", "cuts", "decide",
    "decided", "die", "died", "drop", "dropped", "fell", "find", "found", "gave",
    "get", "give", "go", "got", "grew", "grow", "held", "help", "helped", "hold",
    "increase", "increased", "keep", "kept", "kill", "killed", "knew", "know",
    "lead", "led", "left", "lose", "lost", "made", "make", "meet", "met", "need",
    "needed", "paid", "pass", "passed", "pay", "promise", "promised", "put",
    "raise", "raised", "ran", "reach", "reached", "receive", "received",
    "remind", "reminded", "report", "reported", "rise", "rose", "run", "said",
    "sat", "saw", "say", "says", "see", "seen", "sent", "set", "show", "showed",
    "shown", "sign", "signed", "sold", "spend", "spent", "stand", "stood",
    "support", "supported", "take", "taken", "think", "thought", "told", "took",
    "vote", "voted", "want", "wanted", "went", "win", "won", "write", "written",
    "wrote",
}
_VERB_LEXICON = _AUXILIARIES | _COMMON_VERBS
_NEGATIONS = {"not", "never", "n't"}
_DETERMINERS = {
    "a", "an", "the", "this", "that", "these", "those", "my", "your", "his",
    "her", "its", "our", "their", "some", "any", "every", "each", "all", "no",
    "many", "much", "more", "most", "several", "few",
}
_PUNCT = "\"'`.,;:!?()[]{}“”‘’«»"
_S_EXCEPTIONS = ("ss", "us", "is", "ous", "ics")


def _tokens(text: str) -> list[str]:
    out = []
    for raw in text.split():
        tok = raw.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def _clauses(text: str) -> list[list[str]]:
    clauses: list[list[str]] = [[]]
    for raw in text.split():
        tok = raw.strip(_PUNCT)
        low = tok.lower()
        if low in _CONJUNCTIONS or low in _RELATIVE:
            clauses.append([])
        elif tok:
            clauses[-1].append(tok)
        # hard punctuation ends the clause after the token it is attached to
        if raw.rstrip("\"')”’").endswith((";", ":", ".", "!", "?")):
            clauses.append([])
    return [c for c in clauses if c]


def _is_ed(tok: str) -> bool:
    return tok.islower() and len(tok) > 4 and tok.endswith("ed")


def _is_s(tok: str, prev: str) -> bool:
    return (
        tok.islower()
        and len(tok) > 3
        and tok.endswith("s")
        and not tok.endswith(_S_EXCEPTIONS)
        and prev.lower() not in _DETERMINERS
    )


def _find_verb(clause: Sequence[str]) -> int | None:
    # lexicon first, then -ed forms, then -s forms; index 0 is the subject slot
    for test in (
        lambda i: clause[i].lower() in _VERB_LEXICON,
        lambda i: _is_ed(clause[i]),
        lambda i: _is_s(clause[i], clause[i - 1]),
    ):
        for i in range(1, len(clause)):
            if test(i):
                return i
    return None


def _verb_group_end(clause: Sequence[str], start: int) -> int:
    end = start + 1
    while end < len(clause):
        low = clause[end].lower()
        if low in _VERB_LEXICON or low in _NEGATIONS or _is_ed(clause[end]):
            end += 1
        elif low.endswith("ly") and len(low) > 4 and end + 1 < len(clause):
            end += 1
        else:
            break
    return end


def rule_based_extract(text: str) -> list[Triple]:
    """Extract at most one (subject; verb group; remainder) triple per clause.

    Clauses are cut at coordinating conjunctions, relative/subordinating
    words and sentence punctuation.  The verb is found without a tagger:
    a closed verb lexicon, then ``-ed`` and ``-s`` morphology.
    """
    triples = []
    for clause in _clauses(text):
        if clause[0].lower() in _VERB_LEXICON or _is_ed(clause[0]):
            continue  # subjectless relative clause
        v = _find_verb(clause)
        if v is None:
            continue
        end = _verb_group_end(clause, v)
        triples.append(
            Triple(
                subject=" ".join(clause[:v]),
                predicate=" ".join(clause[v:end]),
                object=" ".join(clause[end:]),
                rank=len(triples),
            )
        )
    return triples


class RuleBasedExtractor:
    name = "rule"

    def __init__(self, languages: Iterable[str] = ("en",)):
        self.supported_languages = frozenset(languages)

    def extract(self, text: str) -> list[Triple]:
        return rule_based_extract(text)


class AdapterExtractor:
    """Out-of-process extractor speaking line-delimited JSON.

    Each request is ``{"id": ..., "text": ...}`` on one line of the child's
    stdin; the child answers with ``{"id": ..., "triples": [{"s", "p", "o"}]}``
    on one line of stdout.  Requests are serialized unless the adapter
    declares concurrent capacity.
    """

    def __init__(
        self,
        command: str | Sequence[str],
        languages: Iterable[str] = ("en",),
        name: str | None = None,
        concurrent: bool = False,
    ):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.supported_languages = frozenset(languages)
        self.name = name or f"adapter:{self.command[0]}"
        self.concurrent = concurrent
        self._proc: subprocess.Popen | None = None
        self._lock = threading.Lock()
        self._counter = 0

    def _process(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            try:
                self._proc = subprocess.Popen(
                    self.command,
                    stdin=subprocess.PIPE,
                    stdout=subprocess.PIPE,
                    text=True,
                    encoding="utf-8",
                    bufsize=1,
                )
            except OSError as exc:
                raise ExtractionError(f"cannot start adapter {self.command!r}: {exc}") from exc
        return self._proc

    def request(self, sentence_id: str, text: str) -> list[Triple]:
        with self._lock:
            proc = self._process()
            try:
                proc.stdin.write(json.dumps({"id": sentence_id, "text": text}, ensure_ascii=False) + "\n")
                proc.stdin.flush()
                line = proc.stdout.readline()
            except (BrokenPipeError, OSError) as exc:
                raise ExtractionError(f"adapter I/O failure: {exc}", sentence_id) from exc
        if not line:
            raise ExtractionError("adapter closed its output", sentence_id)
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ExtractionError(f"adapter sent invalid JSON: {exc}", sentence_id) from exc
        if reply.get("id") != sentence_id:
            raise ExtractionError(f"adapter answered for id {reply.get('id')!r}", sentence_id)
        try:
            return [
                Triple(t["s"], t["p"], t.get("o", ""), sentence_id, rank)
                for rank, t in enumerate(reply.get("triples", []))
            ]
        except (KeyError, TypeError, ValidationError) as exc:
            raise ExtractionError(f"malformed triple in adapter reply: {exc}", sentence_id) from exc

    def extract(self, text: str) -> list[Triple]:
        self._counter += 1
        return self.request(f"_{self._counter}", text)

    def close(self):
        if self._proc is not None:
            if self._proc.stdin:
                self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def extract_triples(extractor: Extractor, sentence: LabeledSentence) -> TripleSet:
    if sentence.language not in extractor.supported_languages:
        raise CapabilityError(
            f"extractor {extractor.name!r} does not support language {sentence.language!r}"
        )
    try:
        if isinstance(extractor, AdapterExtractor):
            raw = extractor.request(sentence.id, sentence.text)
        else:
            raw = extractor.extract(sentence.text)
    except ExtractionError:
        raise
    except Exception as exc:
        raise ExtractionError(f"{type(exc).__name__}: {exc}", sentence.id) from exc
    ranked = sorted(raw, key=lambda t: t.rank)
    kept = tuple(replace(t, source_id=sentence.id) for t in ranked[:MAX_TRIPLES])
    return TripleSet(sentence.id, kept, pre_cap_count=len(raw))


# ---------------------------------------------------------------------------
# Refinements
# ---------------------------------------------------------------------------

Recognizer = Callable[[str], set]


def filter_named_entities(ts: TripleSet, recognizer: Recognizer, mode: str = "or") -> TripleSet:
    """Keep triples whose subject/object mention a named entity.

    ``mode="or"`` keeps a triple if either part has an entity, ``mode="and"``
    requires both.
    """
    if mode not in ("or", "and"):
        raise ValueError(f"unknown filter mode {mode!r}")

    def keep(t: Triple) -> bool:
        subj, obj = bool(recognizer(t.subject)), bool(recognizer(t.object))
        return (subj and obj) if mode == "and" else (subj or obj)

    return ts.with_triples(t for t in ts.triples if keep(t))


def gazetteer_recognizer(entities: Iterable[str]) -> Recognizer:
    """Recognizer returning the gazetteer entries found at token boundaries."""
    names = sorted({e for e in entities if e}, key=len, reverse=True)
    if not names:
        return lambda text: set()
    pattern = re.compile(r"(?<!\w)(?:" + "|".join(map(re.escape, names)) + r")(?!\w)")
    return lambda text: set(pattern.findall(text))


_CAP_STOP = {"I", "The", "A", "An", "This", "That", "These", "Those", "It", "We", "They", "He", "She", "You"}


def capitalized_recognizer(text: str) -> set[str]:
    """Crude entity recognizer: maximal runs of capitalized tokens."""
    found, run = set(), []
    for tok in _tokens(text) + [""]:
        if tok[:1].isupper() and tok not in _CAP_STOP:
            run.append(tok)
        elif run:
            found.add(" ".join(run))
            run = []
    return found


def resolve_coreference(ts: TripleSet, antecedents: Mapping[str, str]) -> TripleSet:
    """Replace pronoun tokens in subjects and objects by their antecedents.

    Matching is exact and case-sensitive at token boundaries; all keys are
    substituted in a single pass so replacements never cascade.
    """
    if not antecedents:
        return ts
    keys = sorted(antecedents, key=len, reverse=True)
    pattern = re.compile(r"(?<!\w)(?:" + "|".join(map(re.escape, keys)) + r")(?!\w)")

    def sub(text: str) -> str:
        return pattern.sub(lambda m: antecedents[m.group(0)], text)

    return ts.with_triples(
        replace(t, subject=sub(t.subject), object=sub(t.object)) for t in ts.triples
    )


def coverage_stats(corpus: Sequence[TripleSet], cap: int = MAX_TRIPLES) -> float:
    """Fraction of sentences whose full (pre-cap) extraction fits within ``cap``."""
    if not corpus:
        raise UndefinedMetricError("coverage is undefined on an empty corpus")
    return sum(ts.pre_cap_count <= cap for ts in corpus) / len(corpus)


# ---------------------------------------------------------------------------
# JSONL persistence
# ---------------------------------------------------------------------------

def tripleset_to_json(ts: TripleSet) -> dict:
    return {
        "id": ts.source_id,
        "pre_cap_count": ts.pre_cap_count,
        "triples": [{"s": t.subject, "p": t.predicate, "o": t.object, "rank": t.rank} for t in ts.triples],
    }


def tripleset_from_json(obj: dict) -> TripleSet:
    sid = obj["id"]
    return TripleSet(
        sid,
        tuple(Triple(t["s"], t["p"], t.get("o", ""), sid, t["rank"]) for t in obj["triples"]),
        pre_cap_count=obj["pre_cap_count"],
    )


def write_triples_jsonl(sets: Iterable[TripleSet], path: str | Path) -> int:
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for ts in sets:
            fh.write(json.dumps(tripleset_to_json(ts), ensure_ascii=False, sort_keys=True) + "\n")
            n += 1
    return n


def read_triples_jsonl(path: str | Path) -> list[TripleSet]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(tripleset_from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValidationError) as exc:
                raise IntegrityError(f"{path}: line {lineno}: {exc}") from exc
    return out
