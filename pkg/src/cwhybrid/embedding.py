"""Sentence and triple-part features behind pluggable providers.

A sentence encoder maps text to one ``dim``-vector (768 by default); a
word-vector provider maps tokens to ``dim``-vectors (300 by default).  Stub
providers derive vectors from a keyed SHAKE-256 stream so tests are hermetic
and identical on every platform.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import struct
import subprocess
import threading
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .corpus import LabeledSentence
from .errors import ConfigurationError, IntegrityError, ValidationError
from .extraction import MAX_TRIPLES, TripleSet

SENTENCE_DIM = 768
PART_DIM = 300
N_PARTS = 3  # subject, predicate, object

_PUNCT = "\"'`.,;:!?()[]{}“”‘’«»"


def simple_tokenize(text: str) -> list[str]:
    """Whitespace tokenization with surrounding punctuation stripped."""
    return [t for t in (raw.strip(_PUNCT) for raw in text.split()) if t]


class SentenceEncoder(Protocol):
    name: str
    dim: int

    def encode(self, text: str) -> np.ndarray: ...


class WordVectors(Protocol):
    name: str
    dim: int
    tokenizer: Callable[[str], list[str]]

    def lookup(self, token: str) -> np.ndarray: ...


def _hash_vector(key: bytes, payload: str, dim: int) -> np.ndarray:
    raw = hashlib.shake_256(key + b"\x00" + payload.encode("utf-8")).digest(8 * dim)
    ints = np.frombuffer(raw, dtype="<u8")
    # top 53 bits -> uniform in [-1, 1)
    return (ints >> np.uint64(11)).astype(np.float64) * (2.0 / 2.0**53) - 1.0


class StubSentenceEncoder:
    """Unit-norm vectors from a keyed hash of (seed, text); no semantics at all."""

    def __init__(self, seed: int = 0, dim: int = SENTENCE_DIM):
        self.seed = seed
        self.dim = dim
        self.name = f"stub:{seed}"
        self._key = b"sent" + struct.pack("<q", seed)

    def encode(self, text: str) -> np.ndarray:
        v = _hash_vector(self._key, text, self.dim)
        return v / np.linalg.norm(v)


def stub_sentence_encoder(seed: int, dim: int = SENTENCE_DIM) -> StubSentenceEncoder:
    return StubSentenceEncoder(seed, dim)


class StubWordVectors:
    """Hash-derived word vectors; every token has a vector, so there is no OOV."""

    def __init__(self, seed: int = 0, dim: int = PART_DIM, tokenizer=simple_tokenize):
        self.seed = seed
        self.dim = dim
        self.name = f"stub:{seed}"
        self.tokenizer = tokenizer
        self._key = b"word" + struct.pack("<q", seed)

    def lookup(self, token: str) -> np.ndarray:
        return _hash_vector(self._key, token, self.dim) / np.sqrt(self.dim)


class FileWordVectors:
    """Word vectors read from the ``token v1 ... vN`` text format.

    A leading ``count dim`` header line, as written by fastText, is skipped.
    Out-of-vocabulary tokens map to the zero vector.
    """

    def __init__(self, path: str | Path, tokenizer=simple_tokenize):
        self.path = Path(path)
        self.name = f"file:{self.path.name}"
        self.tokenizer = tokenizer
        self.vectors: dict[str, np.ndarray] = {}
        dim = None
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                cells = line.rstrip("\n").rstrip(" ").split(" ")
                if lineno == 1 and len(cells) == 2 and all(c.isdigit() for c in cells):
                    continue
                if len(cells) < 2:
                    continue
                vec = np.asarray([float(c) for c in cells[1:]], dtype=np.float64)
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise ConfigurationError(
                        f"{self.path}: line {lineno} has {vec.size} components, expected {dim}"
                    )
                self.vectors[cells[0]] = vec
        if dim is None:
            raise ConfigurationError(f"{self.path}: no vectors found")
        self.dim = dim
        self._zero = np.zeros(dim)

    def lookup(self, token: str) -> np.ndarray:
        return self.vectors.get(token, self._zero)


class AdapterSentenceEncoder:
    """Sentence encoder in a child process: ``{"id", "text"}`` in, ``{"id", "vector"}`` out, one JSON per line."""

    def __init__(self, command: str | Sequence[str], dim: int = SENTENCE_DIM, name: str | None = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.dim = dim
        self.name = name or f"adapter:{self.command[0]}"
        self._proc = None
        self._lock = threading.Lock()
        self._counter = 0

    def encode(self, text: str) -> np.ndarray:
        with self._lock:
            if self._proc is None or self._proc.poll() is not None:
                self._proc = subprocess.Popen(
                    self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                    text=True, encoding="utf-8", bufsize=1,
                )
            self._counter += 1
            rid = str(self._counter)
            self._proc.stdin.write(json.dumps({"id": rid, "text": text}, ensure_ascii=False) + "\n")
            self._proc.stdin.flush()
            line = self._proc.stdout.readline()
        if not line:
            raise ConfigurationError(f"encoder adapter {self.command!r} closed its output")
        reply = json.loads(line)
        vec = np.asarray(reply["vector"], dtype=np.float64)
        if reply.get("id") != rid or vec.shape != (self.dim,):
            raise ConfigurationError(f"encoder adapter reply has id {reply.get('id')!r}, shape {vec.shape}")
        return vec

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class EmbeddingBundle:
    source_id: str
    sentence_vec: np.ndarray  # (sentence_dim,)
    triple_parts: np.ndarray  # (MAX_TRIPLES, 3, part_dim)
    mask: np.ndarray  # (MAX_TRIPLES,) bool

    def __post_init__(self):
        self.sentence_vec = np.asarray(self.sentence_vec, dtype=np.float64)
        self.triple_parts = np.asarray(self.triple_parts, dtype=np.float64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.sentence_vec.ndim != 1:
            raise ValidationError("sentence_vec must be one-dimensional")
        if self.triple_parts.ndim != 3 or self.triple_parts.shape[:2] != (MAX_TRIPLES, N_PARTS):
            raise ValidationError(f"triple_parts must have shape ({MAX_TRIPLES}, {N_PARTS}, d)")
        if self.mask.shape != (MAX_TRIPLES,):
            raise ValidationError(f"mask must have shape ({MAX_TRIPLES},)")
        if np.any(self.triple_parts[~self.mask]):
            raise ValidationError(f"bundle {self.source_id!r}: masked triple slots must be zero")
        if not (np.all(np.isfinite(self.sentence_vec)) and np.all(np.isfinite(self.triple_parts))):
            raise ValidationError(f"bundle {self.source_id!r} has non-finite values")

    @property
    def sentence_dim(self) -> int:
        return self.sentence_vec.shape[0]

    @property
    def part_dim(self) -> int:
        return self.triple_parts.shape[2]

    @property
    def n_triples(self) -> int:
        return int(self.mask.sum())

    def equals(self, other: "EmbeddingBundle") -> bool:
        return (
            self.source_id == other.source_id
            and np.array_equal(self.sentence_vec, other.sentence_vec)
            and np.array_equal(self.triple_parts, other.triple_parts)
            and np.array_equal(self.mask, other.mask)
        )

    def without_triples(self) -> "EmbeddingBundle":
        return EmbeddingBundle(
            self.source_id,
            self.sentence_vec.copy(),
            np.zeros_like(self.triple_parts),
            np.zeros(MAX_TRIPLES, dtype=bool),
        )


def encode_part(wv: WordVectors, part_text: str) -> np.ndarray:
    """Mean of the word vectors of ``part_text``; zero vector for no tokens."""
    tokens = wv.tokenizer(part_text)
    if not tokens:
        return np.zeros(wv.dim)
    return np.mean([wv.lookup(t) for t in tokens], axis=0)


def build_bundle(enc: SentenceEncoder, wv: WordVectors, s: LabeledSentence, ts: TripleSet) -> EmbeddingBundle:
    if ts.source_id != s.id:
        raise ValidationError(f"triple set for {ts.source_id!r} paired with sentence {s.id!r}")
    sent = np.asarray(enc.encode(s.text), dtype=np.float64)
    if sent.shape != (enc.dim,):
        raise ConfigurationError(f"encoder {enc.name!r} returned shape {sent.shape}, declared ({enc.dim},)")
    parts = np.zeros((MAX_TRIPLES, N_PARTS, wv.dim))
    mask = np.zeros(MAX_TRIPLES, dtype=bool)
    for i, triple in enumerate(ts.triples):
        for j, text in enumerate(triple.parts()):
            vec = encode_part(wv, text)
            if vec.shape != (wv.dim,):
                raise ConfigurationError(
                    f"word vectors {wv.name!r} returned shape {vec.shape}, declared ({wv.dim},)"
                )
            parts[i, j] = vec
        mask[i] = True
    return EmbeddingBundle(s.id, sent, parts, mask)


def stack_bundles(bundles: Sequence[EmbeddingBundle]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stack bundles into (B, S), (B, K, 3, P) and (B, K) arrays."""
    if not bundles:
        raise ValidationError("cannot stack an empty bundle list")
    return (
        np.stack([b.sentence_vec for b in bundles]),
        np.stack([b.triple_parts for b in bundles]),
        np.stack([b.mask for b in bundles]),
    )


# ---------------------------------------------------------------------------
# Binary cache ("CWB1")
#
# header:  magic, u32 sentence_dim, u32 part_dim, u32 slots, u32 count, u32 crc
# record:  u32 id_len, id bytes, f64[sentence_dim], f64[slots*3*part_dim],
#          u8[slots] mask, u32 crc32 of the preceding record bytes
# ---------------------------------------------------------------------------

CACHE_MAGIC = b"CWB1"
_HEADER = struct.Struct("<4sIIII")


def cache_bundles(
    bundles: Sequence[EmbeddingBundle],
    path: str | Path,
    sentence_dim: int = SENTENCE_DIM,
    part_dim: int = PART_DIM,
) -> int:
    if bundles:
        sentence_dim, part_dim = bundles[0].sentence_dim, bundles[0].part_dim
    header = _HEADER.pack(CACHE_MAGIC, sentence_dim, part_dim, MAX_TRIPLES, len(bundles))
    chunks = [header, struct.pack("<I", zlib.crc32(header))]
    for b in bundles:
        if b.sentence_dim != sentence_dim or b.part_dim != part_dim:
            raise ConfigurationError(f"bundle {b.source_id!r} dimensions differ from the rest of the cache")
        sid = b.source_id.encode("utf-8")
        record = b"".join([
            struct.pack("<I", len(sid)),
            sid,
            b.sentence_vec.astype("<f8").tobytes(),
            b.triple_parts.astype("<f8").tobytes(),
            b.mask.astype(np.uint8).tobytes(),
        ])
        chunks.append(record)
        chunks.append(struct.pack("<I", zlib.crc32(record)))
    Path(path).write_bytes(b"".join(chunks))
    return len(bundles)


def load_bundles(path: str | Path) -> list[EmbeddingBundle]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size + 4:
        raise IntegrityError(f"{path}: truncated header")
    magic, sdim, pdim, slots, count = _HEADER.unpack_from(data, 0)
    if magic != CACHE_MAGIC:
        raise IntegrityError(f"{path}: bad magic {magic!r}")
    (crc,) = struct.unpack_from("<I", data, _HEADER.size)
    if crc != zlib.crc32(data[: _HEADER.size]):
        raise IntegrityError(f"{path}: header checksum mismatch")
    if slots != MAX_TRIPLES:
        raise IntegrityError(f"{path}: cache has {slots} triple slots, expected {MAX_TRIPLES}")
    pos = _HEADER.size + 4
    body = 8 * sdim + 8 * slots * N_PARTS * pdim + slots
    out = []
    for k in range(count):
        if pos + 4 > len(data):
            raise IntegrityError(f"{path}: truncated at record {k}")
        (idlen,) = struct.unpack_from("<I", data, pos)
        end = pos + 4 + idlen + body
        if end + 4 > len(data):
            raise IntegrityError(f"{path}: truncated at record {k}")
        record = data[pos:end]
        (crc,) = struct.unpack_from("<I", data, end)
        if crc != zlib.crc32(record):
            raise IntegrityError(f"{path}: checksum mismatch in record {k}")
        off = 4
        sid = record[off: off + idlen].decode("utf-8")
        off += idlen
        sent = np.frombuffer(record, "<f8", sdim, off).astype(np.float64)
        off += 8 * sdim
        parts = np.frombuffer(record, "<f8", slots * N_PARTS * pdim, off).astype(np.float64)
        off += 8 * slots * N_PARTS * pdim
        mask = np.frombuffer(record, np.uint8, slots, off).astype(bool)
        try:
            out.append(EmbeddingBundle(sid, sent, parts.reshape(slots, N_PARTS, pdim), mask))
        except ValidationError as exc:
            raise IntegrityError(f"{path}: record {k}: {exc}") from exc
        pos = end + 4
    if pos != len(data):
        raise IntegrityError(f"{path}: {len(data) - pos} trailing bytes")
    return out


def featurize(
    enc: SentenceEncoder,
    wv: WordVectors,
    sentences: Iterable[LabeledSentence],
    triple_sets: Iterable[TripleSet],
) -> list[EmbeddingBundle]:
    by_id = {ts.source_id: ts for ts in triple_sets}
    out = []
    for s in sentences:
        if s.id not in by_id:
            raise IntegrityError(f"no triples recorded for sentence {s.id!r}")
        out.append(build_bundle(enc, wv, s, by_id[s.id]))
    return out
