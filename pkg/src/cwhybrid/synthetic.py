"""Synthetic corpora where the label is only recoverable from triple objects.

Every sentence reads ``<Name> <verb> the <marker> <noun> in <year>``.  The
label is 1 iff the marker word belongs to the positive set.  Sentence
encodings from the stub encoder are hashes of the full text, so they carry no
information about the marker; only the object of the extracted triple does.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .corpus import LabeledSentence, serialize_tsv

POSITIVE_MARKERS = ("tax", "deficit", "unemployment", "tariff")
NEGATIVE_MARKERS = ("weather", "music", "garden", "holiday")
NAMES = ("Maria", "John", "Ahmed", "Sofia", "Pieter", "Lucia", "Omar", "Grace", "Ivan", "Chen")
VERBS = ("announced", "approved", "reported", "supported", "claimed", "raised", "signed", "created")
NOUNS = ("plan", "report", "figures", "program", "rules", "budget line", "study", "schedule")


def marker_corpus(n: int = 400, seed: int = 0, language: str = "en", prefix: str = "s") -> list[LabeledSentence]:
    """``n`` distinct labeled sentences, balanced between the two classes."""
    rng = np.random.default_rng(seed)
    out, seen = [], set()
    while len(out) < n:
        label = len(out) % 2
        markers = POSITIVE_MARKERS if label else NEGATIVE_MARKERS
        text = "{} {} the {} {} in {}.".format(
            NAMES[rng.integers(len(NAMES))],
            VERBS[rng.integers(len(VERBS))],
            markers[rng.integers(len(markers))],
            NOUNS[rng.integers(len(NOUNS))],
            1900 + int(rng.integers(120)),
        )
        if text in seen:
            continue
        seen.add(text)
        out.append(LabeledSentence(f"{prefix}{len(out)}", text, language, label))
    order = rng.permutation(n)
    return [out[i] for i in order]


def write_demo_corpus(directory, n: int = 200, seed: int = 0, extra_devtest=()) -> dict[str, str]:
    """Write train/dev/devtest/test TSV files of a marker corpus; returns split paths.

    Splits take 60/15/15/10 percent of ``n``.  ``extra_devtest`` sentences are
    appended to the devtest file.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = marker_corpus(n, seed)
    a, b, c = int(n * 0.6), int(n * 0.75), int(n * 0.9)
    parts = {"train": rows[:a], "dev": rows[a:b], "devtest": rows[b:c] + list(extra_devtest), "test": rows[c:]}
    paths = {}
    for name, split in parts.items():
        path = directory / f"{name}.tsv"
        path.write_text(serialize_tsv(split, has_labels=name != "test"), encoding="utf-8", newline="\n")
        paths[name] = str(path)
    return paths
