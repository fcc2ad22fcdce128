"""Synthetic keyphrase corpora with a learnable extract/generate relation.

Documents are filler text with technique phrases planted as contiguous
spans (the present keyphrases). Every technique belongs to a family
whose name words never occur in any document, and the absent keyphrases
of a document are exactly the names of the planted families, ordered by
first occurrence. The same spec always produces byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_CONSONANTS = list("bcdfgjklmnprtvz")
_VOWELS = list("aeiou")
_FINALS = list("klmnrt")


@dataclass
class CorpusSpec:
    vocab_size: int = 200
    n_docs: int = 2000
    doc_len_min: int = 30
    doc_len_max: int = 50
    phrases_min: int = 4  # planted present phrases per doc
    phrases_max: int = 6
    families_min: int = 1  # families drawn per doc; their names are the absent gold
    families_max: int = 3
    n_families: int = 10
    techniques_per_family: int = 6
    seed: int = 7
    val_fraction: float = 0.1
    test_fraction: float = 0.1

    def __post_init__(self):
        if self.doc_len_min < 5 or self.doc_len_max < self.doc_len_min:
            raise ValueError("bad doc length range")
        if not 1 <= self.phrases_min <= self.phrases_max:
            raise ValueError("bad phrases-per-doc range")
        if not 1 <= self.families_min <= self.families_max <= self.n_families:
            raise ValueError("bad families-per-doc range")
        if self.n_families < 2 or self.techniques_per_family < 1:
            raise ValueError("need at least 2 families with 1 technique each")


def _make_word(rng):
    n_syll = int(rng.integers(2, 4))
    w = "".join(rng.choice(_CONSONANTS) + rng.choice(_VOWELS) for _ in range(n_syll))
    if rng.random() < 0.5:
        w += rng.choice(_FINALS)
    return w


def _word_pool(rng, n, taken, taken_stems):
    from .stem import stem

    pool = []
    while len(pool) < n:
        w = _make_word(rng)
        s = stem(w)
        if w in taken or s in taken_stems:
            continue
        taken.add(w)
        taken_stems.add(s)
        pool.append(w)
    return pool


def _build_world(spec, rng):
    """Word pools, families with names, and technique phrases."""
    taken, taken_stems = set(), set()
    name_lens = [int(rng.integers(1, 3)) for _ in range(spec.n_families)]
    tech_lens = [
        [int(rng.integers(1, 4)) for _ in range(spec.techniques_per_family)]
        for _ in range(spec.n_families)
    ]
    n_name_words = sum(name_lens)
    n_tech_words = sum(sum(ls) for ls in tech_lens)
    n_filler = max(20, spec.vocab_size - n_name_words - n_tech_words)

    name_words = _word_pool(rng, n_name_words, taken, taken_stems)
    tech_words = _word_pool(rng, n_tech_words, taken, taken_stems)
    filler = _word_pool(rng, n_filler, taken, taken_stems)

    families = []
    ni = ti = 0
    for f in range(spec.n_families):
        name = " ".join(name_words[ni : ni + name_lens[f]])
        ni += name_lens[f]
        techniques = []
        for ln in tech_lens[f]:
            techniques.append(" ".join(tech_words[ti : ti + ln]))
            ti += ln
        families.append({"name": name, "techniques": techniques})
    return families, filler


def _make_doc(spec, families, filler, rng, doc_id):
    n_fam = int(rng.integers(spec.families_min, spec.families_max + 1))
    fam_ids = rng.choice(spec.n_families, size=n_fam, replace=False)
    pool = [(int(f), t) for f in fam_ids for t in families[f]["techniques"]]
    n_phrases = min(int(rng.integers(spec.phrases_min, spec.phrases_max + 1)), len(pool))
    chosen = [pool[i] for i in rng.choice(len(pool), size=n_phrases, replace=False)]

    target_len = int(rng.integers(spec.doc_len_min, spec.doc_len_max + 1))
    planted_words = sum(len(t.split()) for _, t in chosen)
    n_filler = max(3, target_len - planted_words)
    words = [filler[i] for i in rng.integers(0, len(filler), size=n_filler)]

    slots = sorted((int(rng.integers(0, len(words) + 1)) for _ in chosen), reverse=True)
    placed = []  # (slot, family idx, phrase)
    for slot, (f_idx, phrase) in zip(slots, chosen):
        words[slot:slot] = phrase.split()
        placed.append((slot, f_idx, phrase))

    # order by final position: later insertions shifted earlier ones right
    order = sorted(range(len(placed)), key=lambda i: (placed[i][0], -i))
    present, seen_p = [], set()
    fam_order, seen_f = [], set()
    for i in order:
        _, f_idx, phrase = placed[i]
        if phrase not in seen_p:
            seen_p.add(phrase)
            present.append(phrase)
        if f_idx not in seen_f:
            seen_f.add(f_idx)
            fam_order.append(f_idx)
    absent = [families[f]["name"] for f in fam_order]
    return {"id": doc_id, "document": " ".join(words), "keyphrases": present + absent}


def gen_corpus(spec):
    """Generate (train, valid, test) record lists for a CorpusSpec."""
    rng = np.random.default_rng(spec.seed)
    families, filler = _build_world(spec, rng)
    docs = [_make_doc(spec, families, filler, rng, f"doc-{i:05d}") for i in range(spec.n_docs)]
    n_test = int(round(spec.n_docs * spec.test_fraction))
    n_val = int(round(spec.n_docs * spec.val_fraction))
    n_train = spec.n_docs - n_val - n_test
    return docs[:n_train], docs[n_train : n_train + n_val], docs[n_train + n_val :]
