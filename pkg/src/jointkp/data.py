"""Text pipeline: wordpiece vocab, present/absent split, BIXO labels,
masked target construction, and joint input assembly.

Input layout per sample: [CLS] document [SEP] masked-absent-sequence [SEP].
Source positions attend each other bidirectionally; target positions see
the full source plus earlier target positions only.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

PAD, UNK, CLS, SEP, MASK, DELIM = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", ";"
SPECIALS = [PAD, UNK, CLS, SEP, MASK, DELIM]

# BIXO label ids: B starts a keyphrase word, I starts later keyphrase
# words, X marks "##" continuations inside keyphrases, O is outside.
B, I, X, O = 0, 1, 2, 3
LABEL_NAMES = "BIXO"
N_LABELS = 4


class Vocabulary:
    """Token <-> id bijection with the six specials pinned at ids 0-5."""

    def __init__(self, tokens):
        tokens = list(tokens)
        if tokens[: len(SPECIALS)] != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.id_to_token = tokens
        self.token_to_id = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def id(self, token):
        return self.token_to_id.get(token, self.token_to_id[UNK])

    def token(self, tid):
        return self.id_to_token[tid]

    @property
    def pad_id(self):
        return 0

    @property
    def unk_id(self):
        return 1

    @property
    def cls_id(self):
        return 2

    @property
    def sep_id(self):
        return 3

    @property
    def mask_id(self):
        return 4

    @property
    def delim_id(self):
        return 5

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for t in self.id_to_token:
                f.write(t + "\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


def build_vocab(samples, max_size):
    """Frequency-ranked vocab over document and keyphrase words.

    Candidates are whole words plus single-character pieces (word-initial
    form and "##" continuation form) so unseen-at-size words stay
    segmentable. Ties at the cutoff break lexicographically.
    """
    if max_size < len(SPECIALS):
        raise ValueError(f"max_size {max_size} smaller than {len(SPECIALS)} specials")
    counts = {}

    def bump(tok, n=1):
        counts[tok] = counts.get(tok, 0) + n

    n_words = 0
    for sample in samples:
        words = list(sample.get("document", "").lower().split())
        for phrase in sample.get("keyphrases", []):
            words.extend(phrase.lower().split())
        for w in words:
            n_words += 1
            bump(w)
            bump(w[0])
            for c in w[1:]:
                bump("##" + c)
    if n_words == 0:
        raise ValueError("empty corpus: no words to build a vocabulary from")
    for s in SPECIALS:
        counts.pop(s, None)
    ranked = sorted(counts, key=lambda t: (-counts[t], t))
    return Vocabulary(SPECIALS + ranked[: max_size - len(SPECIALS)])


def tokenize(word, vocab):
    """Greedy longest-match-first wordpiece split; [UNK] if any remainder fails."""
    pieces = []
    start = 0
    while start < len(word):
        end = len(word)
        match = None
        while end > start:
            sub = word[start:end]
            cand = sub if start == 0 else "##" + sub
            if cand in vocab:
                match = cand
                break
            end -= 1
        if match is None:
            return [UNK]
        pieces.append(match)
        start = end
    return pieces


def tokenize_text(text, vocab):
    out = []
    for w in text.lower().split():
        out.extend(tokenize(w, vocab))
    return out


def detokenize(tokens):
    """Merge "##" continuations back into space-separated words."""
    words = []
    for t in tokens:
        if t.startswith("##") and words:
            words[-1] += t[2:]
        else:
            words.append(t[2:] if t.startswith("##") else t)
    return " ".join(words)


@dataclass
class Sample:
    """A tokenized document with its gold phrases split by occurrence."""

    id: str
    doc_tokens: list
    gold: list  # list of token lists, original order
    present: list = field(default_factory=list)
    absent: list = field(default_factory=list)


def is_subsequence(phrase, doc_tokens):
    n = len(phrase)
    if n == 0 or n > len(doc_tokens):
        return False
    for i in range(len(doc_tokens) - n + 1):
        if doc_tokens[i : i + n] == phrase:
            return True
    return False


def partition_keyphrases(sample_id, doc_tokens, gold_token_lists):
    """Present iff the phrase tokens occur contiguously in the document."""
    s = Sample(id=sample_id, doc_tokens=doc_tokens, gold=list(gold_token_lists))
    for phrase in s.gold:
        if is_subsequence(phrase, doc_tokens):
            s.present.append(phrase)
        else:
            s.absent.append(phrase)
    return s


def prepare_sample(raw, vocab):
    """Tokenize a raw corpus record and partition its keyphrases."""
    doc_tokens = tokenize_text(raw["document"], vocab)
    gold = [tokenize_text(k, vocab) for k in raw["keyphrases"]]
    return partition_keyphrases(raw["id"], doc_tokens, gold)


def label_bixo(doc_tokens, present):
    """BIXO labels; overlaps resolved leftmost-longest."""
    labels = [O] * len(doc_tokens)
    phrases = sorted(present, key=len, reverse=True)
    for p in phrases:
        if not is_subsequence(p, doc_tokens):
            raise ValueError(f"present phrase {p} has no match in document")
    i = 0
    n = len(doc_tokens)
    while i < n:
        hit = None
        for p in phrases:
            if doc_tokens[i : i + len(p)] == p:
                hit = p
                break
        if hit is None:
            i += 1
            continue
        first_word = True
        for j in range(i, i + len(hit)):
            if doc_tokens[j].startswith("##"):
                labels[j] = X
            else:
                labels[j] = B if first_word else I
                first_word = False
        i += len(hit)
    return labels


def sample_rng(seed, sample_id, epoch=0):
    """Deterministic per-sample generator from (seed, sample id[, epoch])."""
    return np.random.default_rng([seed, epoch, zlib.crc32(sample_id.encode("utf-8"))])


def build_target(absent, vocab, mask_prob, rng):
    """Join absent phrases with ";" and mask tokens independently.

    Returns (ids with [MASK] substituted, masked positions, gold ids).
    A nonempty sequence always gets at least one mask.
    """
    if not 0.0 < mask_prob <= 1.0:
        raise ValueError(f"mask_prob must be in (0, 1], got {mask_prob}")
    tokens = []
    for k, phrase in enumerate(absent):
        if k > 0:
            tokens.append(DELIM)
        tokens.extend(phrase)
    gold_ids = np.array([vocab.id(t) for t in tokens], dtype=np.int64)
    n = len(tokens)
    if n == 0:
        return gold_ids, np.zeros(0, dtype=np.int64), gold_ids
    masked = rng.random(n) < mask_prob
    if not masked.any():
        masked[rng.integers(n)] = True
    positions = np.flatnonzero(masked)
    ids = gold_ids.copy()
    ids[positions] = vocab.mask_id
    return ids, positions, gold_ids[positions]


def build_attention_mask(src_len, tgt_len):
    """Permission matrix: (q, k) True means query q may attend key k."""
    t = src_len + tgt_len
    m = np.zeros((t, t), dtype=bool)
    m[:, :src_len] = True  # everyone sees the full source
    for j in range(tgt_len):
        m[src_len + j, src_len : src_len + j + 1] = True
    m[:src_len, src_len:] = False
    return m


@dataclass
class EncodedInput:
    """One assembled joint input ready for the model."""

    sample_id: str
    ids: np.ndarray  # int64 [T]
    segments: np.ndarray  # int64 [T], 0 source / 1 target
    labels: np.ndarray  # int64 [m], BIXO over document tokens
    doc_positions: np.ndarray  # int64 [m], positions of document tokens
    mask_positions: np.ndarray  # int64, absolute positions holding [MASK]
    gold_ids: np.ndarray  # int64, gold token at each masked position
    attn_mask: np.ndarray  # bool [T, T]
    src_len: int
    tgt_len: int

    @property
    def m(self):
        return len(self.doc_positions)

    @property
    def total_len(self):
        return len(self.ids)


def assemble(sample, vocab, mask_prob, max_len, rng):
    """Build [CLS] X [SEP] K_a^m [SEP] with labels, masks, and permissions.

    The document is truncated first when over budget; the target never is.
    The trailing [SEP] terminates the target segment and is masked with the
    same probability so the model learns to stop.
    """
    tgt_ids, tgt_mask_pos, tgt_gold = build_target(sample.absent, vocab, mask_prob, rng)
    n = len(tgt_ids)
    sep_masked = rng.random() < mask_prob
    budget = max_len - n - 3
    if budget < 1:
        raise ValueError(f"sample {sample.id}: target length {n} leaves no room at max_len {max_len}")

    doc_tokens = sample.doc_tokens[:budget]
    labels = label_bixo(doc_tokens, [p for p in sample.present if is_subsequence(p, doc_tokens)])
    doc_ids = np.array([vocab.id(t) for t in doc_tokens], dtype=np.int64)
    m = len(doc_ids)
    src_len = m + 2
    tgt_len = n + 1

    ids = np.concatenate(
        [
            np.array([vocab.cls_id], dtype=np.int64),
            doc_ids,
            np.array([vocab.sep_id], dtype=np.int64),
            tgt_ids,
            np.array([vocab.sep_id], dtype=np.int64),
        ]
    )
    mask_positions = list(src_len + tgt_mask_pos)
    gold_ids = list(tgt_gold)
    if sep_masked:
        ids[src_len + n] = vocab.mask_id
        mask_positions.append(src_len + n)
        gold_ids.append(vocab.sep_id)

    return EncodedInput(
        sample_id=sample.id,
        ids=ids,
        segments=np.concatenate([np.zeros(src_len, dtype=np.int64), np.ones(tgt_len, dtype=np.int64)]),
        labels=np.array(labels, dtype=np.int64),
        doc_positions=np.arange(1, 1 + m, dtype=np.int64),
        mask_positions=np.array(mask_positions, dtype=np.int64),
        gold_ids=np.array(gold_ids, dtype=np.int64),
        attn_mask=build_attention_mask(src_len, tgt_len),
        src_len=src_len,
        tgt_len=tgt_len,
    )


def source_only_input(doc_tokens, vocab, max_len, sample_id="doc"):
    """Inference-side input with an empty target segment: [CLS] X [SEP]."""
    if not doc_tokens:
        raise ValueError(f"sample {sample_id}: empty document")
    doc_ids = np.array([vocab.id(t) for t in doc_tokens[: max_len - 2]], dtype=np.int64)
    m = len(doc_ids)
    src_len = m + 2
    ids = np.concatenate(
        [np.array([vocab.cls_id], dtype=np.int64), doc_ids, np.array([vocab.sep_id], dtype=np.int64)]
    )
    return EncodedInput(
        sample_id=sample_id,
        ids=ids,
        segments=np.zeros(src_len, dtype=np.int64),
        labels=np.full(m, O, dtype=np.int64),
        doc_positions=np.arange(1, 1 + m, dtype=np.int64),
        mask_positions=np.zeros(0, dtype=np.int64),
        gold_ids=np.zeros(0, dtype=np.int64),
        attn_mask=build_attention_mask(src_len, 0),
        src_len=src_len,
        tgt_len=0,
    )


def read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_jsonl(records, path):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
