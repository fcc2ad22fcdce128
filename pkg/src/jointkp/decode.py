"""Turning a trained model into keyphrase sets.

Present phrases come from the argmax BIXO sequence (orphan I/X tokens
start a new phrase so nothing is dropped), scored by the mean predicted
label probability. Absent phrases come from iterative mask-predict beam
search over the target segment: append one [MASK], run the masked
encoder, expand each beam with its top-k tokens, keep the global top-k
by cumulative log-probability. A beam finishes on [SEP] or at the length
cap; no length normalization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import B, DELIM, O, build_attention_mask, detokenize, source_only_input
from .model import mask_to_bias
from .stem import stem_phrase


@dataclass
class ScoredPhrase:
    tokens: list
    surface: str
    score: float
    origin: str  # "present" | "absent"
    rank: int = 0
    position: int = 0  # first document position, used for tie-breaks


@dataclass
class PredictionSet:
    sample_id: str
    present: list = field(default_factory=list)  # ScoredPhrase, score-desc
    absent: list = field(default_factory=list)  # ScoredPhrase, sequence order

    @property
    def present_top5(self):
        return self.present[:5]

    @property
    def absent_top5(self):
        return self.absent[:5]

    def to_record(self):
        return {
            "id": self.sample_id,
            "present": [{"phrase": p.surface, "score": p.score} for p in self.present],
            "absent": [p.surface for p in self.absent],
        }


def extract_present(y_p, doc_tokens):
    """Decode argmax labels into scored phrases, deduped after stemming."""
    y_p = np.asarray(y_p)
    if len(doc_tokens) == 0:
        return []
    arg = np.argmax(y_p, axis=1)
    probs = y_p[np.arange(len(doc_tokens)), arg]

    spans = []  # (tokens, scores, start)
    current = None
    for i, (tok, lab) in enumerate(zip(doc_tokens, arg)):
        if lab == O:
            current = None
            continue
        if lab == B or current is None:
            current = ([], [], i)
            spans.append(current)
        current[0].append(tok)
        current[1].append(probs[i])

    phrases = []
    for tokens, scores, start in spans:
        phrases.append(
            ScoredPhrase(
                tokens=list(tokens),
                surface=detokenize(tokens),
                score=float(np.mean(scores)),
                origin="present",
                position=start,
            )
        )

    best = {}
    for p in phrases:
        key = stem_phrase(p.surface)
        kept = best.get(key)
        if kept is None or p.score > kept.score:
            best[key] = p
    ranked = sorted(best.values(), key=lambda p: (-p.score, p.position))
    for r, p in enumerate(ranked):
        p.rank = r
    return ranked


def model_step_fn(model, source_enc, vocab):
    """Next-token log-prob function over a batch of partial targets.

    Each prefix gets one appended [MASK]; the batch runs through the
    masked encoder in a single forward (inference only, no grads).
    """
    src_ids = source_enc.ids
    src_len = source_enc.src_len
    mask_id = vocab.mask_id

    def step_fn(prefixes):
        k = len(prefixes[0])
        tgt_len = k + 1
        ids = np.empty((len(prefixes), src_len + tgt_len), dtype=np.int64)
        for b, toks in enumerate(prefixes):
            ids[b, :src_len] = src_ids
            ids[b, src_len : src_len + k] = toks
            ids[b, src_len + k] = mask_id
        segments = np.concatenate(
            [np.zeros(src_len, dtype=np.int64), np.ones(tgt_len, dtype=np.int64)]
        )
        segments = np.broadcast_to(segments, ids.shape)
        bias = mask_to_bias(build_attention_mask(src_len, tgt_len))
        h = model.hidden(ids, segments, bias)
        _, a_stream = model.task_streams(h, bias)
        last = a_stream.data[:, -1, :]
        logits = last @ model.store["head.absent.w"].data + model.store["head.absent.b"].data
        logits = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return np.log(e / e.sum(axis=1, keepdims=True))

    return step_fn


def beam_search(step_fn, sep_id, beam_size, max_target_len):
    """Top-k search over step_fn; returns the best (token ids, log-prob).

    A beam finishes on sep or at the length cap; cumulative log-prob,
    no length normalization. step_fn(prefixes) -> [len(prefixes), V].
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    if max_target_len < 1:
        raise ValueError("max_target_len must be >= 1")
    live = [([], 0.0)]
    finished = []
    for _ in range(max_target_len):
        logp = step_fn([toks for toks, _ in live])
        candidates = []
        for b, (toks, cum) in enumerate(live):
            # every live beam's terminator is banked outright: it competes
            # for the answer but never for a live slot
            finished.append((cum + float(logp[b, sep_id]), toks))
            top = np.argpartition(-logp[b], min(beam_size, logp.shape[1]) - 1)[:beam_size]
            for tok in top:
                if tok != sep_id:
                    candidates.append((cum + float(logp[b, tok]), toks + [int(tok)]))
        candidates.sort(key=lambda c: -c[0])
        live = [(toks, cum) for cum, toks in candidates[:beam_size]]
        if not live:
            break
        # token log-probs are <= 0, so once the best finished beam already
        # beats every live cumulative, no extension can overtake it
        if finished and max(c for c, _ in finished) >= max(c for _, c in live):
            break
    finished.extend((cum, toks) for toks, cum in live)  # length-capped beams
    return max(finished, key=lambda c: c[0])[1]


def generate_absent(model, source_enc, vocab, beam_size, max_target_len):
    """Beam-searched mask-predict generation; returns the best token-id list."""
    return beam_search(model_step_fn(model, source_enc, vocab), vocab.sep_id,
                       beam_size, max_target_len)


def split_absent(tokens):
    """Split a decoded target on ";" into deduped phrases in sequence order."""
    groups = [[]]
    for t in tokens:
        if t == DELIM:
            groups.append([])
        else:
            groups[-1].append(t)
    phrases = []
    seen = set()
    for g in groups:
        if not g:
            continue
        surface = detokenize(g)
        key = stem_phrase(surface)
        if key in seen or not surface.strip():
            continue
        seen.add(key)
        phrases.append(ScoredPhrase(tokens=list(g), surface=surface, score=0.0, origin="absent", rank=len(phrases)))
    return phrases


def predict(model, vocab, raw_doc, beam_size=5, max_target_len=16, sample_id="doc"):
    """Tokenize -> label extraction + generation for one raw document."""
    from .data import tokenize_text

    doc_tokens = tokenize_text(raw_doc, vocab)
    if not doc_tokens:
        raise ValueError(f"sample {sample_id}: document has no tokens")
    max_src = model.config.max_len - max_target_len - 1
    doc_tokens = doc_tokens[: max_src - 2]
    enc = source_only_input(doc_tokens, vocab, max_src, sample_id=sample_id)

    p_stream, _ = model.streams_for(enc)
    y_p = model.label_probs(p_stream, enc.doc_positions)
    present = extract_present(y_p.data, doc_tokens)

    generated = generate_absent(model, enc, vocab, beam_size, max_target_len)
    absent = split_absent([vocab.token(t) for t in generated])
    return PredictionSet(sample_id=sample_id, present=present, absent=absent)
