"""F1@5 / F1@M under the stem-then-dedup protocol, plus the diagnostic
statistics: unique-prediction counts, bag-of-words error, and the
distance between the two task streams.

F1@5 pads short prediction lists with non-matching placeholders, so the
precision denominator is always 5. Documents with no gold phrases in a
category are skipped for that category. Scores are macro-averaged.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .stem import stem_phrase


def stem_dedup(phrases):
    """Stem each phrase and drop later duplicates, keeping order."""
    out = []
    seen = set()
    for p in phrases:
        s = stem_phrase(p.lower())
        if s and s not in seen:
            seen.add(s)
            out.append(s)
    return out


def f1_at_5(preds_ranked, gold):
    """F1 over the top-5 predictions with padding; None when gold is empty."""
    gold_set = set(stem_dedup(gold))
    if not gold_set:
        return None
    preds = stem_dedup(preds_ranked)[:5]
    matches = sum(1 for p in preds if p in gold_set)
    precision = matches / 5.0
    recall = matches / len(gold_set)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def f1_at_m(preds, gold):
    """F1 over all predictions, no padding; None when gold is empty."""
    gold_set = set(stem_dedup(gold))
    if not gold_set:
        return None
    pred_list = stem_dedup(preds)
    if not pred_list:
        return 0.0
    matches = sum(1 for p in pred_list if p in gold_set)
    precision = matches / len(pred_list)
    recall = matches / len(gold_set)
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def split_gold(document, keyphrases):
    """Word-level present/absent partition of gold phrases (case-folded)."""
    words = document.lower().split()
    present, absent = [], []
    for k in keyphrases:
        kw = k.lower().split()
        n = len(kw)
        found = any(words[i : i + n] == kw for i in range(len(words) - n + 1)) if 0 < n <= len(words) else False
        (present if found else absent).append(k.lower())
    return present, absent


def bow_error(pred_phrases, gold_phrases):
    """L1 distance between word-count bags of the two phrase sets."""
    pred_bag = Counter(w for p in pred_phrases for w in p.lower().split())
    gold_bag = Counter(w for g in gold_phrases for w in g.lower().split())
    keys = set(pred_bag) | set(gold_bag)
    return float(sum(abs(pred_bag[k] - gold_bag[k]) for k in keys))


@dataclass
class EvalReport:
    present_f1_5: float = 0.0
    present_f1_m: float = 0.0
    absent_f1_5: float = 0.0
    absent_f1_m: float = 0.0
    total_f1_m: float = 0.0
    avg_unique_present: float = 0.0
    avg_unique_absent: float = 0.0
    bow_error: float = 0.0
    n_docs: int = 0
    stream_distance: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(self.__dict__)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    CSV_FIELDS = [
        "present_f1_5", "present_f1_m", "absent_f1_5", "absent_f1_m",
        "total_f1_m", "avg_unique_present", "avg_unique_absent", "bow_error", "n_docs",
    ]

    def csv_row(self):
        return [repr(getattr(self, f)) for f in self.CSV_FIELDS]


def _mean(values):
    return float(np.mean(values)) if values else 0.0


def evaluate(gold_records, pred_records):
    """Score prediction records against gold corpus records by id."""
    preds_by_id = {r["id"]: r for r in pred_records}
    p5, pm, a5, am, tm, bows, n_p, n_a = [], [], [], [], [], [], [], []
    n_docs = 0
    for gold in gold_records:
        pred = preds_by_id.get(gold["id"])
        if pred is None:
            continue
        n_docs += 1
        gold_present, gold_absent = split_gold(gold["document"], gold["keyphrases"])
        pred_present = [p["phrase"] for p in pred.get("present", [])]
        pred_absent = list(pred.get("absent", []))

        for scores, preds_list, gold_list in (
            ((p5, pm), pred_present, gold_present),
            ((a5, am), pred_absent, gold_absent),
        ):
            s5 = f1_at_5(preds_list, gold_list)
            sm = f1_at_m(preds_list, gold_list)
            if s5 is not None:
                scores[0].append(s5)
            if sm is not None:
                scores[1].append(sm)
        total = f1_at_m(pred_present + pred_absent, gold_present + gold_absent)
        if total is not None:
            tm.append(total)
        bows.append(bow_error(pred_present + pred_absent, gold_present + gold_absent))
        n_p.append(len(stem_dedup(pred_present)))
        n_a.append(len(stem_dedup(pred_absent)))

    return EvalReport(
        present_f1_5=_mean(p5),
        present_f1_m=_mean(pm),
        absent_f1_5=_mean(a5),
        absent_f1_m=_mean(am),
        total_f1_m=_mean(tm),
        avg_unique_present=_mean(n_p),
        avg_unique_absent=_mean(n_a),
        bow_error=_mean(bows),
        n_docs=n_docs,
    )


def count_stats(pred_records):
    """Average unique (post-stem) present and absent predictions per doc."""
    n_p = [len(stem_dedup([p["phrase"] for p in r.get("present", [])])) for r in pred_records]
    n_a = [len(stem_dedup(list(r.get("absent", [])))) for r in pred_records]
    return _mean(n_p), _mean(n_a)


def stream_distance(model, encoded_inputs, n_pairs, rng):
    """Euclidean distances between paired task-stream vectors.

    Samples (document, position) pairs over the document tokens of the
    given inputs and measures ||p_i - a_i|| at the top relation layer.
    """
    if n_pairs == 0 or not encoded_inputs:
        return {"n_pairs": 0, "mean": 0.0, "min": 0.0, "max": 0.0, "distances": []}
    per_doc = []
    for enc in encoded_inputs:
        p_stream, a_stream = model.streams_for(enc)
        diff = p_stream.data[enc.doc_positions] - a_stream.data[enc.doc_positions]
        per_doc.append(np.sqrt((diff * diff).sum(axis=1)))
    pool = np.concatenate(per_doc)
    idx = rng.integers(0, len(pool), size=n_pairs)
    d = pool[idx]
    return {
        "n_pairs": int(n_pairs),
        "mean": float(d.mean()),
        "min": float(d.min()),
        "max": float(d.max()),
        "distances": d.tolist(),
    }
