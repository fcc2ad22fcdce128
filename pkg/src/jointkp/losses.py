"""Training objectives: weighted label cross-entropy, masked-token
cross-entropy, the bag-of-words constraint with its log weight ramp, and
their combination.

The bag constraint compares predicted against gold token-count bags over
a small per-sample token set (gold keyphrase tokens, optionally extended
by the currently predicted ones), so its gradient touches only those
vocabulary columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import O


def _zero():
    return Tensor(np.zeros((), dtype=np.float32))


def pke_loss(y_p, gold_labels, w_c):
    """Cross-entropy over positions with weight w_c on the B/I/X classes."""
    if w_c <= 0:
        raise ValueError("w_c must be positive")
    gold_labels = np.asarray(gold_labels)
    m = len(gold_labels)
    if m == 0:
        return _zero()
    picked = ad.pick(y_p, np.arange(m), gold_labels)
    weights = np.where(gold_labels == O, 1.0, w_c).astype(np.float32)
    return ad.neg(ad.tsum(ad.mul(ad.log(picked), weights)))


def akg_loss(y_a, gold_ids):
    """Cross-entropy over the masked target positions."""
    gold_ids = np.asarray(gold_ids)
    n = len(gold_ids)
    if n == 0:
        return _zero()
    picked = ad.pick(y_a, np.arange(n), gold_ids)
    return ad.neg(ad.tsum(ad.log(picked)))


@dataclass
class BagSupport:
    """Per-sample token set the bag constraint is computed over."""

    token_ids: np.ndarray  # int64 [k], unique
    gold_counts: np.ndarray  # float32 [k]
    index: dict  # token id -> slot

    def __len__(self):
        return len(self.token_ids)


def bag_support(gold_token_ids, predicted_token_ids=()):
    """Union of gold keyphrase tokens and (optionally) predicted ones."""
    ids = list(dict.fromkeys(list(gold_token_ids) + list(predicted_token_ids)))
    token_ids = np.array(ids, dtype=np.int64)
    index = {tid: i for i, tid in enumerate(ids)}
    gold_counts = np.zeros(len(ids), dtype=np.float32)
    for tid in gold_token_ids:
        gold_counts[index[tid]] += 1.0
    return BagSupport(token_ids=token_ids, gold_counts=gold_counts, index=index)


def predicted_present_bow(y_p, doc_ids, support):
    """Sum of argmax-label probabilities at positions labeled as keyphrase.

    Positions whose argmax is O contribute nothing; the gradient flows
    through the selected entries only.
    """
    k = len(support)
    if k == 0 or len(doc_ids) == 0:
        return Tensor(np.zeros(k, dtype=np.float32))
    arg = np.argmax(y_p.data, axis=1)
    rows = [i for i in range(len(doc_ids)) if arg[i] != O and doc_ids[i] in support.index]
    if not rows:
        return Tensor(np.zeros(k, dtype=np.float32))
    rows = np.array(rows)
    vals = ad.pick(y_p, rows, arg[rows])
    bins = np.array([support.index[doc_ids[i]] for i in rows])
    return ad.bin_sum(vals, bins, k)


def predicted_absent_bow(y_a, support):
    """Generation probability mass accumulated per support token."""
    k = len(support)
    if k == 0 or y_a.data.shape[0] == 0:
        return Tensor(np.zeros(k, dtype=np.float32))
    return ad.tsum(ad.select_cols(y_a, support.token_ids), axis=0)


def bow_loss(v_present, v_absent, support):
    """Mean squared error between predicted and gold bags; 0 on empty support."""
    k = len(support)
    if k == 0:
        return _zero()
    diff = ad.sub(ad.add(v_present, v_absent), Tensor(support.gold_counts))
    return ad.mean(ad.mul(diff, diff))


def bow_constraint(y_p, y_a, doc_ids, gold_token_ids, dynamic=True):
    """Assemble the support set and evaluate the bag loss for one sample."""
    predicted = []
    if dynamic:
        if len(doc_ids):
            arg = np.argmax(y_p.data, axis=1)
            predicted.extend(int(doc_ids[i]) for i in range(len(doc_ids)) if arg[i] != O)
        if y_a.data.shape[0]:
            predicted.extend(int(t) for t in np.argmax(y_a.data, axis=1))
    support = bag_support(gold_token_ids, predicted)
    return bow_loss(predicted_present_bow(y_p, doc_ids, support), predicted_absent_bow(y_a, support), support)


@dataclass
class Schedule:
    """Log ramp for the bag-constraint weight."""

    w_m: float
    t_total: int

    def __post_init__(self):
        if self.w_m <= 0:
            raise ValueError("w_m must be positive")
        if self.t_total < 1:
            raise ValueError("t_total must be at least 1")


def bwc_weight(t, schedule):
    """log((e^w_m - 1) / t_total * t + 1): 0 at t=0, w_m at t=t_total."""
    if not 0 <= t <= schedule.t_total:
        raise ValueError(f"step {t} outside [0, {schedule.t_total}]")
    return math.log1p(math.expm1(schedule.w_m) * (t / schedule.t_total))


def total_loss(l_pke, l_akg, l_bow, t, schedule):
    """L_PKE + L_AKG + w(t) * L_BoW; schedule None means no bag term."""
    base = ad.add(l_pke, l_akg)
    if schedule is None:
        return base
    return ad.add(base, ad.mul(l_bow, bwc_weight(t, schedule)))
