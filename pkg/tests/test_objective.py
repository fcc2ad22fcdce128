"""Loss values against hand-derived oracles, the log weight ramp, and
gradient sparsity of the bag constraint."""

import math

import numpy as np
import pytest

from jointkp.autodiff import Graph, Tensor, backward
from jointkp.data import B, I, O
from jointkp.losses import (
    Schedule,
    akg_loss,
    bag_support,
    bow_constraint,
    bow_loss,
    bwc_weight,
    pke_loss,
    predicted_absent_bow,
    predicted_present_bow,
    total_loss,
)

LN4 = 1.3862943611198906
LN100 = 4.605170185988091


def onehot(rows, n):
    out = np.zeros((len(rows), n), dtype=np.float32)
    for i, r in enumerate(rows):
        out[i, r] = 1.0
    return out


def test_pke_perfect_prediction_near_zero():
    y = Tensor(onehot([B, I, O], 4))
    assert float(pke_loss(y, [B, I, O], 5.0).data) < 1e-6


def test_pke_uniform_single_o_position():
    y = Tensor(np.full((1, 4), 0.25, dtype=np.float32))
    assert math.isclose(float(pke_loss(y, [O], 5.0).data), LN4, rel_tol=1e-6)


def test_pke_positive_label_weighted():
    y = Tensor(np.full((1, 4), 0.25, dtype=np.float32))
    assert math.isclose(float(pke_loss(y, [B], 5.0).data), 5.0 * LN4, rel_tol=1e-6)


def test_pke_unit_weight_equals_plain_cross_entropy():
    rng = np.random.default_rng(0)
    y = rng.dirichlet(np.ones(4), size=6).astype(np.float32)
    gold = rng.integers(0, 4, size=6)
    weighted = float(pke_loss(Tensor(y), gold, 1.0).data)
    plain = -np.log(y[np.arange(6), gold]).sum()
    assert math.isclose(weighted, plain, rel_tol=1e-6)


def test_pke_rejects_nonpositive_weight():
    with pytest.raises(ValueError):
        pke_loss(Tensor(np.full((1, 4), 0.25)), [O], 0.0)


def test_akg_zero_masked_positions():
    y = Tensor(np.zeros((0, 100), dtype=np.float32))
    assert float(akg_loss(y, []).data) == 0.0


def test_akg_uniform_hundred_vocab():
    y = Tensor(np.full((1, 100), 0.01, dtype=np.float32))
    assert math.isclose(float(akg_loss(y, [17]).data), LN100, rel_tol=1e-6)


def test_akg_perfect_prediction_near_zero():
    y = Tensor(onehot([3], 100))
    assert float(akg_loss(y, [3]).data) < 1e-6


def test_present_bow_argmax_selection_rule():
    # doc [a, b, a]; argmax labels [B, O, B] with max probs .9/.8/.7
    y = np.array([
        [0.9, 0.04, 0.03, 0.03],
        [0.1, 0.05, 0.05, 0.8],
        [0.7, 0.1, 0.1, 0.1],
    ], dtype=np.float32)
    support = bag_support([7])  # token a only
    v = predicted_present_bow(Tensor(y), np.array([7, 8, 7]), support)
    assert np.allclose(v.data, [1.6], atol=1e-6)


def test_present_bow_all_outside_is_empty():
    y = np.array([[0.1, 0.1, 0.1, 0.7]] * 3, dtype=np.float32)
    support = bag_support([7, 8])
    v = predicted_present_bow(Tensor(y), np.array([7, 8, 7]), support)
    assert np.allclose(v.data, 0.0)


def test_present_bow_certain_single_occurrence():
    y = onehot([B], 4)
    support = bag_support([5])
    v = predicted_present_bow(Tensor(y), np.array([5]), support)
    assert np.allclose(v.data, [1.0])


def test_absent_bow_accumulates():
    support = bag_support([3])
    y = np.zeros((2, 10), dtype=np.float32)
    y[:, 3] = 0.5
    v = predicted_absent_bow(Tensor(y), support)
    assert np.allclose(v.data, [1.0], atol=1e-7)


def test_absent_bow_single_position():
    support = bag_support([3])
    y = np.zeros((1, 10), dtype=np.float32)
    y[0, 3] = 0.6
    assert np.allclose(predicted_absent_bow(Tensor(y), support).data, [0.6])


def test_absent_bow_full_vocab_mass_equals_mask_count():
    rng = np.random.default_rng(1)
    y = rng.dirichlet(np.ones(12), size=5).astype(np.float32)
    support = bag_support(list(range(12)))
    v = predicted_absent_bow(Tensor(y), support)
    assert math.isclose(float(v.data.sum()), 5.0, rel_tol=1e-5)


def test_bow_loss_zero_at_match():
    support = bag_support([1, 2])
    v = Tensor(support.gold_counts.copy())
    zero = Tensor(np.zeros(2, dtype=np.float32))
    assert float(bow_loss(v, zero, support).data) == 0.0


def test_bow_loss_hand_case():
    support = bag_support([9, 9])  # one word, gold count 2
    zero = Tensor(np.zeros(1, dtype=np.float32))
    assert math.isclose(float(bow_loss(zero, zero, support).data), 4.0, rel_tol=1e-6)


def test_bow_loss_mean_invariant_to_duplicated_error():
    a = bag_support([1])
    b = bag_support([1, 2])
    zero1 = Tensor(np.zeros(1, dtype=np.float32))
    zero2 = Tensor(np.zeros(2, dtype=np.float32))
    # both words have gold count 1 and prediction 0: identical per-word error
    assert math.isclose(
        float(bow_loss(zero1, zero1, a).data),
        float(bow_loss(zero2, zero2, b).data),
        rel_tol=1e-7,
    )


def test_bow_loss_empty_support_is_zero():
    support = bag_support([])
    z = Tensor(np.zeros(0, dtype=np.float32))
    assert float(bow_loss(z, z, support).data) == 0.0


def test_bwc_weight_endpoints_exact():
    s = Schedule(w_m=1.0, t_total=1000)
    assert bwc_weight(0, s) == 0.0
    assert abs(bwc_weight(1000, s) - 1.0) <= math.ulp(1.0)
    s2 = Schedule(w_m=2.5, t_total=7)
    assert abs(bwc_weight(7, s2) - 2.5) <= math.ulp(2.5)


def test_bwc_weight_mid_value():
    s = Schedule(w_m=1.0, t_total=1000)
    assert math.isclose(bwc_weight(500, s), 0.6201145069582775, rel_tol=1e-12)


def test_bwc_weight_monotone_and_concave():
    s = Schedule(w_m=1.0, t_total=10_000)
    w = np.array([bwc_weight(t, s) for t in range(0, 10_001)])
    diffs = np.diff(w)
    assert (diffs >= 0).all()
    assert (np.diff(diffs) <= 1e-12).all()


def test_bwc_weight_range_checked():
    s = Schedule(w_m=1.0, t_total=10)
    with pytest.raises(ValueError):
        bwc_weight(11, s)


def test_schedule_invariants():
    with pytest.raises(ValueError):
        Schedule(w_m=0.0, t_total=10)
    with pytest.raises(ValueError):
        Schedule(w_m=1.0, t_total=0)


def scalar(v):
    return Tensor(np.asarray(v, dtype=np.float32))


def test_total_loss_zero_weight_at_start():
    s = Schedule(w_m=1.0, t_total=10)
    out = total_loss(scalar(1.0), scalar(2.0), scalar(99.0), 0, s)
    assert math.isclose(float(out.data), 3.0, rel_tol=1e-7)


def test_total_loss_zero_bag_term_is_time_independent():
    s = Schedule(w_m=1.0, t_total=10)
    vals = {float(total_loss(scalar(1.0), scalar(2.0), scalar(0.0), t, s).data) for t in (0, 5, 10)}
    assert len(vals) == 1


def test_total_loss_full_weight_at_end():
    s = Schedule(w_m=1.0, t_total=10)
    out = total_loss(scalar(1.0), scalar(2.0), scalar(3.0), 10, s)
    assert math.isclose(float(out.data), 6.0, rel_tol=1e-6)


def test_bag_gradient_touches_only_support_columns():
    rng = np.random.default_rng(2)
    v_size = 30
    y_a = Tensor(rng.dirichlet(np.ones(v_size), size=4).astype(np.float32), requires_grad=True)
    y_p = Tensor(rng.dirichlet(np.ones(4), size=3).astype(np.float32), requires_grad=True)
    doc_ids = np.array([3, 4, 3])
    gold = [3, 9, 9]
    with Graph() as g:
        loss = bow_constraint(y_p, y_a, doc_ids, gold, dynamic=False)
    backward(loss, g)
    support_cols = set(bag_support(gold).token_ids.tolist())
    touched = set(np.flatnonzero(np.abs(y_a.grad).sum(axis=0)).tolist())
    assert touched <= support_cols and touched
