import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from occlandmarks import metrics as M


def brute_ap(scores, labels):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    tp, total = 0, 0.0
    for k, i in enumerate(order, 1):
        if labels[i]:
            tp += 1
            total += tp / k
    return total / sum(labels)


def brute_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y]
    neg = [s for s, y in zip(scores, labels) if not y]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in itertools.product(pos, neg))
    return wins / (len(pos) * len(neg))


def test_nme_examples():
    gt = np.random.default_rng(0).random((100, 2))
    assert M.nme(gt, gt, 3.0) == 0.0
    pred = gt.copy()
    pred[5, 0] += 3.0
    assert M.nme(pred, gt, 3.0) == pytest.approx(0.01)
    assert M.nme([[3.0, 4.0], [0, 0]], [[0.0, 0.0], [0, 0]], 10.0) == pytest.approx(0.25)
    with pytest.raises(ValueError):
        M.nme(gt, gt, 0.0)
    with pytest.raises(ValueError):
        M.nme(gt[:5], gt, 1.0)


def test_nme_split_examples():
    gt = np.zeros((4, 2))
    pred = np.array([[1.0, 0], [0, 2.0], [3.0, 0], [0, 0]])
    vis, occ = M.nme_split(pred, gt, np.ones(4, dtype=int), 1.0)
    assert vis == pytest.approx(M.nme(pred, gt, 1.0)) and occ is None
    v = np.array([1, 1, 0, 0])
    pred_occ = np.array([[0, 0], [0, 0], [3.0, 0], [1.0, 0]])
    assert M.nme_split(pred_occ, gt, v, 2.0)[0] == 0.0
    vis, occ = M.nme_split(pred, gt, v, 2.0)
    assert vis == pytest.approx((0.5 + 1.0) / 2)
    assert occ == pytest.approx((1.5 + 0.0) / 2)


def test_ap_examples():
    assert M.occ_ap([0.9, 0.1], [1, 0]) == 1.0
    assert M.occ_ap([0.9, 0.1], [0, 1]) == 0.5
    assert M.occ_ap([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert M.occ_ap([0.3, 0.2], [0, 0]) is None


def test_ap_101_interpolation():
    assert M.occ_ap([0.9, 0.1], [1, 0], "101") == pytest.approx(1.0)
    # one positive at rank 2: best precision 0.5 for every recall level
    assert M.occ_ap([0.9, 0.1], [0, 1], "101") == pytest.approx(0.5)


def test_f1_examples():
    assert M.f1_at_threshold([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert M.f1_at_threshold([0.1, 0.2], [1, 0]) == 0.0
    assert M.confusion([0.6, 0.6, 0.4], [1, 0, 1], 0.5) == (1, 1, 1, 0)
    assert M.f1_at_threshold([0.6, 0.6, 0.4], [1, 0, 1], 0.5) == pytest.approx(0.5)


def test_auc_examples():
    assert M.roc_auc([0.9, 0.8, 0.1], [1, 1, 0]) == 1.0
    assert M.roc_auc([0.5] * 4, [1, 0, 1, 0]) == 0.5
    assert M.roc_auc([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 0]) == pytest.approx(brute_auc([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 0]))
    assert M.roc_auc([0.9, 0.5, 0.5, 0.1], [1, 1, 0, 0]) == pytest.approx(0.875)
    assert M.roc_auc([0.1, 0.2], [1, 1]) is None


def test_error_curve_examples():
    assert M.error_curve_stats([0.0, 0.0, 0.0]) == (0.0, 1.0)
    assert M.error_curve_stats([0.2, 0.2]) == (1.0, 0.0)
    fr, auc = M.error_curve_stats([0.02, 0.06, 0.2], 0.1)
    assert fr == pytest.approx(1 / 3)
    # piecewise-linear CED through (0,0), (0.02,1/3), (0.06,2/3), (0.1,2/3)
    assert auc == pytest.approx((0.02 * (1 / 3) / 2 + 0.04 * (1 / 3 + 2 / 3) / 2 + 0.04 * 2 / 3) / 0.1)
    with pytest.raises(ValueError):
        M.error_curve_stats([])


def test_input_validation():
    with pytest.raises(ValueError):
        M.occ_ap([0.1, 0.2], [1])
    with pytest.raises(ValueError):
        M.roc_auc([0.1, 0.2], [1, 2])
    with pytest.raises(ValueError):
        M.f1_at_threshold([np.nan, 0.2], [1, 0])


instances = st.integers(1, 50).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n),
))


@settings(max_examples=200, deadline=None)
@given(instances)
def test_ap_and_auc_match_brute_force(inst):
    scores, labels = inst
    if sum(labels) == 0:
        assert M.occ_ap(scores, labels) is None
    else:
        assert M.occ_ap(scores, labels) == pytest.approx(brute_ap(scores, labels), abs=1e-9)
    if 0 < sum(labels) < len(labels):
        assert M.roc_auc(scores, labels) == pytest.approx(brute_auc(scores, labels), abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.integers(0, 1)), min_size=1, max_size=50))
def test_monotone_transform_invariance(pairs):
    # scores on a coarse grid so the transform stays strictly monotone in floating point
    s = np.array([a / 20 for a, _ in pairs])
    labels = [b for _, b in pairs]
    t = np.exp(3 * s) - 7
    assert M.occ_ap(t, labels) == M.occ_ap(s, labels)
    assert M.roc_auc(t, labels) == M.roc_auc(s, labels)


@settings(max_examples=100, deadline=None)
@given(instances, st.floats(0.01, 0.99), st.floats(0.01, 0.99))
def test_confusion_counts_and_recall_monotone(inst, t1, t2):
    scores, labels = inst
    lo, hi = sorted((t1, t2))
    tp, fp, fn, tn = M.confusion(scores, labels, lo)
    assert tp == sum(1 for s, y in zip(scores, labels) if s >= lo and y)
    assert fp == sum(1 for s, y in zip(scores, labels) if s >= lo and not y)
    assert tp + fp + fn + tn == len(scores)
    tp_hi = M.confusion(scores, labels, hi)[0]
    assert tp_hi <= tp


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 0.3), min_size=1, max_size=50))
def test_fr_matches_count(nmes):
    fr, auc = M.error_curve_stats(nmes, 0.1)
    assert fr == pytest.approx(sum(e > 0.1 for e in nmes) / len(nmes), abs=1e-12)
    assert 0.0 <= auc <= 1.0


def test_macro_average():
    s = np.array([[0.9, 0.1], [0.1, 0.9]])
    y = np.array([[1, 0], [0, 0]])
    assert M.macro_average(M.occ_ap, s, y) == 1.0
    with pytest.raises(ValueError):
        M.macro_average(M.occ_ap, s[0], y[0])


def test_has_ties():
    assert M.has_ties([0.1, 0.3, 0.1])
    assert not M.has_ties([0.1, 0.3])
