import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from namkit.errors import UndefinedMetricError, UsageError
from namkit.metrics import mse, pr_auc, rmse, roc_auc
from namkit.tensor import make_rng


def roc_auc_pairwise(scores, y):
    """O(n^2) oracle: P(score_pos > score_neg) + 0.5 P(tie)."""
    pos = scores[y == 1]
    neg = scores[y == 0]
    wins = ties = 0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1
            elif sp == sn:
                ties += 1
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def pr_auc_sweep(scores, y):
    """Average precision by sweeping thresholds at distinct scores."""
    order = np.argsort(-scores, kind="mergesort")
    y = y[order]
    s = scores[order]
    n_pos = y.sum()
    ap = 0.0
    tp = fp = 0
    prev_recall = 0.0
    i = 0
    n = len(y)
    while i < n:
        j = i
        while j < n and s[j] == s[i]:
            j += 1
        tp += y[i:j].sum()
        fp += (j - i) - y[i:j].sum()
        recall = tp / n_pos
        precision = tp / (tp + fp)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
        i = j
    return ap


def random_case(rng, n, ties=False):
    y = (rng.random(n) < 0.4).astype(float)
    if y.sum() == 0:
        y[0] = 1.0
    if y.sum() == n:
        y[0] = 0.0
    if ties:
        scores = rng.integers(0, max(2, n // 4), size=n).astype(float)
    else:
        scores = rng.standard_normal(n)
    return scores, y


def test_roc_auc_matches_pairwise_oracle():
    rng = make_rng(0)
    for trial in range(50):
        n = int(rng.integers(5, 300))
        scores, y = random_case(rng, n, ties=trial % 2 == 0)
        assert abs(roc_auc(scores, y) - roc_auc_pairwise(scores, y)) < 1e-12


def test_pr_auc_matches_sweep_oracle():
    rng = make_rng(1)
    for trial in range(50):
        n = int(rng.integers(5, 300))
        scores, y = random_case(rng, n, ties=trial % 2 == 0)
        assert abs(pr_auc(scores, y) - pr_auc_sweep(scores, y)) < 1e-10


def test_roc_auc_known_values():
    y = np.array([0.0, 0.0, 1.0, 1.0])
    assert roc_auc(np.array([0.1, 0.2, 0.8, 0.9]), y) == 1.0
    assert roc_auc(np.array([0.9, 0.8, 0.2, 0.1]), y) == 0.0
    assert roc_auc(np.array([0.5, 0.5, 0.5, 0.5]), y) == 0.5
    # one reversed pair out of four
    assert roc_auc(np.array([0.1, 0.8, 0.7, 0.9]), y) == 0.75


def test_pr_auc_known_values():
    assert pr_auc(np.array([0.1, 0.9]), np.array([0.0, 1.0])) == 1.0
    # all tied scores: precision = prevalence at the single sweep point
    y3 = np.array([1.0, 0.0, 0.0, 1.0])
    assert pr_auc(np.full(4, 0.5), y3) == 0.5


def test_binary_metrics_require_both_classes():
    with pytest.raises(UndefinedMetricError):
        roc_auc(np.linspace(0, 1, 5), np.ones(5))
    with pytest.raises(UndefinedMetricError):
        roc_auc(np.linspace(0, 1, 5), np.zeros(5))
    with pytest.raises(UndefinedMetricError):
        pr_auc(np.linspace(0, 1, 5), np.zeros(5))


def test_binary_metrics_validate_inputs():
    with pytest.raises(UsageError):
        roc_auc(np.array([0.5]), np.array([0.0, 1.0]))
    with pytest.raises(UsageError):
        roc_auc(np.zeros(0), np.zeros(0))
    with pytest.raises(UndefinedMetricError):
        roc_auc(np.array([0.1, 0.9]), np.array([0.0, 2.0]))


def test_roc_auc_invariant_to_monotone_transforms():
    rng = make_rng(2)
    scores, y = random_case(rng, 120)
    base = roc_auc(scores, y)
    assert roc_auc(3.0 * scores + 10.0, y) == base
    assert roc_auc(np.tanh(scores), y) == pytest.approx(base, abs=1e-12)


def test_mse_rmse_relation_and_oracles():
    rng = make_rng(3)
    y = rng.standard_normal(64)
    p = rng.standard_normal(64)
    ref = float(np.mean((p - y) ** 2))
    assert abs(mse(p, y) - ref) < 1e-15
    assert abs(rmse(p, y) ** 2 - mse(p, y)) < 1e-12
    assert mse(y, y) == 0.0
    with pytest.raises(UsageError):
        mse(np.zeros(3), np.zeros(4))
    with pytest.raises(UsageError):
        rmse(np.zeros(0), np.zeros(0))


def test_auc_bounds_and_complement():
    # flipping score order maps auc to 1 - auc when there are no ties
    rng = make_rng(4)
    scores, y = random_case(rng, 80)
    a = roc_auc(scores, y)
    assert 0.0 <= a <= 1.0
    assert roc_auc(-scores, y) == pytest.approx(1.0 - a, abs=1e-12)


# coarse score pool so tied scores are common
_cases = st.lists(
    st.tuples(st.sampled_from([0.0, 1.0]),
              st.sampled_from([-1.0, 0.0, 0.25, 0.5, 1.0, 3.5])),
    min_size=4, max_size=60,
).filter(lambda rows: 0 < sum(r[0] for r in rows) < len(rows))


@given(_cases)
def test_roc_auc_label_flip_complement(rows):
    # swapping the classes swaps wins and losses; ties stay ties
    y = np.array([r[0] for r in rows])
    s = np.array([r[1] for r in rows])
    assert roc_auc(s, y) + roc_auc(s, 1.0 - y) == pytest.approx(1.0, abs=1e-12)


@given(_cases)
def test_roc_auc_always_matches_pairwise_oracle(rows):
    y = np.array([r[0] for r in rows])
    s = np.array([r[1] for r in rows])
    assert abs(roc_auc(s, y) - roc_auc_pairwise(s, y)) < 1e-12
