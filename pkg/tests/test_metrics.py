import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import average_precision_score, roc_auc_score

from attrib_audit.metrics import UndefinedMetricError, auprc, auroc
from oracles import pairwise_auroc


def test_auroc_worked_example():
    scores, labels = [0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]
    assert auroc(scores, labels) == pairwise_auroc(scores, labels) == 0.75


def test_auroc_perfect_and_ties():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_single_class_undefined():
    with pytest.raises(UndefinedMetricError):
        auroc([0.1, 0.2], [1, 1])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(-5, 5), st.booleans()), min_size=2, max_size=40))
def test_auroc_matches_pairwise_with_ties(pairs):
    scores = [float(s) for s, _ in pairs]
    labels = [int(y) for _, y in pairs]
    if len(set(labels)) < 2:
        return
    assert auroc(scores, labels) == pytest.approx(pairwise_auroc(scores, labels), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000))
def test_auroc_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    s = rng.normal(size=30)
    y = np.r_[0, 1, rng.integers(0, 2, 28)]
    base = auroc(s, y)
    assert auroc(np.exp(2 * s) + 3, y) == pytest.approx(base, abs=1e-12)
    assert auroc(np.arctan(s), y) == pytest.approx(base, abs=1e-12)


def test_auprc_perfect():
    assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_auprc_single_positive_second_of_three():
    # precision 1/2 at the only recall step
    assert auprc([0.9, 0.5, 0.1], [0, 1, 0]) == 0.5


def test_auprc_positives_last():
    # positives at ranks n-p+1..n: AP = (1/p) sum_k k/(n-p+k)
    n, p = 20, 4
    scores = np.arange(n, 0, -1, dtype=float)
    labels = np.r_[np.zeros(n - p), np.ones(p)]
    expected = sum(k / (n - p + k) for k in range(1, p + 1)) / p
    assert auprc(scores, labels) == pytest.approx(expected, abs=1e-15)
    # worst ranking: AP never exceeds prevalence, and equals it for a single positive
    assert auprc(scores, labels) <= p / n
    assert auprc(scores, np.r_[np.zeros(n - 1), 1.0]) == pytest.approx(1 / n, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auprc_matches_sklearn_with_ties(pairs):
    scores = [float(s) for s, _ in pairs]
    labels = [int(y) for _, y in pairs]
    if sum(labels) == 0:
        return
    assert auprc(scores, labels) == pytest.approx(average_precision_score(labels, scores), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_auroc_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 8, 50).astype(float)
    y = np.r_[0, 1, rng.integers(0, 2, 48)]
    assert auroc(s, y) == pytest.approx(roc_auc_score(y, s), abs=1e-12)
