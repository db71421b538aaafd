import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gaitsep import metrics as ME
from gaitsep.metrics import ConfusionCounts

from oracles import oracle_metrics, brute_force_ap


def assert_same(report, expected, tol):
    for name, value in expected.items():
        got = getattr(report, name)
        if value is None:
            assert got is None, name
        else:
            assert got == pytest.approx(value, abs=tol), name


def test_confusion_enumeration_and_symmetry():
    c = ME.confusion([1, 1, 0], [1, 0, 1])
    assert (c.tp, c.fn, c.fp, c.tn) == (1, 1, 1, 0)
    swapped = ME.confusion([1, 1, 0], [1, 0, 1], positive=0)
    assert (swapped.tp, swapped.tn, swapped.fp, swapped.fn) == (c.tn, c.tp, c.fn, c.fp)
    assert ME.confusion([0, 1], [0, 1]) == ConfusionCounts(1, 1, 0, 0)
    with pytest.raises(ValueError):
        ME.confusion([0, 1], [0])


def test_worked_example():
    r = ME.compute_metrics(ConfusionCounts(tp=8, tn=89, fp=2, fn=1))
    assert r.precision == pytest.approx(0.8, abs=1e-12)
    assert r.recall == pytest.approx(8 / 9, abs=1e-12)
    assert round(r.f1, 4) == 0.8421
    assert r.accuracy == pytest.approx(0.97, abs=1e-12)
    assert round(r.mcc, 4) == 0.8270
    assert round(r.gm, 4) == 0.9324


def test_perfect_and_degenerate_counts():
    r = ME.compute_metrics(ConfusionCounts(50, 50, 0, 0))
    assert all(getattr(r, n) == 1.0 for n in ("accuracy", "specificity", "recall", "precision", "f1", "mcc", "gm",
                                               "cohen_kappa"))
    r = ME.compute_metrics(ConfusionCounts(tp=0, tn=10, fp=0, fn=3))
    assert r.precision is None and r.f1 is None and r.mcc is None
    assert ME.format_percent(r.f1) == "—"
    with pytest.raises(ValueError):
        ME.compute_metrics(ConfusionCounts(0, 0, 0, 0))


counts = st.tuples(*[st.integers(0, 10**6)] * 4).filter(lambda c: sum(c) > 0)


@given(counts)
def test_metrics_match_exact_oracle(c):
    assert_same(ME.compute_metrics(ConfusionCounts(*c)), oracle_metrics(*c), 1e-12)


@given(counts)
def test_mcc_range_and_gm_identity(c):
    r = ME.compute_metrics(ConfusionCounts(*c))
    if r.mcc is not None:
        assert -1 - 1e-12 <= r.mcc <= 1 + 1e-12
    if r.gm is not None:
        assert r.gm ** 2 == pytest.approx(r.recall * r.specificity, abs=1e-12)


@given(st.integers(1, 500), st.integers(1, 500))
def test_mcc_is_one_exactly_for_perfect_predictions(tp, tn):
    assert ME.compute_metrics(ConfusionCounts(tp, tn, 0, 0)).mcc == 1.0


def test_kappa_vanishes_for_independent_predictions(rng):
    labels = (rng.random(100_000) < 0.3).astype(int)
    preds = rng.permutation(labels)  # same marginals, no association
    assert abs(ME.compute_metrics(ME.confusion(labels, preds)).cohen_kappa) < 0.02


def test_ap_worked_examples():
    assert ME.average_precision([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1]) == pytest.approx(
        1 / 3 + (1 / 3) * (2 / 3) + (1 / 3) * (3 / 4), abs=1e-12)
    assert ME.average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    assert ME.average_precision([0.5] * 8, [1, 0, 0, 1, 0, 0, 0, 0]) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        ME.average_precision([0.1, 0.2], [1, 1])


@st.composite
def score_sets(draw, max_n=50):
    n = draw(st.integers(2, max_n))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)))
    # few distinct values so ties are common
    scores = draw(st.lists(st.integers(0, 12), min_size=n, max_size=n))
    return np.array(scores) / 12.0, np.array(labels)


@given(score_sets())
def test_ap_matches_brute_force(data):
    scores, labels = data
    assert ME.average_precision(scores, labels) == pytest.approx(brute_force_ap(scores, labels), abs=1e-12)


@given(score_sets(), st.permutations(range(50)))
def test_ap_is_order_independent_and_monotone_invariant(data, perm):
    scores, labels = data
    ap = ME.average_precision(scores, labels)
    idx = np.array([i for i in perm if i < len(scores)])
    assert ME.average_precision(scores[idx], labels[idx]) == pytest.approx(ap, abs=1e-12)
    assert ME.average_precision(np.exp(3 * scores) - 7, labels) == pytest.approx(ap, abs=1e-12)


def test_aggregate_uses_population_std_and_skips_undefined():
    rows = [{"f1": 0.8, "accuracy": 0.5}, {"f1": 1.0, "accuracy": 0.7}, {"f1": None, "accuracy": 0.6}]
    agg = ME.aggregate(rows)
    assert agg["f1"] == {"mean": pytest.approx(0.9), "std": pytest.approx(0.1), "n": 2}
    assert agg["accuracy"]["std"] == pytest.approx(np.std([0.5, 0.7, 0.6]))
    assert agg["pr_auc"]["mean"] is None


def test_format_percent_one_decimal():
    assert ME.format_percent(0.91234) == "91.2"
    assert ME.format_percent(1.0) == "100.0"
