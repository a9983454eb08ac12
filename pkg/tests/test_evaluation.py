import logging

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oscnn import evaluation as E


def ranked_ap(scores, labels):
    return E.average_precision(E.pr_curve(scores, labels))


def test_worked_example_curve():
    curve = E.pr_curve([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1])
    np.testing.assert_allclose(curve.recall, [1 / 3, 1 / 3, 2 / 3, 1])
    np.testing.assert_allclose(curve.precision, [1, 1 / 2, 2 / 3, 3 / 4])
    assert curve.positives == 3


def test_worked_example_ap():
    expected = (1 + 2 / 3 + 3 / 4) / 3
    assert ranked_ap([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1]) == pytest.approx(expected, abs=1e-12)
    assert E.ap_oracle([0.9, 0.8, 0.7, 0.6], [1, 0, 1, 1]) == pytest.approx(expected, abs=1e-12)
    assert round(expected, 5) == 0.80556


def test_perfect_ranking():
    curve = E.pr_curve([5, 4, 3, 2, 1], [1, 1, 0, 0, 0])
    assert (curve.precision[:2] == 1).all()
    assert E.average_precision(curve) == 1.0
    assert E.ap_oracle([5, 4, 3, 2, 1], [1, 1, 0, 0, 0]) == 1.0


def test_all_positive():
    curve = E.pr_curve([0.3, 0.1, 0.2], [1, 1, 1])
    assert (curve.precision == 1).all() and curve.recall[-1] == 1
    assert (np.diff(curve.recall) > 0).all()


def test_single_positive_last():
    assert ranked_ap([4, 3, 2, 1], [0, 0, 0, 1]) == 0.25


def test_single_positive_first_oracle():
    assert E.ap_oracle([9, 1, 2, 3, 4], [1, 0, 0, 0, 0]) == 1.0


def test_ties_break_by_index():
    # positive listed first among equal scores ranks first
    assert ranked_ap([0.5, 0.5], [1, 0]) == 1.0
    assert ranked_ap([0.5, 0.5], [0, 1]) == 0.5


def test_zero_positives_is_undefined():
    with pytest.raises(E.UndefinedAPError):
        E.pr_curve([0.1, 0.2], [0, 0])
    with pytest.raises(E.UndefinedAPError):
        E.ap_oracle([0.1, 0.2], [0, 0])


def test_curve_input_validation():
    with pytest.raises(ValueError):
        E.pr_curve([0.1, 0.2], [1])


def random_instance(rng):
    n = int(rng.integers(1, 21))
    labels = rng.integers(0, 2, size=n)
    labels[rng.integers(0, n)] = 1
    if rng.random() < 0.5:
        scores = rng.integers(0, 4, size=n).astype(np.float64)  # heavy ties
    else:
        scores = rng.random(n)
    return scores, labels


def test_oracle_agreement_200_instances():
    rng = np.random.default_rng(7)
    tied = 0
    for _ in range(200):
        scores, labels = random_instance(rng)
        tied += len(np.unique(scores)) < len(scores)
        assert abs(ranked_ap(scores, labels) - E.ap_oracle(scores.tolist(), labels.tolist())) < 1e-9
    assert tied > 50


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_curve_invariants(data):
    n = data.draw(st.integers(1, 30))
    labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(any))
    scores = data.draw(st.lists(st.integers(-5, 5), min_size=n, max_size=n))
    curve = E.pr_curve(scores, labels)
    assert (np.diff(curve.recall) >= 0).all()
    assert ((0 <= curve.precision) & (curve.precision <= 1)).all()
    ap = E.average_precision(curve)
    p = sum(labels)
    worst = sum(i / (n - p + i) for i in range(1, p + 1)) / p
    assert worst - 1e-12 <= ap <= 1.0 + 1e-12
    # rectangle rule equals mean precision at the positive ranks
    order = np.argsort(-np.asarray(scores, float), kind="stable")
    hits = np.asarray(labels)[order].astype(bool)
    assert ap == pytest.approx(curve.precision[hits].mean(), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(data=st.data())
def test_rank_invariance(data):
    n = data.draw(st.integers(1, 25))
    labels = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(any))
    scores = np.array(data.draw(st.lists(st.integers(-100, 100), min_size=n, max_size=n)), dtype=np.float64)
    # strictly increasing maps that stay exact on small integers
    for f in (lambda s: 3 * s + 7, lambda s: s ** 3, lambda s: np.exp2(s / 4)):
        assert ranked_ap(f(scores), labels) == ranked_ap(scores, labels)


@pytest.mark.parametrize("n, p", [(4, 1), (5, 2), (8, 3), (10, 10), (12, 5)])
def test_adversarial_lower_bound(n, p):
    labels = [0] * (n - p) + [1] * p
    scores = list(range(n, 0, -1))
    bound = sum(i / (n - p + i) for i in range(1, p + 1)) / p
    assert ranked_ap(scores, labels) == pytest.approx(bound, abs=1e-12)
    assert E.ap_oracle(scores, labels) == pytest.approx(bound, abs=1e-12)
    rng = np.random.default_rng(n * 100 + p)
    for _ in range(20):
        assert ranked_ap(rng.random(n), rng.permutation(labels)) >= bound - 1e-12


def test_mean_ap_symmetric_classes():
    col = np.array([0.9, 0.1, 0.8, 0.2])
    report = E.mean_ap(np.stack([col, col[::-1]], axis=1), [0, 1, 0, 1])
    assert report.ap[0] == report.ap[1] == report.mean_ap


def test_mean_ap_single_class_defined():
    scores = np.array([[0.9, 0.1], [0.2, 0.8], [0.7, 0.3]])
    report = E.mean_ap(scores, [0, 0, 0])
    assert report.ap[1] is None and report.mean_ap == report.ap[0] == 1.0


def test_mean_ap_matches_oracle_random_five_class():
    rng = np.random.default_rng(11)
    scores = rng.random((30, 5))
    labels = np.concatenate([np.arange(5), rng.integers(0, 5, size=25)])
    report = E.mean_ap(scores, labels)
    oracle = [E.ap_oracle(scores[:, k].tolist(), (labels == k).astype(int).tolist()) for k in range(5)]
    np.testing.assert_allclose(report.ap, oracle, atol=1e-9)
    assert report.mean_ap == pytest.approx(np.mean(oracle), abs=1e-9)
    assert report.item_count == 30


def test_zero_positive_class_excluded_with_warning(caplog):
    scores = np.array([[0.9, 0.1, 0.0], [0.2, 0.8, 0.0]])
    with caplog.at_level(logging.WARNING, logger="oscnn.evaluation"):
        report = E.mean_ap(scores, [0, 1], ["a", "b", "c"])
    assert report.ap[2] is None and report.mean_ap == 1.0
    assert "c" in caplog.text


def test_mean_ap_all_undefined():
    with pytest.raises(E.UndefinedAPError):
        E.mean_ap(np.zeros((2, 2)), [5, 5])


def test_report_text_format():
    report = E.EvalReport(("a", "b"), (0.5, 1 / 3), (0.5 + 1 / 3) / 2, 4)
    assert report.to_text() == "a\t0.500000\nb\t0.333333\nmAP\t0.416667\n"


def test_machine_report_roundtrip():
    report = E.EvalReport(("a", "b", "c"), (0.1 + 0.2, None, 1.0), 0.65, 9)
    text = report.to_machine_text()
    assert text.startswith("metric,a,b,c,mAP\nap,")
    back = E.EvalReport.from_machine_text(text, 9)
    assert back == report
