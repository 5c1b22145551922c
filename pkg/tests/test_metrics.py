import numpy as np
import pytest

from tsmia.metrics import MetricError, SingleClassError, auc, roc_curve, tpr_at_fpr

# ---------------------------------------------------------------- oracles


def brute_force_roc(scores, labels):
    """Every operating point by explicit thresholding, ties grouped."""
    thresholds = sorted(set(scores), reverse=True)
    n_pos = int(np.sum(labels))
    n_neg = len(labels) - n_pos
    points = [(np.inf, 0.0, 0.0)]
    for thr in thresholds:
        predicted = scores >= thr
        tp = int(np.sum(predicted & labels))
        fp = int(np.sum(predicted & ~labels))
        points.append((thr, fp / n_neg, tp / n_pos))
    return points


def pairwise_auc(scores, labels):
    """Mann-Whitney U with half credit for ties, O(n^2)."""
    pos = scores[labels]
    neg = scores[~labels]
    wins = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                wins += 1.0
            elif p == q:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def random_score_set(rng, with_ties=True):
    n = int(rng.integers(4, 101))
    if with_ties and rng.random() < 0.5:
        scores = rng.integers(0, 8, size=n).astype(float)  # heavy ties
    else:
        scores = rng.standard_normal(n)
    labels = rng.random(n) < 0.5
    if labels.all():
        labels[0] = False
    if not labels.any():
        labels[0] = True
    return scores, labels


# ---------------------------------------------------------------- tests


class TestRocCurve:
    def test_perfect_separation(self):
        scores = np.array([0.9, 0.8, 0.2, 0.1])
        labels = np.array([True, True, False, False])
        roc = roc_curve(scores, labels)
        assert auc(roc) == 1.0
        assert tpr_at_fpr(roc, 0.0) == 1.0
        # the (0, 1) corner is an operating point
        assert any(f == 0.0 and t == 1.0 for f, t in zip(roc.fpr, roc.tpr))

    def test_complete_ties_are_diagonal(self):
        scores = np.ones(10)
        labels = np.array([True] * 5 + [False] * 5)
        roc = roc_curve(scores, labels)
        np.testing.assert_array_equal(roc.fpr, [0.0, 1.0])
        np.testing.assert_array_equal(roc.tpr, [0.0, 1.0])
        assert auc(roc) == 0.5
        assert tpr_at_fpr(roc, 0.0) == 0.0

    def test_six_point_hand_example_with_tie(self):
        scores = np.array([0.9, 0.7, 0.7, 0.5, 0.3, 0.1])
        labels = np.array([True, True, False, False, True, False])
        roc = roc_curve(scores, labels)
        expected = brute_force_roc(scores, labels)
        got = list(zip(roc.thresholds, roc.fpr, roc.tpr))
        assert len(got) == len(expected)
        for (ta, fa, tra), (tb, fb, trb) in zip(got, expected):
            assert ta == tb and fa == fb and tra == trb
        assert auc(roc) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_endpoints_present_and_monotone(self, rng):
        scores, labels = random_score_set(rng)
        roc = roc_curve(scores, labels)
        assert roc.fpr[0] == 0.0 and roc.tpr[0] == 0.0
        assert roc.fpr[-1] == 1.0 and roc.tpr[-1] == 1.0
        assert np.all(np.diff(roc.fpr) >= 0)
        assert np.all(np.diff(roc.tpr) >= 0)

    def test_brute_force_agreement_200_sets(self):
        rng = np.random.default_rng(2024)
        for _ in range(200):
            scores, labels = random_score_set(rng)
            roc = roc_curve(scores, labels)
            expected = brute_force_roc(scores, labels)
            got = list(zip(roc.thresholds, roc.fpr, roc.tpr))
            assert len(got) == len(expected)
            for (ta, fa, tra), (tb, fb, trb) in zip(got, expected):
                assert ta == tb
                assert fa == pytest.approx(fb, abs=1e-12)
                assert tra == pytest.approx(trb, abs=1e-12)
            assert auc(roc) == pytest.approx(pairwise_auc(scores, labels), abs=1e-12)

    def test_single_class_errors(self):
        with pytest.raises(SingleClassError):
            roc_curve(np.array([1.0, 2.0]), np.array([True, True]))

    def test_non_finite_scores_rejected(self):
        with pytest.raises(MetricError):
            roc_curve(np.array([np.nan, 1.0]), np.array([True, False]))


class TestTprAtFpr:
    def test_hand_example(self):
        scores = np.array([0.9, 0.8, 0.6, 0.7, 0.5, 0.3])
        labels = np.array([True, True, True, False, False, False])
        roc = roc_curve(scores, labels)
        assert tpr_at_fpr(roc, 0.0) == pytest.approx(2.0 / 3.0)

    def test_monotone_in_target(self, rng):
        for _ in range(20):
            scores, labels = random_score_set(rng)
            roc = roc_curve(scores, labels)
            targets = [0.0, 1e-4, 1e-3, 0.01, 0.1, 0.5, 1.0]
            values = [tpr_at_fpr(roc, t) for t in targets]
            assert all(b >= a for a, b in zip(values, values[1:]))

    def test_count_thresholding_is_exact(self):
        # 1000 non-members: FPR 0.1% admits exactly one false positive
        rng = np.random.default_rng(1)
        neg = rng.standard_normal(1000)
        pos = rng.standard_normal(10) + 10
        pos[0] = np.sort(neg)[-1] - 1e-9  # just below the top non-member
        scores = np.concatenate([pos, neg])
        labels = np.concatenate([np.ones(10, bool), np.zeros(1000, bool)])
        roc = roc_curve(scores, labels)
        assert tpr_at_fpr(roc, 1e-3) == 1.0  # one FP allowed reaches all members
        assert tpr_at_fpr(roc, 0.0) == pytest.approx(0.9)

    def test_negative_target_rejected(self):
        roc = roc_curve(np.array([1.0, 0.0]), np.array([True, False]))
        with pytest.raises(MetricError):
            tpr_at_fpr(roc, -0.1)
