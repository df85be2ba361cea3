import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm

from osreval.metrics import (
    EvaluationReport,
    aupr_out,
    auroc,
    confusion_matrix,
    evaluate_closed_set,
    evaluate_open_set,
    mcc,
    prf_scores,
)
from osreval.openmax import OpenSetPrediction

# Six samples over {unknown, 1, 2}; expected values worked out by hand.
SIX_TRUE = np.array([1, 1, 2, 2, 0, 0])
SIX_PROBS = np.array([
    [0.10, 0.80, 0.10],
    [0.20, 0.30, 0.50],
    [0.05, 0.15, 0.80],
    [0.60, 0.10, 0.30],
    [0.70, 0.20, 0.10],
    [0.30, 0.20, 0.50],
])
SIX_PRED = np.array([1, 2, 2, 0, 0, 2])


def brute_confusion(y_true, y_pred, n):
    out = [[0] * n for _ in range(n)]
    for t, p in zip(y_true, y_pred):
        out[t][p] += 1
    return out


def brute_auroc(scores, pos):
    p = [s for s, y in zip(scores, pos) if y]
    n = [s for s, y in zip(scores, pos) if not y]
    credit = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a in p for b in n)
    return credit / (len(p) * len(n))


def brute_ap(scores, pos):
    """Precision at every distinct threshold, weighted by the recall gained there."""
    total = sum(pos)
    ap, prev_recall = 0.0, 0.0
    for t in sorted(set(scores), reverse=True):
        sel = [y for s, y in zip(scores, pos) if s >= t]
        recall = sum(sel) / total
        ap += (recall - prev_recall) * (sum(sel) / len(sel))
        prev_recall = recall
    return ap


def brute_mcc(cm):
    """Gorodkin's formula written with explicit sums over cells."""
    k = len(cm)
    s = sum(map(sum, cm))
    c = sum(cm[i][i] for i in range(k))
    t = [sum(cm[i][j] for j in range(k)) for i in range(k)]
    p = [sum(cm[i][j] for i in range(k)) for j in range(k)]
    num = c * s - sum(p[i] * t[i] for i in range(k))
    den = math.sqrt((s * s - sum(x * x for x in p)) * (s * s - sum(x * x for x in t)))
    return 0.0 if den == 0 else num / den


labelled = st.integers(2, 5).flatmap(lambda n: st.tuples(
    st.just(n),
    st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), min_size=1, max_size=60),
))

binary_scores = st.lists(st.tuples(st.sampled_from([0.0, 0.1, 0.5, 0.9, 1.0]) | st.floats(0, 1),
                                   st.booleans()), min_size=2, max_size=50)


class TestConfusion:
    def test_six_sample(self):
        cm = confusion_matrix(SIX_TRUE, SIX_PRED, 3)
        assert cm.counts.tolist() == [[1, 0, 1], [0, 1, 1], [1, 0, 1]]

    @settings(max_examples=200, deadline=None)
    @given(data=labelled)
    def test_brute_force(self, data):
        n, pairs = data
        t, p = zip(*pairs)
        cm = confusion_matrix(t, p, n)
        assert cm.counts.tolist() == brute_confusion(t, p, n)
        assert cm.total == len(pairs)
        np.testing.assert_array_equal(cm.counts.sum(axis=1), np.bincount(t, minlength=n))

    def test_hand(self):
        assert confusion_matrix([0, 1, 1], [0, 0, 1], 2).counts.tolist() == [[1, 0], [1, 1]]
        assert confusion_matrix([2, 0, 1, 2], [2, 0, 1, 2], 3).counts.tolist() == [[1, 0, 0], [0, 1, 0], [0, 0, 2]]

    def test_csv(self):
        cm = confusion_matrix([0, 1, 1], [0, 1, 0], 2, ("unknown", "a"))
        assert cm.to_csv() == "true\\pred,unknown,a\nunknown,1,0\na,1,1\n"

    def test_out_of_range(self):
        with pytest.raises(ValueError, match="y_pred"):
            confusion_matrix([0, 1], [0, 2], 2)


class TestPrf:
    def test_six_sample(self):
        prf = prf_scores(confusion_matrix(SIX_TRUE, SIX_PRED, 3))
        np.testing.assert_allclose(prf.precision, [1 / 2, 1, 1 / 3], atol=1e-15)
        np.testing.assert_allclose(prf.recall, [0.5, 0.5, 0.5], atol=1e-15)
        np.testing.assert_allclose(prf.f1, [0.5, 2 / 3, 0.4], atol=1e-15)
        assert prf.macro["precision"] == pytest.approx(11 / 18, abs=1e-15)
        assert prf.macro["recall"] == pytest.approx(0.5, abs=1e-15)
        assert prf.macro["f1"] == pytest.approx(47 / 90, abs=1e-15)
        assert prf.micro == pytest.approx({"precision": 0.5, "recall": 0.5, "f1": 0.5}, abs=1e-15)

    def test_two_by_two(self):
        prf = prf_scores(confusion_matrix([0, 1, 1], [0, 0, 1], 2))
        np.testing.assert_allclose(prf.precision, [0.5, 1.0])
        np.testing.assert_allclose(prf.recall, [1.0, 0.5])
        assert prf.macro["precision"] == pytest.approx(0.75)
        assert prf.micro["precision"] == pytest.approx(2 / 3)

    def test_perfect(self):
        prf = prf_scores(confusion_matrix([0, 1, 2, 2], [0, 1, 2, 2], 3))
        assert prf.macro == {"precision": 1.0, "recall": 1.0, "f1": 1.0}
        assert prf.micro == {"precision": 1.0, "recall": 1.0, "f1": 1.0}

    def test_empty_cells_count_as_zero(self):
        # label 2 is neither true nor predicted: its 0/0 scores are 0 and still in the mean
        prf = prf_scores(confusion_matrix([0, 1], [0, 1], 3))
        assert prf.precision.tolist() == [1.0, 1.0, 0.0]
        assert prf.macro["f1"] == pytest.approx(2 / 3)

    @settings(max_examples=200, deadline=None)
    @given(data=labelled)
    def test_against_sklearn(self, data):
        n, pairs = data
        t, p = map(list, zip(*pairs))
        prf = prf_scores(confusion_matrix(t, p, n))
        labels = list(range(n))
        for avg in ("macro", "micro"):
            sp, sr, sf, _ = skm.precision_recall_fscore_support(t, p, labels=labels, average=avg,
                                                                zero_division=0)
            assert prf.__getattribute__(avg) == pytest.approx({"precision": sp, "recall": sr, "f1": sf},
                                                              abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(data=labelled)
    def test_micro_precision_is_accuracy(self, data):
        n, pairs = data
        t, p = zip(*pairs)
        rep = evaluate_closed_set(t, p, [str(i) for i in range(n)])
        assert rep.precision["micro"] == pytest.approx(rep.accuracy, abs=1e-15)
        for v in (*rep.precision.values(), *rep.recall.values(), *rep.f1.values(), rep.accuracy):
            assert 0.0 <= v <= 1.0


@pytest.mark.filterwarnings("ignore:A single label:UserWarning")
class TestMcc:
    def test_six_sample(self):
        assert mcc(confusion_matrix(SIX_TRUE, SIX_PRED, 3)) == pytest.approx(6 / math.sqrt(528), abs=1e-12)
        assert 6 / math.sqrt(528) == pytest.approx(0.261116, abs=1e-6)

    def test_inverted(self):
        assert mcc(confusion_matrix([0, 0, 1, 1], [1, 1, 0, 0], 2)) == -1.0

    def test_binary_hand(self):
        cm = confusion_matrix([0, 0, 1, 1], [0, 0, 0, 1], 2)
        assert mcc(cm) == pytest.approx(1 / math.sqrt(3), abs=1e-12)

    def test_perfect_and_constant(self):
        assert mcc(confusion_matrix([0, 1, 2], [0, 1, 2], 3)) == 1.0
        assert mcc(confusion_matrix([0, 1, 2], [1, 1, 1], 3)) == 0.0

    @settings(max_examples=300, deadline=None)
    @given(data=labelled)
    def test_brute_force_and_sklearn(self, data):
        n, pairs = data
        t, p = map(list, zip(*pairs))
        cm = confusion_matrix(t, p, n)
        got = mcc(cm)
        assert got == pytest.approx(brute_mcc(cm.counts.tolist()), abs=1e-12)
        assert got == pytest.approx(skm.matthews_corrcoef(t, p), abs=1e-12)
        assert -1.0 <= got <= 1.0


class TestRanking:
    def test_six_sample(self):
        scores = SIX_PROBS[:, 0]
        assert auroc(scores, SIX_TRUE == 0) == pytest.approx(7 / 8, abs=1e-15)
        assert aupr_out(scores, SIX_TRUE == 0) == pytest.approx(5 / 6, abs=1e-15)

    def test_alternating(self):
        assert aupr_out([4, 3, 2, 1], [True, False, True, False]) == pytest.approx(5 / 6)
        assert auroc([4, 3, 2, 1], [True, False, True, False]) == pytest.approx(0.75)

    def test_pair_enumeration(self):
        assert auroc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
        assert auroc([0.9, 0.8, 0.3, 0.1], [1, 0, 0, 1]) == 0.5

    def test_all_unknown_ap(self):
        assert aupr_out([0.3, 0.1, 0.7], [True, True, True]) == 1.0

    def test_all_tied(self):
        assert auroc([0.5] * 4, [True, False, True, False]) == 0.5
        assert aupr_out([0.5] * 4, [True, False, False, False]) == pytest.approx(0.25)

    def test_perfect_and_reversed(self):
        assert auroc([0.9, 0.8, 0.1], [True, True, False]) == 1.0
        assert auroc([0.1, 0.2, 0.9], [True, True, False]) == 0.0
        assert aupr_out([0.9, 0.8, 0.1], [True, True, False]) == 1.0

    def test_undefined(self):
        with pytest.raises(ValueError):
            auroc([0.1, 0.2], [True, True])
        with pytest.raises(ValueError):
            auroc([0.1, 0.2], [False, False])
        with pytest.raises(ValueError):
            aupr_out([0.1, 0.2], [False, False])

    @settings(max_examples=300, deadline=None)
    @given(pairs=binary_scores)
    def test_brute_force(self, pairs):
        s, y = map(list, zip(*pairs))
        if any(y):
            assert aupr_out(s, y) == pytest.approx(brute_ap(s, y), abs=1e-12)
            assert aupr_out(s, y) == pytest.approx(skm.average_precision_score(y, s), abs=1e-12)
        if any(y) and not all(y):
            assert auroc(s, y) == pytest.approx(brute_auroc(s, y), abs=1e-12)
            assert auroc(s, y) == pytest.approx(skm.roc_auc_score(y, s), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(pairs=binary_scores, data=st.data())
    def test_order_invariance(self, pairs, data):
        s, y = map(list, zip(*pairs))
        perm = data.draw(st.permutations(range(len(s))))
        s2, y2 = [s[i] for i in perm], [y[i] for i in perm]
        if any(y) and not all(y):
            assert auroc(s2, y2) == pytest.approx(auroc(s, y), abs=1e-12)
        if any(y):
            assert aupr_out(s2, y2) == pytest.approx(aupr_out(s, y), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(pairs=binary_scores)
    def test_monotone_transform_invariance(self, pairs):
        s, y = map(list, zip(*pairs))
        levels = sorted(set(s))
        t = [10.0 * levels.index(v) - 7 for v in s]  # exactly order preserving
        if any(y) and not all(y):
            assert auroc(t, y) == pytest.approx(auroc(s, y), abs=1e-12)
        if any(y):
            assert aupr_out(t, y) == pytest.approx(aupr_out(s, y), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(pairs=binary_scores)
    def test_complement_symmetry(self, pairs):
        s, y = map(list, zip(*pairs))
        if any(y) and not all(y):
            flipped = auroc([-v for v in s], [not v for v in y])
            assert flipped == pytest.approx(auroc(s, y), abs=1e-12)


class TestReports:
    def test_six_sample_open_set(self):
        pred = OpenSetPrediction(SIX_PROBS, SIX_PRED, SIX_PROBS[:, 0])
        rep = evaluate_open_set(pred, SIX_TRUE, "openmax", ("unknown", "a", "b"))
        assert rep.accuracy == 0.5
        assert rep.precision["macro"] == pytest.approx(11 / 18, abs=1e-15)
        assert rep.f1["macro"] == pytest.approx(47 / 90, abs=1e-15)
        assert rep.mcc == pytest.approx(6 / math.sqrt(528), abs=1e-12)
        assert rep.auroc == pytest.approx(7 / 8, abs=1e-15)
        assert rep.aupr_out == pytest.approx(5 / 6, abs=1e-15)
        assert rep.per_class["unknown"]["support"] == 2
        assert rep.method == "openmax"

    def test_all_correct(self):
        probs = np.array([[0.9, 0.05, 0.05], [0.1, 0.8, 0.1], [0.2, 0.1, 0.7], [0.6, 0.3, 0.1]])
        pred = OpenSetPrediction(probs, np.array([0, 1, 2, 0]), probs[:, 0])
        rep = evaluate_open_set(pred, [0, 1, 2, 0], "openmax")
        assert (rep.accuracy, rep.mcc, rep.auroc, rep.aupr_out) == (1.0, 1.0, 1.0, 1.0)

    def test_no_unknowns_means_no_ranking_metrics(self):
        probs = np.array([[0.0, 0.9, 0.1], [0.0, 0.2, 0.8]])
        rep = evaluate_open_set(OpenSetPrediction(probs, np.array([1, 2]), None), [1, 2], "softmax")
        assert rep.auroc is None and rep.aupr_out is None
        assert rep.accuracy == 1.0

    def test_only_unknowns(self):
        probs = np.array([[0.0, 0.9, 0.1], [0.0, 0.6, 0.4]])
        rep = evaluate_open_set(OpenSetPrediction(probs, np.array([1, 0]), None), [0, 0], "softmax-threshold")
        assert rep.auroc is None
        assert rep.aupr_out == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError, match="length"):
            evaluate_open_set(OpenSetPrediction(SIX_PROBS, SIX_PRED, None), SIX_TRUE[:5], "openmax")

    def test_json_round_trip(self):
        pred = OpenSetPrediction(SIX_PROBS, SIX_PRED, SIX_PROBS[:, 0])
        rep = evaluate_open_set(pred, SIX_TRUE, "openmax")
        doc = json.loads(json.dumps(rep.to_dict(), allow_nan=False))
        assert doc["n_samples"] == 6
        back = EvaluationReport.from_dict(doc)
        assert back.to_dict() == rep.to_dict()

    def test_closed_set(self):
        rep = evaluate_closed_set([0, 1, 1], [0, 1, 0], ["a", "b"])
        assert rep.accuracy == pytest.approx(2 / 3)
        assert rep.auroc is None
        assert set(rep.per_class) == {"a", "b"}

    @pytest.mark.filterwarnings("ignore:A single label:UserWarning")
    def test_exhaustive_tiny(self):
        # every labelling of three samples over two labels agrees with sklearn
        for t in itertools.product(range(2), repeat=3):
            for p in itertools.product(range(2), repeat=3):
                rep = evaluate_closed_set(t, p, ["x", "y"])
                assert rep.accuracy == pytest.approx(skm.accuracy_score(t, p))
                assert rep.mcc == pytest.approx(skm.matthews_corrcoef(t, p), abs=1e-12)
