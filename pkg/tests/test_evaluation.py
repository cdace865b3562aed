from fractions import Fraction

import numpy as np
import pytest

from drtsad.errors import EmptyInput, PreconditionError
from drtsad.evaluation import (
    AnomalyScoreSeries,
    EvalReport,
    ThresholdPolicy,
    apply_threshold,
    evaluate,
    point_adjust,
    prf,
    threshold_sweep,
)


def adjust_oracle(preds, labels):
    out = list(preds)
    i, n = 0, len(labels)
    while i < n:
        if labels[i]:
            j = i
            while j < n and labels[j]:
                j += 1
            if any(preds[i:j]):
                out[i:j] = [1] * (j - i)
            i = j
        else:
            i += 1
    return out


def tally_oracle(preds, labels):
    tp = fp = fn = tn = 0
    for p, y in zip(preds, labels):
        if p and y:
            tp += 1
        elif p:
            fp += 1
        elif y:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def best_threshold_oracle(scores, labels, adjust):
    """Exhaustive search over distinct scores with exact F1 arithmetic."""
    best = (Fraction(-1), None)
    for t in sorted(set(scores.tolist())):
        preds = [int(s >= t) for s in scores]
        if adjust:
            preds = adjust_oracle(preds, labels)
        tp, fp, fn, _ = tally_oracle(preds, labels)
        f1 = Fraction(2 * tp, 2 * tp + fp + fn) if tp else Fraction(0)
        if f1 > best[0]:
            best = (f1, t)
    return best


def random_case(rng, n):
    labels = np.zeros(n, dtype=np.int8)
    for _ in range(rng.integers(0, 6)):
        a = rng.integers(0, n)
        labels[a : a + rng.integers(1, 15)] = 1
    # coarse scores so ties happen
    scores = np.round(rng.normal(size=n) + 1.5 * labels, 1)
    return scores, labels


class TestPointAdjust:
    def test_definition(self):
        np.testing.assert_array_equal(point_adjust([0, 1, 0, 0], [0, 1, 1, 0]), [0, 1, 1, 0])

    def test_no_detection_unchanged(self):
        np.testing.assert_array_equal(point_adjust([0, 0, 0], [1, 1, 0]), [0, 0, 0])

    def test_outside_runs_untouched(self):
        np.testing.assert_array_equal(point_adjust([1, 0, 0, 1, 0], [0, 0, 1, 1, 0]), [1, 0, 1, 1, 0])

    def test_randomized_against_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            labels = (rng.random(200) < rng.uniform(0.02, 0.4)).astype(np.int8)
            preds = (rng.random(200) < 0.1).astype(np.int8)
            out = point_adjust(preds, labels)
            np.testing.assert_array_equal(out, adjust_oracle(preds.tolist(), labels.tolist()))
            # never flips a prediction off, never lowers recall
            assert np.all(out >= preds)
            assert prf(out, labels).recall >= prf(preds, labels).recall

    def test_length_mismatch(self):
        with pytest.raises(PreconditionError):
            point_adjust([0, 1], [0, 1, 1])


class TestPrf:
    def test_perfect(self):
        r = prf([0, 1, 1, 0], [0, 1, 1, 0])
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_all_positive(self):
        labels = np.zeros(100, dtype=np.int8)
        labels[:10] = 1
        r = prf(np.ones(100), labels)
        assert r.precision == pytest.approx(0.1) and r.recall == 1.0

    def test_empty_denominators(self):
        r = prf(np.zeros(5), np.zeros(5))
        assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)

    def test_tally_and_permutation(self):
        rng = np.random.default_rng(1)
        preds = rng.integers(0, 2, 500)
        labels = rng.integers(0, 2, 500)
        r = prf(preds, labels)
        assert (r.tp, r.fp, r.fn, r.tn) == tally_oracle(preds, labels)
        assert r.tp + r.fn == labels.sum()
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall), abs=1e-15)
        perm = rng.permutation(500)
        assert prf(preds[perm], labels[perm]) == r


class TestThreshold:
    def test_ratio_quantile(self):
        preds, thr = apply_threshold(np.array([1.0, 2, 3, 4]), ThresholdPolicy(ratio=0.5 - 1e-12))
        np.testing.assert_array_equal(preds, [0, 0, 1, 1])
        assert 2.0 <= thr < 3.0

    def test_ratio_zero_variance_flags_nothing(self):
        preds, _ = apply_threshold(np.full(10, 2.0), ThresholdPolicy(ratio=0.1))
        assert preds.sum() == 0

    @pytest.mark.parametrize("ratio", [0.0, 0.5, 0.7])
    def test_ratio_bounds(self, ratio):
        with pytest.raises(PreconditionError):
            ThresholdPolicy(ratio=ratio)

    def test_grid_bound(self):
        with pytest.raises(PreconditionError):
            ThresholdPolicy("best_f1_sweep", grid_size=5)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            apply_threshold(np.array([]), ThresholdPolicy())

    def test_labels_required(self):
        with pytest.raises(PreconditionError):
            apply_threshold(np.ones(3), ThresholdPolicy("best_f1_sweep"))

    def test_separated_scores(self):
        labels = np.array([0, 0, 1, 1, 0, 1])
        scores = np.array([0.1, 0.2, 0.9, 0.8, 0.3, 0.7])
        r = evaluate(scores, labels, ThresholdPolicy("best_f1_sweep"))
        assert r.f1 == 1.0 and r.oracle_informed

    @pytest.mark.parametrize("adjust", [True, False])
    def test_sweep_matches_brute_force(self, adjust):
        rng = np.random.default_rng(2)
        for _ in range(150):
            scores, labels = random_case(rng, int(rng.integers(20, 80)))
            if labels.sum() == 0:
                continue
            f1, t = best_threshold_oracle(scores, labels, adjust)
            _, thr = apply_threshold(scores, ThresholdPolicy("best_f1_sweep"), labels, adjust)
            assert thr == t
            assert evaluate(scores, labels, ThresholdPolicy("best_f1_sweep"), adjust).f1 == pytest.approx(float(f1), abs=1e-15)

    def test_sweep_counts_match_direct(self):
        rng = np.random.default_rng(3)
        scores, labels = random_case(rng, 120)
        thresholds, tp, fp, fn = threshold_sweep(scores, labels, adjust=True)
        for t, a, b, c in zip(thresholds, tp, fp, fn):
            preds = adjust_oracle([int(s >= t) for s in scores], labels.tolist())
            assert (a, b, c) == tally_oracle(preds, labels)[:3]

    def test_geometric_grid(self):
        rng = np.random.default_rng(4)
        scores, labels = random_case(rng, 300)
        thresholds, *_ = threshold_sweep(scores, labels, grid_size=25)
        assert thresholds.size == 25
        assert thresholds[-1] == scores.max()
        assert np.all(np.diff(thresholds) > 0) and thresholds[0] > scores.min()
        r = evaluate(scores, labels, ThresholdPolicy("best_f1_sweep", grid_size=25))
        exhaustive = evaluate(scores, labels, ThresholdPolicy("best_f1_sweep"))
        assert r.f1 <= exhaustive.f1

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            scores, labels = random_case(rng, 100)
            a = evaluate(scores, labels, ThresholdPolicy("best_f1_sweep"))
            b = evaluate(np.exp(3 * scores) + 7, labels, ThresholdPolicy("best_f1_sweep"))
            assert (a.tp, a.fp, a.fn, a.f1) == (b.tp, b.fp, b.fn, b.f1)


class TestEvaluate:
    def test_composition(self):
        rng = np.random.default_rng(6)
        scores, labels = random_case(rng, 400)
        policy = ThresholdPolicy(ratio=0.1)
        preds, thr = apply_threshold(scores, policy)
        manual = prf(point_adjust(preds, labels), labels)
        r = evaluate(scores, labels, policy)
        assert (r.tp, r.fp, r.fn, r.tn, r.f1) == (manual.tp, manual.fp, manual.fn, manual.tn, manual.f1)
        assert r.threshold == thr and r.point_adjust and not r.oracle_informed
        assert r.policy == "ratio_percentile"

    def test_adjust_off(self):
        scores = np.array([0.0, 5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        labels = np.array([0, 1, 1, 1, 0, 0, 0, 0, 0, 0])
        r = evaluate(scores, labels, ThresholdPolicy(ratio=0.1), adjust=False)
        assert (r.tp, r.fn) == (1, 2) and not r.point_adjust

    def test_report_round_trip(self):
        r = evaluate(np.arange(10.0), np.r_[np.zeros(8), np.ones(2)], ThresholdPolicy())
        assert EvalReport.from_dict(r.to_dict()) == r

    def test_length_mismatch(self):
        with pytest.raises(PreconditionError):
            evaluate(np.ones(3), np.ones(4), ThresholdPolicy())

    def test_score_series_finite(self):
        with pytest.raises(PreconditionError):
            AnomalyScoreSeries(np.array([0.0, np.nan]))
