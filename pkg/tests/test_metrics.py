import itertools

import numpy as np
import pytest

from tagstress.labels import NONVOCALS, VOCALS
from tagstress.metrics import (ConfusionCounts, ShapeError, TagCounts,
                               confusion, fom, mirex_cross_fold)

V, N = VOCALS, NONVOCALS


def report_from(tp, fp, tn, fn):
    counts = ConfusionCounts(per_tag={
        V: TagCounts(tp=tp, fp=fp, tn=tn, fn=fn),
        N: TagCounts(tp=tn, fp=fn, tn=tp, fn=fp),
    })
    return fom(counts)


class TestConfusion:
    def test_perfect_predictions(self):
        truths = [V, V, N, V, N]
        counts = confusion(truths, truths)
        for tag in (V, N):
            assert counts.per_tag[tag].fp == 0
            assert counts.per_tag[tag].fn == 0

    def test_complement_predictions(self):
        truths = [V, V, N, N]
        preds = [N, N, V, V]
        counts = confusion(preds, truths)
        for tag in (V, N):
            assert counts.per_tag[tag].tp == 0
            assert counts.per_tag[tag].tn == 0

    def test_hand_tally(self):
        truths = [V, V, V, V, V, V, N, N, N, N]
        preds = [V, V, V, V, N, N, N, N, N, V]
        counts = confusion(preds, truths)
        cv = counts.per_tag[V]
        assert (cv.tp, cv.fn, cv.fp, cv.tn) == (4, 2, 1, 3)
        cn = counts.per_tag[N]
        assert (cn.tp, cn.fn, cn.fp, cn.tn) == (3, 1, 2, 4)
        assert cv.total == 10

    def test_length_mismatch(self):
        with pytest.raises(ShapeError):
            confusion([V], [V, N])


class TestFom:
    def test_worked_values(self):
        report = report_from(tp=90, fn=10, fp=20, tn=80)
        p, r, f = report.per_tag[V]
        assert p == pytest.approx(0.8182, abs=1e-4)
        assert r == pytest.approx(0.9, abs=1e-4)
        assert f == pytest.approx(0.8571, abs=1e-4)

    def test_perfect(self):
        report = report_from(tp=5, fn=0, fp=0, tn=7)
        for tag in (V, N):
            assert report.per_tag[tag] == (1.0, 1.0, 1.0)
        assert report.macro_f == 1.0
        assert report.micro_f == 1.0

    def test_zero_denominator_convention(self):
        report = report_from(tp=0, fp=0, tn=50, fn=10)
        p, r, f = report.per_tag[V]
        assert p == 0.0
        assert f == 0.0

    def test_two_class_micro_equals_accuracy(self):
        rng = np.random.default_rng(0)
        truths = [V if b else N for b in rng.integers(0, 2, 40)]
        preds = [V if b else N for b in rng.integers(0, 2, 40)]
        report = fom(confusion(preds, truths))
        acc = np.mean([p == t for p, t in zip(preds, truths)])
        assert report.micro_p == pytest.approx(acc)
        assert report.micro_r == pytest.approx(acc)

    def test_macro_f_between_per_tag_f(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            truths = [V if b else N for b in rng.integers(0, 2, 30)]
            preds = [V if b else N for b in rng.integers(0, 2, 30)]
            report = fom(confusion(preds, truths))
            fs = [v[2] for v in report.per_tag.values()]
            assert min(fs) - 1e-12 <= report.macro_f <= max(fs) + 1e-12

    def test_permutation_invariant(self):
        rng = np.random.default_rng(2)
        truths = [V if b else N for b in rng.integers(0, 2, 25)]
        preds = [V if b else N for b in rng.integers(0, 2, 25)]
        base = fom(confusion(preds, truths))
        order = rng.permutation(25)
        shuffled = fom(confusion([preds[i] for i in order], [truths[i] for i in order]))
        assert base == shuffled


class TestCrossFold:
    def test_identical_folds(self):
        r = report_from(tp=8, fn=2, fp=1, tn=9)
        agg = mirex_cross_fold([r, r, r])
        assert agg.average_tag_recall == pytest.approx(r.micro_r)
        assert agg.average_tag_precision == pytest.approx(r.micro_p)
        assert agg.n_folds == 3

    def test_mean_of_micro_recalls(self):
        r1 = report_from(tp=8, fn=2, fp=2, tn=8)   # micro recall 0.8
        r2 = report_from(tp=6, fn=4, fp=4, tn=6)   # micro recall 0.6
        agg = mirex_cross_fold([r1, r2])
        assert agg.average_tag_recall == pytest.approx(0.7)

    def test_pooled_vs_averaged_differ(self):
        # Three-fold handcrafted case: averaging fold micro recalls is not
        # the same as recomputing from pooled counts; report both.
        folds = [report_from(tp=9, fn=1, fp=0, tn=2),
                 report_from(tp=1, fn=3, fp=1, tn=15),
                 report_from(tp=5, fn=5, fp=5, tn=5)]
        agg = mirex_cross_fold(folds)
        per_fold = [f.micro_r for f in folds]
        averaged = sum(per_fold) / 3
        pooled_tp = 9 + 1 + 5 + 2 + 15 + 5
        pooled_total = 12 + 20 + 20
        pooled = pooled_tp / pooled_total
        assert agg.average_tag_recall == pytest.approx(averaged)
        assert abs(pooled - averaged) > 1e-3

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            mirex_cross_fold([])
