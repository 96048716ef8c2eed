import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mptpar.metrics import (PRF, REPORT_KEYS, ScoreAccumulator, half_match, multilabel_prf, overall_score,
                            parse_report, percent, social_prf)


def _random_partition(rng, n):
    labels = rng.integers(0, rng.integers(1, n + 1), size=n)
    return [np.where(labels == v)[0].tolist() for v in np.unique(labels)]


class TestMultilabel:
    def test_perfect(self):
        sets = [{0}, {1, 2}, {3}]
        assert multilabel_prf(sets, sets) == PRF(1.0, 1.0, 1.0)

    def test_partial(self):
        r = multilabel_prf([{0}], [{0, 1}])
        assert (r.precision, r.recall) == (1.0, 0.5)
        assert r.f1 == pytest.approx(2 / 3, abs=1e-15)

    def test_exhaustive_oracle(self, rng):
        preds, gts = [], []
        for _ in range(10):
            gts.append(set(rng.choice(6, size=rng.integers(1, 5), replace=False).tolist()))
            preds.append(set(rng.choice(6, size=rng.integers(0, 5), replace=False).tolist()))
        ps, rs, fs = [], [], []
        for p, g in zip(preds, gts):
            hit = sum(1 for c in range(6) if c in p and c in g)
            pi = hit / len(p) if p else 0.0
            ri = hit / len(g)
            ps.append(pi)
            rs.append(ri)
            fs.append(0.0 if pi + ri == 0 else 2 * pi * ri / (pi + ri))
        r = multilabel_prf(preds, gts)
        assert r.precision == pytest.approx(np.mean(ps), abs=1e-15)
        assert r.recall == pytest.approx(np.mean(rs), abs=1e-15)
        assert r.f1 == pytest.approx(np.mean(fs), abs=1e-15)

    def test_micro(self):
        r = multilabel_prf([{0}, {1, 2}], [{0, 1}, {1}], average="micro")
        assert (r.precision, r.recall) == (2 / 3, 2 / 3)

    def test_misaligned(self):
        with pytest.raises(ValueError):
            multilabel_prf([{0}], [{0}, {1}])

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.tuples(st.frozensets(st.integers(0, 4), max_size=4),
                              st.frozensets(st.integers(0, 4), min_size=1, max_size=4)), min_size=1, max_size=8),
           st.randoms(use_true_random=False))
    def test_order_invariant(self, pairs, rnd):
        shuffled = list(pairs)
        rnd.shuffle(shuffled)
        a = multilabel_prf([p for p, _ in pairs], [g for _, g in pairs])
        b = multilabel_prf([p for p, _ in shuffled], [g for _, g in shuffled])
        assert a.precision == pytest.approx(b.precision, abs=1e-12)
        assert a.recall == pytest.approx(b.recall, abs=1e-12)
        assert a.f1 == pytest.approx(b.f1, abs=1e-12)


class TestHalfMatch:
    def test_identical(self):
        p = [[0, 1], [2], [3, 4, 5]]
        assert half_match(p, p) == [(0, 0), (1, 1), (2, 2)]

    def test_singleton_vs_triple(self):
        assert half_match([[0], [1, 2]], [[0, 1, 2]]) == [(1, 0)]
        assert half_match([[0]], [[0, 1, 2]]) == []

    def test_bruteforce_oracle(self, rng):
        for _ in range(20):
            a, b = _random_partition(rng, 8), _random_partition(rng, 8)
            expect = []
            for i, j in itertools.product(range(len(a)), range(len(b))):
                inter = len([x for x in a[i] if x in b[j]])
                union = len(a[i]) + len(b[j]) - inter
                if 2 * inter > union:
                    expect.append((i, j))
            assert half_match(a, b) == expect

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 10 ** 6))
    def test_symmetric_and_unique(self, n, seed):
        rng = np.random.default_rng(seed)
        a, b = _random_partition(rng, n), _random_partition(rng, n)
        ab = half_match(a, b)
        assert sorted((j, i) for i, j in half_match(b, a)) == sorted(ab)
        assert len({i for i, _ in ab}) == len(ab) == len({j for _, j in ab})


class TestSocial:
    def test_perfect(self):
        g = [[0, 1], [2]]
        assert social_prf(g, [{0}, {1, 2}], g, [{0}, {1, 2}]) == PRF(1.0, 1.0, 1.0)

    def test_disjoint_labels(self):
        g = [[0, 1], [2]]
        assert social_prf(g, [{0}, {1}], g, [{2}, {3}]) == PRF(0.0, 0.0, 0.0)

    def test_constructed(self):
        # pred: {0,1,2} matches gt {0,1} (IoU 2/3); {3} matches {3}; {4,5} vs gt {4},{5}: IoU 1/2 -> no match
        pred = [[0, 1, 2], [3], [4, 5]]
        plab = [{0, 1}, {2}, {0}]
        gt = [[0, 1], [2], [3], [4], [5]]
        glab = [{0}, {1}, {2, 3}, {0}, {0}]
        # matched: (0,0) precision 1/2 recall 1; (1,2) precision 1 recall 1/2
        p = (0.5 + 1.0 + 0.0) / 3
        r = (1.0 + 0.5) / 5
        got = social_prf(pred, plab, gt, glab)
        assert got.precision == pytest.approx(p, abs=1e-15)
        assert got.recall == pytest.approx(r, abs=1e-15)
        assert got.f1 == pytest.approx(2 * p * r / (p + r), abs=1e-15)


class TestOverall:
    def test_reported_row_ours(self):
        s = overall_score(PRF(59.2, 58.6, 56.0), PRF(25.5, 27.3, 25.4), PRF(69.1, 57.6, 61.1))
        assert s.F_a == 47.5

    def test_reported_row_baseline(self):
        s = overall_score(PRF(0, 0, 43.4), PRF(0, 0, 24.8), PRF(0, 0, 38.8))
        assert s.F_a == pytest.approx(107 / 3, abs=1e-12)
        assert percent(s.F_a / 100) in {"35.6", "35.7"}

    def test_zero(self):
        z = PRF(0.0, 0.0, 0.0)
        assert overall_score(z, z, z).F_a == 0.0

    def test_percent_half_even(self):
        assert percent(0.475) == "47.5"
        assert percent(0.12345) == "12.3"
        assert percent(1.0) == "100.0"

    def test_report_schema(self):
        s = overall_score(PRF(0.5, 0.25, 1 / 3), PRF(1.0, 1.0, 1.0), PRF(0.1, 0.2, 0.3))
        parsed = parse_report(s.report())
        assert tuple(parsed) == REPORT_KEYS
        assert parsed["F_i"] == 1 / 3 and parsed["F_a"] == s.F_a


def test_accumulator_order_independent(rng):
    clips = []
    for _ in range(5):
        n = int(rng.integers(2, 7))
        gt_groups, pred_groups = _random_partition(rng, n), _random_partition(rng, n)
        lab = lambda k: [set(rng.choice(4, size=rng.integers(1, 3), replace=False).tolist()) for _ in range(k)]  # noqa: E731
        clips.append((lab(n), lab(n), pred_groups, lab(len(pred_groups)), gt_groups, lab(len(gt_groups)),
                      lab(1)[0], lab(1)[0]))
    a, b = ScoreAccumulator(), ScoreAccumulator()
    for c in clips:
        a.add_clip(*c)
    for c in reversed(clips):
        b.add_clip(*c)
    for k, v in a.result().values().items():
        assert v == pytest.approx(b.result().values()[k], abs=1e-12)
    assert a.result().F_a == pytest.approx(
        (a.result().individual.f1 + a.result().social.f1 + a.result().global_.f1) / 3, abs=0)
