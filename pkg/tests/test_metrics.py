import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import auc_pairs, cramers_v_table
from skillcal.errors import DegenerateTable, DimensionMismatch, OneClassOnly
from skillcal.metrics import auc, auc_grouped, cramers_v


class TestAuc:
    def test_matches_pair_enumeration_on_random_data(self):
        rng = np.random.default_rng(60)
        for _ in range(200):
            n = int(rng.integers(4, 40))
            y = rng.integers(0, 2, n)
            if y.sum() in (0, n):
                continue
            # coarse scores force plenty of ties
            s = rng.integers(0, 5, n).astype(float)
            assert auc(y, s) == auc_pairs(y, s)

    def test_perfect_ranking_gives_one(self):
        y = np.array([0, 0, 1, 1])
        s = np.array([0.1, 0.2, 0.8, 0.9])
        assert auc(y, s) == 1.0
        assert auc(y, -s) == 0.0

    def test_constant_scores_give_half(self):
        y = np.array([0, 1, 0, 1])
        s = np.ones(4)
        assert auc(y, s) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(OneClassOnly):
            auc(np.zeros(5), np.arange(5.0))

    def test_length_mismatch_rejected(self):
        with pytest.raises(DimensionMismatch):
            auc(np.array([0, 1]), np.array([0.5]))


class TestAucGrouped:
    def test_equals_unit_level_on_expansion(self):
        rng = np.random.default_rng(61)
        for _ in range(50):
            g = int(rng.integers(2, 8))
            scores = rng.uniform(0, 1, g)
            scores[rng.integers(0, g)] = scores[0]  # inject a tie
            pos = rng.integers(0, 6, g)
            neg = rng.integers(0, 6, g)
            if pos.sum() == 0 or neg.sum() == 0:
                continue
            y = np.concatenate([
                np.concatenate([np.ones(p), np.zeros(q)])
                for p, q in zip(pos, neg)])
            s = np.concatenate([
                np.full(p + q, v) for v, p, q in zip(scores, pos, neg)])
            assert auc_grouped(scores, pos, neg) == pytest.approx(
                auc(y, s), abs=1e-12)

    def test_all_positives_in_top_group(self):
        assert auc_grouped(np.array([0.9, 0.1]), np.array([5, 0]),
                           np.array([0, 5])) == 1.0


class TestCramersV:
    def test_matches_table_oracle(self):
        rng = np.random.default_rng(62)
        for _ in range(50):
            n = int(rng.integers(20, 120))
            a = rng.integers(0, 3, n)
            b = rng.integers(0, 4, n)
            table = np.zeros((3, 4))
            for i, j in zip(a, b):
                table[i, j] += 1
            if (table.sum(axis=1) == 0).any() or (table.sum(axis=0) == 0).any():
                continue
            assert cramers_v(a, b) == pytest.approx(
                cramers_v_table(table), abs=1e-12)

    def test_identical_vectors_give_one(self):
        a = np.array(["x", "y", "x", "z", "y", "z"])
        assert cramers_v(a, a) == 1.0

    def test_product_table_gives_zero(self):
        # counts n_ij = r_i * c_j realize exact independence
        r = [2, 3]
        c = [5, 7]
        a, b = [], []
        for i, ri in enumerate(r):
            for j, cj in enumerate(c):
                a += [i] * (ri * cj)
                b += [j] * (ri * cj)
        assert cramers_v(np.array(a), np.array(b)) == 0.0

    def test_single_level_margin_rejected(self):
        with pytest.raises(DegenerateTable):
            cramers_v(np.array([1, 1, 1]), np.array([1, 2, 3]))

    def test_declared_category_never_observed_rejected(self):
        a = np.array([0, 0, 1, 1])
        b = np.array([0, 1, 0, 1])
        with pytest.raises(DegenerateTable):
            cramers_v(a, b, categories_a=[0, 1, 2])


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1, width=16)),
                min_size=4, max_size=30))
@settings(max_examples=60, deadline=None)
def test_auc_complement_sums_to_one(pairs):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs])
    if y.sum() in (0, len(y)):
        return
    assert auc(y, s) + auc(y, -s) == pytest.approx(1.0, abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1, width=16)),
                min_size=4, max_size=30),
       st.floats(min_value=0.1, max_value=5.0))
@settings(max_examples=60, deadline=None)
def test_auc_invariant_under_monotone_transform(pairs, scale):
    y = np.array([p[0] for p in pairs])
    s = np.array([p[1] for p in pairs])
    if y.sum() in (0, len(y)):
        return
    assert auc(y, s) == pytest.approx(auc(y, scale * s + 2.0), abs=1e-12)


@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 2)),
                min_size=8, max_size=60))
@settings(max_examples=60, deadline=None)
def test_cramers_v_symmetric(pairs):
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    if len(set(a.tolist())) < 2 or len(set(b.tolist())) < 2:
        return
    assert cramers_v(a, b) == pytest.approx(cramers_v(b, a), abs=1e-12)
