import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpol.errors import ShapeMismatch
from mpol.loss import mpol_loss, shelf_penalty, wasserstein_1d

from .oracles import brute_force_w1

finite = st.floats(-2, 2, allow_nan=False)


class TestWasserstein:
    def test_identity(self):
        m = np.random.default_rng(0).normal(size=(3, 4))
        v, g = wasserstein_1d(m, m)
        assert v == 0.0
        assert np.all(g == 0.0)

    def test_hand_example(self):
        v, _ = wasserstein_1d(np.array([[0.2, 0.8]]), np.array([[0.9, 0.1]]))
        assert v == pytest.approx(0.1, abs=1e-15)
        assert brute_force_w1([0.2, 0.8], [0.9, 0.1]) == pytest.approx(0.1, abs=1e-15)

    def test_hand_example_gradient(self):
        # sorted m = [0.8, 0.2] vs [0.9, 0.1]: 0.8 sits below its partner, 0.2 above
        _, g = wasserstein_1d(np.array([[0.2, 0.8]]), np.array([[0.9, 0.1]]))
        assert g.tolist() == [[0.5, -0.5]]

    def test_shift_invariance(self):
        rng = np.random.default_rng(1)
        m, mp = rng.uniform(size=(4, 4)), rng.uniform(size=(4, 4))
        a, _ = wasserstein_1d(m, mp)
        b, _ = wasserstein_1d(m + 0.37, mp + 0.37)
        assert a == pytest.approx(b, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            wasserstein_1d(np.zeros((2, 3)), np.zeros((3, 2)))

    def test_sign_zero_at_ties(self):
        m = np.array([[0.5, 0.1]])
        mp = np.array([[0.5, 0.3]])
        _, g = wasserstein_1d(m, mp)
        assert g[0, 0] == 0.0
        assert g[0, 1] == -0.5

    def test_tied_entries_deterministic(self):
        m = np.array([[0.5, 0.5, 0.5]])
        mp = np.array([[0.9, 0.5, 0.1]])
        _, g1 = wasserstein_1d(m, mp)
        _, g2 = wasserstein_1d(m.copy(), mp.copy())
        # stable order: first tied entry meets the largest reference value
        assert g1.tolist() == g2.tolist() == [[-1 / 3, 0.0, 1 / 3]]

    @settings(max_examples=200, deadline=None)
    @given(st.integers(1, 6).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite),
                                                         arrays(np.float64, n, elements=finite))))
    def test_matches_all_pairings(self, pair):
        a, b = pair
        v, _ = wasserstein_1d(a[None, :], b[None, :])
        assert abs(v - brute_force_w1(a, b)) <= 1e-12

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, 9, elements=finite), arrays(np.float64, 9, elements=finite),
           arrays(np.float64, 9, elements=finite))
    def test_metric_axioms(self, a, b, c):
        d = lambda p, q: wasserstein_1d(p.reshape(3, 3), q.reshape(3, 3))[0]
        assert d(a, b) == pytest.approx(d(b, a), abs=1e-12)
        assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
        assert d(a, np.sort(a)[::-1]) == 0.0
        if not np.array_equal(np.sort(a), np.sort(b)):
            assert d(a, b) > 0


class TestShelf:
    def test_nonnegative(self):
        v, g = shelf_penalty(np.array([[0.0, 0.3, 1.2]]))
        assert v == 0.0 and np.all(g == 0.0)

    def test_example(self):
        v, g = shelf_penalty(np.array([-0.5, 0.3, -0.2]))
        assert v == pytest.approx(0.7, abs=1e-15)
        assert g.tolist() == [-1.0, 0.0, -1.0]

    def test_permutation_invariant(self):
        m = np.random.default_rng(2).normal(size=50)
        assert shelf_penalty(m)[0] == pytest.approx(shelf_penalty(m[::-1])[0], abs=1e-12)

    def test_mean_reduction(self):
        m = np.array([[-0.5, 0.3], [-0.2, 0.0]])
        v, g = shelf_penalty(m, "mean")
        assert v == pytest.approx(0.7 / 4, abs=1e-15)
        assert g.tolist() == [[-0.25, 0.0], [-0.25, 0.0]]

    def test_unknown_reduction(self):
        with pytest.raises(ValueError):
            shelf_penalty(np.zeros(3), "max")

    def test_gradient_sparsity(self):
        m = np.random.default_rng(3).normal(size=(6, 6))
        _, g = shelf_penalty(m)
        assert np.array_equal(g != 0, m < 0)


class TestMpol:
    def test_identical_nonnegative(self):
        m = np.random.default_rng(4).uniform(size=(3, 3))
        rep, g = mpol_loss(m, m)
        assert rep.total == 0.0 and np.all(g == 0)

    def test_lambda_zero(self):
        rng = np.random.default_rng(5)
        m, mp = rng.normal(size=(3, 3)), rng.uniform(size=(3, 3))
        rep, _ = mpol_loss(m, mp, 0.0)
        assert rep.total == rep.l_w

    def test_report_consistency(self):
        rng = np.random.default_rng(6)
        m, mp = rng.normal(size=(5, 5)), rng.uniform(size=(5, 5))
        rep, _ = mpol_loss(m, mp, 0.1)
        assert rep.total == rep.l_w + 0.1 * rep.l_s
        assert rep.l_w >= 0 and rep.l_s >= 0 and rep.lam == 0.1

    @pytest.mark.parametrize("reduction", ["sum", "mean"])
    def test_reduction_scaling(self, reduction):
        rng = np.random.default_rng(7)
        m, mp = rng.normal(size=(3, 5)), rng.uniform(size=(3, 5))
        rep, _ = mpol_loss(m, mp, 0.1, reduction)
        scale = 1.0 if reduction == "sum" else m.size
        assert rep.l_s == pytest.approx(-m[m < 0].sum() / scale, abs=1e-14)

    @pytest.mark.parametrize("reduction", ["sum", "mean"])
    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_finite_differences(self, seed, reduction):
        rng = np.random.default_rng(seed)
        m = rng.normal(0.3, 0.5, size=(4, 4))
        mp = rng.uniform(size=(4, 4))
        _, g = mpol_loss(m, mp, 0.1, reduction)
        h = 1e-6
        flat = m.ravel()
        sorted_mp = np.sort(mp.ravel())[::-1]
        order = np.argsort(-flat, kind="stable")
        partner = np.empty(flat.size)
        partner[order] = sorted_mp
        gaps = np.sort(flat)
        min_gap = np.min(np.diff(gaps))
        checked = 0
        for i in range(flat.size):
            if abs(flat[i] - partner[i]) <= 1e-4 or abs(flat[i]) <= 1e-4 or min_gap <= 2 * h:
                continue
            up, down = flat.copy(), flat.copy()
            up[i] += h
            down[i] -= h
            num = (mpol_loss(up.reshape(4, 4), mp, 0.1, reduction)[0].total
                   - mpol_loss(down.reshape(4, 4), mp, 0.1, reduction)[0].total) / (2 * h)
            assert abs(num - g.ravel()[i]) <= 1e-6
            checked += 1
        assert checked > 0
