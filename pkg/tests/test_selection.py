import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsm_hpo.errors import DegenerateWeights, NonFiniteFitness
from tsm_hpo.selection import roulette_select, selection_weights


class TestSelectionWeights:
    def test_single(self):
        np.testing.assert_allclose(selection_weights([0.7]), [1.0])

    def test_linear_ranks(self):
        np.testing.assert_allclose(selection_weights([1.0, 2.0, 3.0]), [3 / 6, 2 / 6, 1 / 6])

    def test_maximise(self):
        np.testing.assert_allclose(selection_weights([1.0, 2.0, 3.0], minimize=False), [1 / 6, 2 / 6, 3 / 6])

    def test_shift_invariant(self):
        np.testing.assert_array_equal(selection_weights([1.0, 2.0, 3.0]), selection_weights([11.0, 12.0, 13.0]))

    def test_ties_share_rank(self):
        np.testing.assert_allclose(selection_weights([1.0, 1.0, 5.0]), [2.5 / 6, 2.5 / 6, 1 / 6])

    @pytest.mark.parametrize("bad", [float("nan"), float("inf")])
    def test_non_finite(self, bad):
        with pytest.raises(NonFiniteFitness):
            selection_weights([1.0, bad])

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30), st.randoms())
    def test_permutation_equivariant(self, f, rnd):
        perm = list(range(len(f)))
        rnd.shuffle(perm)
        w = selection_weights(f)
        wp = selection_weights([f[i] for i in perm])
        np.testing.assert_allclose(wp, w[perm], rtol=1e-12)
        assert np.all(w > 0) and abs(w.sum() - 1) < 1e-12

    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30))
    def test_better_never_weighs_less(self, f):
        w = selection_weights(f)
        for i in range(len(f)):
            for j in range(len(f)):
                if f[i] < f[j]:
                    assert w[i] > w[j]


class TestRoulette:
    def test_point_mass(self, rng):
        assert {roulette_select([1, 0, 0], rng) for _ in range(1000)} == {0}

    def test_zero_weight_never_picked(self, rng):
        assert {roulette_select([0, 0, 1, 0], rng) for _ in range(1000)} == {2}

    @pytest.mark.parametrize("weights", [(0.5, 0.5), (0.2, 0.3, 0.5)])
    def test_frequencies(self, weights):
        rng = np.random.default_rng(2024)
        picks = np.bincount([roulette_select(weights, rng) for _ in range(100_000)], minlength=len(weights))
        np.testing.assert_allclose(picks / 100_000, weights, atol=0.01)

    def test_degenerate(self, rng):
        with pytest.raises(DegenerateWeights):
            roulette_select([0, 0], rng)

    def test_negative(self, rng):
        with pytest.raises(ValueError):
            roulette_select([0.5, -0.5, 1.0], rng)

    def test_boundary_goes_low(self):
        class Fixed:
            def random(self):
                return 0.5  # u = 1 - 0.5 lands exactly on the first boundary

        assert roulette_select([0.5, 0.5], Fixed()) == 0
