import itertools
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_force_viterbi, random_counts, random_theta
from swhawkes.core import BinnedSeries, DiscreteParams, ModelKind
from swhawkes.errors import LengthMismatch
from swhawkes.inference import EMConfig, complete_log_lik, e_step
from swhawkes.selection import aic, aligned_accuracy, map_decode, select_q, viterbi
from swhawkes.simulate import sample_discrete


def test_aic_examples():
    assert aic(-100.0, 1, ModelKind.POISSON_HOMOG) == -101.0
    assert aic(-100.0, 2, ModelKind.HAWKES_HMM) == -106.0
    assert aic(-100.0, 2, ModelKind.POISSON_HMM) == -104.0


class TestDecode:
    def test_map_ties_lower_label(self):
        tau = np.array([[0.5, 0.5], [0.2, 0.8], [0.4, 0.3 + 0.3]])
        np.testing.assert_array_equal(map_decode(tau), [0, 1, 1])

    def test_viterbi_matches_brute_force(self, rng):
        for _ in range(200):
            Q, n = int(rng.integers(1, 4)), int(rng.integers(1, 7))
            th, counts = random_theta(rng, Q), random_counts(rng, n)
            want, _ = brute_force_viterbi(counts, th)
            np.testing.assert_array_equal(viterbi(BinnedSeries(counts), th), want)

    def test_viterbi_beats_map_path(self, rng):
        for _ in range(30):
            Q = int(rng.integers(2, 4))
            th = random_theta(rng, Q)
            y = BinnedSeries(random_counts(rng, 150))
            z_vit = viterbi(y, th)
            z_map = map_decode(e_step(y, th).tau)
            assert complete_log_lik(y, th, z_vit) >= complete_log_lik(y, th, z_map) - 1e-9

    def test_viterbi_single_state(self, rng):
        th = random_theta(rng, 1)
        np.testing.assert_array_equal(viterbi(BinnedSeries(random_counts(rng, 40)), th), 0)


class TestAlignedAccuracy:
    def test_identity(self):
        z = np.array([0, 1, 1, 2, 0])
        acc, perm = aligned_accuracy(z, z)
        assert acc == 1.0
        np.testing.assert_array_equal(perm, [0, 1, 2])

    def test_swapped_labels(self):
        acc, perm = aligned_accuracy([1, 1, 0, 0], [0, 0, 1, 1])
        assert acc == 1.0
        np.testing.assert_array_equal(perm, [1, 0])

    def test_partial(self):
        acc, _ = aligned_accuracy([0, 0, 0, 1], [0, 0, 1, 1])
        assert acc == 0.75

    @given(
        z=st.lists(st.integers(0, 3), min_size=1, max_size=60),
        t=st.lists(st.integers(0, 3), min_size=60, max_size=60),
        perm=st.permutations(range(4)),
    )
    def test_relabel_invariant(self, z, t, perm):
        z = np.array(z)
        t = np.array(t[: len(z)])
        acc, _ = aligned_accuracy(z, t, 4)
        acc2, _ = aligned_accuracy(np.array(perm)[z], t, 4)
        assert acc == acc2
        # the maximum over relabelings dominates every single relabeling
        for p in itertools.permutations(range(4)):
            assert acc >= np.mean(np.array(p)[z] == t) - 1e-15

    def test_assignment_solver_branch(self, rng):
        t = rng.integers(0, 8, size=500)
        shuffle = rng.permutation(8)
        acc, perm = aligned_accuracy(shuffle[t], t, 8)
        assert acc == 1.0
        np.testing.assert_array_equal(perm[shuffle], np.arange(8))

    def test_random_labels_near_half(self, rng):
        accs = [aligned_accuracy(rng.integers(0, 2, 2000), rng.integers(0, 2, 2000))[0] for _ in range(20)]
        assert abs(np.mean(accs) - 0.5) < 0.03

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            aligned_accuracy([0, 1], [0, 1, 1])


class TestSelectQ:
    def test_single_candidate(self, rng):
        y = BinnedSeries(rng.poisson(2.0, size=200))
        res = select_q(y, q_max=1)
        assert res.q_hat == 1
        assert len(res.aic_table()) == 1

    def test_homogeneous_truth_picks_one(self):
        truth = DiscreteParams([1.0], [[1.0]], [0.6], 0.2, 0.2)
        picks = Counter()
        for rep in range(10):
            counts, _ = sample_discrete(truth, 400, seed=300 + rep)
            picks[select_q(BinnedSeries(counts), q_max=3).q_hat] += 1
        assert picks.most_common(1)[0][0] == 1

    def test_table_consistent(self, rng):
        truth = DiscreteParams([0.5, 0.5], [[0.95, 0.05], [0.05, 0.95]], [0.3, 4.0], 0.2, 0.4)
        counts, _ = sample_discrete(truth, 500, seed=1)
        res = select_q(BinnedSeries(counts), q_max=3, cfg=EMConfig(seed=2))
        table = res.aic_table()
        assert [q for q, _, _ in table] == [1, 2, 3]
        best = max(table, key=lambda r: (r[2], -r[0]))
        assert best[0] == res.q_hat == 2
        assert res.best.theta_hat.n_states == 2
        for q, ll, a in table:
            assert a == pytest.approx(ll - (q * q + 2))
