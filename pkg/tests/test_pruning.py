"""Density control: round-time history, pruning masks, recovery, stopping."""

import math

import numpy as np
import pytest

from prfl.model import Mask, ParamVector
from prfl.pruning import (DensityState, EarlyStopper, NoHistoryError,
                          TimeQueue, compute_density, mean_round_time,
                          prune_to_density, should_terminate)

from conftest import pv
from oracles import top_k_stable


class TestTimeQueue:
    def test_capacity_evicts_oldest(self):
        q = TimeQueue(capacity=3)
        for t in [1.0, 2.0, 3.0, 4.0]:
            q.push(t)
        assert len(q) == 3
        assert mean_round_time(q) == pytest.approx(3.0)

    def test_empty_mean_raises(self):
        with pytest.raises(NoHistoryError):
            mean_round_time(TimeQueue(capacity=2))

    @pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
    def test_rejects_nonpositive_or_nonfinite(self, bad):
        q = TimeQueue(capacity=2)
        with pytest.raises(ValueError):
            q.push(bad)

    def test_capacity_must_be_positive(self):
        with pytest.raises(ValueError):
            TimeQueue(capacity=0)


class TestComputeDensity:
    def make_state(self, rho_min=0.1):
        return DensityState(rho=1.0, rho_min=rho_min, delta_rho=0.2,
                            queue=TimeQueue(capacity=4))

    def test_fastest_client_gets_full_density(self):
        means = {0: 10.0, 1: 20.0, 2: 40.0}
        st = self.make_state()
        assert compute_density(means, 0, st) == pytest.approx(1.0)
        assert compute_density(means, 1, st) == pytest.approx(0.5)
        assert compute_density(means, 2, st) == pytest.approx(0.25)

    def test_floor_applies(self):
        means = {0: 1.0, 1: 100.0}
        st = self.make_state(rho_min=0.3)
        assert compute_density(means, 1, st) == pytest.approx(0.3)

    def test_cap_at_one(self):
        # equal means -> everyone dense
        means = {0: 5.0, 1: 5.0}
        st = self.make_state()
        assert compute_density(means, 0, st) == 1.0
        assert compute_density(means, 1, st) == 1.0

    def test_missing_client_raises(self):
        with pytest.raises(KeyError):
            compute_density({0: 1.0}, 3, self.make_state())


class TestRecovery:
    def test_reaches_one_in_exactly_four_steps(self):
        st = DensityState(rho=0.2, rho_min=0.2, delta_rho=0.2,
                          queue=TimeQueue(capacity=2))
        steps = 0
        while st.rho_min < 1.0:
            st.recover()
            steps += 1
            assert steps < 50
        assert steps == 4
        assert st.rho_min == 1.0
        assert st.rho == 1.0

    def test_recover_lifts_rho_to_new_floor(self):
        st = DensityState(rho=0.25, rho_min=0.2, delta_rho=0.5,
                          queue=TimeQueue(capacity=2))
        st.recover()
        assert st.rho_min == pytest.approx(0.75)
        assert st.rho == pytest.approx(0.75)

    def test_recover_never_overshoots_one(self):
        st = DensityState(rho=0.9, rho_min=0.9, delta_rho=0.3,
                          queue=TimeQueue(capacity=2))
        st.recover()
        assert st.rho_min == 1.0
        assert st.rho == 1.0


class TestPruneToDensity:
    def test_keeps_largest_magnitudes(self):
        w = pv([0.1, -5.0, 3.0, -0.2, 4.0])
        m = prune_to_density(w, 0.6)
        assert m.bits.tolist() == [0, 1, 1, 0, 1]

    def test_matches_stable_oracle_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            n = int(rng.integers(1, 12))
            # draw from a tiny value set to force many magnitude ties
            vals = rng.choice([-2.0, -1.0, 0.0, 1.0, 2.0], size=n)
            rho = float(rng.uniform(0.05, 1.0))
            m = prune_to_density(pv(vals), rho)
            k = m.popcount
            want = top_k_stable(vals.tolist(), k)
            assert sorted(np.flatnonzero(m.bits).tolist()) == want

    def test_density_one_keeps_everything(self):
        w = pv([0.0, 1.0, 2.0])
        assert prune_to_density(w, 1.0).popcount == 3

    def test_kept_count_rounds_up(self):
        # 10 params at rho=0.33 -> ceil(3.3) = 4 kept
        w = pv(list(range(1, 11)))
        assert prune_to_density(w, 0.33).popcount == 4

    def test_float_noise_does_not_inflate_count(self):
        # 3 * (1/3) is 0.9999...; must keep 1, not 2
        w = pv([3.0, 2.0, 1.0])
        assert prune_to_density(w, 1.0 / 3.0).popcount == 1

    def test_layer_policy_prunes_each_layer(self):
        shapes = ((4,), (4,))
        w = ParamVector(np.array([10.0, 9.0, 8.0, 7.0, 0.4, 0.3, 0.2, 0.1]), shapes)
        m = prune_to_density(w, 0.5, policy="layer")
        # global pruning would keep all four of the first layer
        assert m.bits[:4].sum() == 2
        assert m.bits[4:].sum() == 2

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError):
            prune_to_density(pv([1.0]), 0.5, policy="banana")

    @pytest.mark.parametrize("rho", [0.0, -0.1, 1.1])
    def test_bad_density_rejected(self, rho):
        with pytest.raises(ValueError):
            prune_to_density(pv([1.0, 2.0]), rho)


class TestEarlyStopper:
    def test_triggers_after_patience_without_improvement(self):
        st = EarlyStopper(patience=3, min_delta=0.01)
        assert not st.observe(0.5)
        assert not st.observe(0.505)  # below min_delta, counts as stall
        assert not st.observe(0.502)
        assert st.observe(0.501)

    def test_improvement_resets_counter(self):
        st = EarlyStopper(patience=2, min_delta=0.01)
        st.observe(0.5)
        st.observe(0.5)
        assert not st.observe(0.6)  # fresh best re-arms the stopper
        st.observe(0.6)
        assert st.observe(0.6)

    def test_rearms_after_firing(self):
        st = EarlyStopper(patience=1, min_delta=0.0)
        st.observe(0.4)
        assert st.observe(0.4)
        # after firing once it starts counting again
        assert st.observe(0.8) is False

    def test_validation(self):
        with pytest.raises(ValueError):
            EarlyStopper(patience=0, min_delta=0.01)
        with pytest.raises(ValueError):
            EarlyStopper(patience=2, min_delta=-0.5)


class TestShouldTerminate:
    def test_requires_full_density_everywhere(self):
        assert should_terminate({0: 1.0, 1: 1.0}, True)
        assert not should_terminate({0: 1.0, 1: 0.5}, True)
        assert not should_terminate({0: 1.0, 1: 1.0}, False)
