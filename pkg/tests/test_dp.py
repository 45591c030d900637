import math

import numpy as np
import pytest

from splitdp import (
    NoiseStream,
    PrivacyBudget,
    Task,
    bottomup_epsilon,
    coefficient_noise,
    dissect,
    global_sensitivity,
    laplace_icdf,
    laplace_sample,
    party_epsilon,
    party_sensitivity,
    perturb,
    sub_sensitivity_g,
    sub_sensitivity_h,
    vsplit,
)
from splitdp.dp import laplace_array


class TestNoiseStream:
    def test_same_seed_same_sequence(self):
        s1, s2 = NoiseStream(99), NoiseStream(99)
        assert [s1.uniform() for _ in range(10)] == [s2.uniform() for _ in range(10)]
        assert [NoiseStream(98).uniform()] != [NoiseStream(99).uniform()]

    def test_substreams_differ_and_are_stable(self):
        root = NoiseStream(5)
        a = root.substream(1, 2).uniform()
        b = root.substream(1, 3).uniform()
        assert a != b
        assert NoiseStream(5).substream(1, 2).uniform() == a

    def test_draw_count(self):
        s = NoiseStream(0)
        s.uniform()
        s.uniforms(5)
        assert s.draws == 6

    def test_integers_below_uniform_range(self):
        s = NoiseStream(1)
        vals = s.integers_below(97, 1000)
        assert all(0 <= v < 97 for v in vals)

    def test_negative_seed_rejected(self):
        with pytest.raises(ValueError):
            NoiseStream(-1)


class TestLaplace:
    def test_median_maps_to_zero(self):
        assert laplace_icdf(0.5, 3.0) == 0.0

    def test_icdf_symmetry(self):
        assert laplace_icdf(0.25, 1.0) == pytest.approx(-laplace_icdf(0.75, 1.0))

    def test_variance_matches_two_sigma_squared(self):
        # footnote check: Var = 2 * scale^2, within 2% on 1e6 draws
        scale = 1.7
        draws = laplace_array(scale, NoiseStream(12345), 1_000_000)
        assert abs(draws.var() / (2 * scale * scale) - 1.0) < 0.02

    def test_mean_near_zero(self):
        scale = 2.5
        draws = laplace_array(scale, NoiseStream(54321), 1_000_000)
        assert abs(draws.mean()) < 0.01 * scale

    def test_seeded_bit_identical(self):
        a = [laplace_sample(1.0, NoiseStream(7).substream(3)) for _ in range(1)]
        s1 = NoiseStream(7).substream(3)
        s2 = NoiseStream(7).substream(3)
        seq1 = [laplace_sample(1.0, s1) for _ in range(20)]
        seq2 = [laplace_sample(1.0, s2) for _ in range(20)]
        assert seq1 == seq2
        assert seq1[0] == a[0]

    def test_bad_scale_rejected(self):
        with pytest.raises(ValueError):
            laplace_sample(0.0, NoiseStream(0))
        with pytest.raises(ValueError):
            laplace_sample(-1.0, NoiseStream(0))


class TestPerturb:
    def test_noise_off_is_identity(self):
        values = np.array([1.0, 2.0, 3.0])
        out = perturb(values, delta_f=10.0, epsilon=None, stream=NoiseStream(0))
        assert np.array_equal(out, values)

    def test_single_coefficient_matches_manual_draw(self):
        stream = NoiseStream(77)
        out = perturb([5.0], delta_f=4.0, epsilon=2.0, stream=stream)
        manual = 5.0 + laplace_sample(2.0, NoiseStream(77))
        assert out[0] == manual

    def test_full_linear_d2_consumes_seven_draws(self):
        stream = NoiseStream(3)
        values = np.zeros(7)  # 1 + d + d^2 coefficients at d=2
        perturb(values, delta_f=18.0, epsilon=1.0, stream=stream)
        assert stream.draws == 7

    def test_keyed_draws_match_coefficient_noise(self):
        stream = NoiseStream(11)
        out = perturb([0.0, 0.0], 2.0, 1.0, stream, keys=[4, 9])
        assert out[0] == coefficient_noise(11, 4, 2.0)
        assert out[1] == coefficient_noise(11, 9, 2.0)

    def test_bad_epsilon_rejected(self):
        with pytest.raises(ValueError):
            perturb([1.0], 1.0, 0.0, NoiseStream(0))
        with pytest.raises(ValueError):
            perturb([1.0], 1.0, math.inf, NoiseStream(0))


class TestPartyEpsilon:
    def test_equal_sensitivity_collapses(self):
        assert party_epsilon(1.5, 20.0, 20.0) == 1.5

    def test_linear_owner_example(self):
        df = global_sensitivity(Task.LINEAR, 4)
        dfk = party_sensitivity(Task.LINEAR, 4, 2, True)
        assert df == 50.0 and dfk == 34.0
        assert party_epsilon(1.0, df, dfk) == pytest.approx(0.68)

    def test_linear_non_owner_example(self):
        dfk = party_sensitivity(Task.LINEAR, 4, 2, False)
        assert party_epsilon(1.0, 50.0, dfk) == pytest.approx(0.48)

    def test_sensitivity_order_enforced(self):
        with pytest.raises(ValueError):
            party_epsilon(1.0, 10.0, 11.0)

    @pytest.mark.parametrize("d", [2, 5, 9])
    @pytest.mark.parametrize("K", [1, 2, 3])
    @pytest.mark.parametrize("task", [Task.LINEAR, Task.LOGISTIC])
    def test_party_epsilon_never_exceeds_global(self, d, K, task):
        if K > d:
            pytest.skip("more parties than features")
        part = vsplit(d, K)
        budget = PrivacyBudget.topdown(task, part, 2.0)
        for pb in budget.per_party:
            assert pb.epsilon_k <= 2.0 + 1e-12


class TestBottomUp:
    def test_single_party_degenerate(self):
        df = global_sensitivity(Task.LINEAR, 3)
        assert bottomup_epsilon(df, [(df, 0.7)], []) == pytest.approx(0.7)

    def test_linear_in_budgets(self):
        df = 10.0
        single = [(5.0, 0.2), (2.0, 0.1)]
        cross = [(4.0, 0.05)]
        base = bottomup_epsilon(df, single, cross)
        doubled = bottomup_epsilon(df, [(s, 2 * e) for s, e in single],
                                   [(s, 2 * e) for s, e in cross])
        assert doubled == pytest.approx(2 * base)

    def test_hand_evaluated_two_party(self):
        task, d = Task.LINEAR, 2
        df = global_sensitivity(task, d)
        dg1 = sub_sensitivity_g(task, d, 1, True)
        dg2 = sub_sensitivity_g(task, d, 1, False)
        dh = sub_sensitivity_h(task, d, 1, 1, True)
        eps = bottomup_epsilon(df, [(dg1, 0.3), (dg2, 0.2)], [(dh, 0.1)])
        expected = df / dg1 * 0.3 + df / dg2 * 0.2 + df / dh * 0.1
        assert eps == pytest.approx(expected)

    def test_monotone_in_every_sub_budget(self):
        df = 12.0
        single = [(6.0, 0.4), (3.0, 0.2)]
        cross = [(8.0, 0.1)]
        base = bottomup_epsilon(df, single, cross)
        for i in range(len(single)):
            bumped = list(single)
            bumped[i] = (bumped[i][0], bumped[i][1] + 0.05)
            assert bottomup_epsilon(df, bumped, cross) > base
        assert bottomup_epsilon(df, single, [(8.0, 0.15)]) > base

    def test_zero_sensitivity_nonzero_budget_rejected(self):
        with pytest.raises(ValueError):
            bottomup_epsilon(10.0, [(0.0, 0.1)], [])

    @pytest.mark.parametrize("task", [Task.LINEAR, Task.LOGISTIC])
    def test_budget_builder_sums_exactly(self, task):
        part = vsplit(6, 3)
        budget = PrivacyBudget.bottomup(task, part, 0.9)
        for k in (1, 2, 3):
            total = budget.single_budgets[k][1]
            total += sum(eps for pair, (_, eps) in budget.cross_budgets.items() if k in pair)
            assert total == pytest.approx(0.9, abs=1e-12)
        assert budget.epsilon_global > 0.9  # composition ratios are >= 1

    def test_budget_noise_scales(self):
        part = vsplit(4, 2)
        task = Task.LINEAR
        budget = PrivacyBudget.bottomup(task, part, 1.0)
        alloc = dissect(task, part)
        for entry in alloc.entries:
            scale = budget.noise_scale(entry)
            if entry.is_cross:
                sens, eps = budget.cross_budgets[frozenset(entry.parties)]
            else:
                sens, eps = budget.single_budgets[entry.parties[0]]
            assert scale == sens / eps


class TestTopDownBudget:
    def test_scale_uniform_over_entries(self):
        part = vsplit(5, 2)
        budget = PrivacyBudget.topdown(Task.LINEAR, part, 2.0)
        alloc = dissect(Task.LINEAR, part)
        scales = {budget.noise_scale(e) for e in alloc.entries}
        assert scales == {budget.delta_f / 2.0}

    def test_logistic_constant_exempt(self):
        part = vsplit(5, 2)
        budget = PrivacyBudget.topdown(Task.LOGISTIC, part, 2.0)
        alloc = dissect(Task.LOGISTIC, part)
        assert budget.noise_scale(alloc.entries[0]) is None

    def test_noise_off(self):
        part = vsplit(5, 2)
        budget = PrivacyBudget.topdown(Task.LINEAR, part, None)
        alloc = dissect(Task.LINEAR, part)
        assert budget.noise_scale(alloc.entries[3]) is None
        assert budget.max_noise_scale == 0.0
