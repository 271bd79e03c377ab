"""Tests for difficulty scheduling and the Thompson-sampling calibrator.

The binomial-likelihood tests check the library code against an
independent pure-Python reference built on math.lgamma and a stable
log-sigmoid, written before the comparisons below.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from recagg import (
    CalibratorState,
    ConfigError,
    InvalidPool,
    SchedulerState,
    SyntheticEnv,
    TrajectoryRow,
    difficulty_update,
    effective_sample_size,
    ess_resample,
    init_calibrator,
    log_binomial_pmf,
    posterior_update,
    simulate_calibration,
    systematic_resample_indices,
    thompson_sample_difficulty,
    verify_reward,
    weighted_env_sampler,
)


def reference_log_pmf(k: int, G: int, mu: float, s: float, d: float) -> float:
    """Independent log Binomial(k; G, sigmoid(-(d - mu)/s)) in pure Python."""
    z = -(d - mu) / s
    if z >= 0:
        log_p = -math.log1p(math.exp(-z))
        log_q = -z - math.log1p(math.exp(-z))
    else:
        log_p = z - math.log1p(math.exp(z))
        log_q = -math.log1p(math.exp(z))
    return (
        math.lgamma(G + 1)
        - math.lgamma(k + 1)
        - math.lgamma(G - k + 1)
        + k * log_p
        + (G - k) * log_q
    )


def reference_normalize(log_w):
    """Normalize log weights with max-shift and fsum, independently of scipy."""
    m = max(log_w)
    lse = m + math.log(math.fsum(math.exp(x - m) for x in log_w))
    return [x - lse for x in log_w]


def single_atom(mu, s=4.0, **kwargs):
    defaults = dict(explore_prob=0.0, ess_threshold=0.5)
    defaults.update(kwargs)
    return CalibratorState(
        mus=np.array([float(mu)]),
        ss=np.array([float(s)]),
        log_weights=np.array([0.0]),
        **defaults,
    )


class TestVerifyReward:
    def test_zero_distance(self):
        assert verify_reward(3.5, 3.5, 1e-9) == 1

    def test_within_tolerance(self):
        assert verify_reward(1.0, 1.4999, 0.5) == 1

    def test_boundary_is_strict(self):
        assert verify_reward(1.0, 1.5, 0.5) == 0

    def test_zero_eps_never_awards(self):
        assert verify_reward(2.0, 2.5, 0.0) == 0
        assert verify_reward(2.0, 2.0, 0.0) == 0

    def test_negative_eps_rejected(self):
        with pytest.raises(ConfigError):
            verify_reward(1.0, 1.0, -0.1)


class TestDifficultyUpdate:
    def test_high_pass_rate_fresh_group_increases(self):
        assert difficulty_update(0.8, 5, 5) == (1, 6)

    def test_high_pass_rate_stale_group_ignored(self):
        assert difficulty_update(0.8, 5, 4) == (0, 5)

    def test_zero_pass_rate_decreases_even_stale(self):
        assert difficulty_update(0.0, 5, 4) == (-1, 4)
        assert difficulty_update(0.0, 5, 5) == (-1, 4)

    def test_middling_pass_rate_holds(self):
        assert difficulty_update(0.5, 5, 5) == (0, 5)

    def test_exact_seventy_percent_holds(self):
        assert difficulty_update(0.7, 5, 5) == (0, 5)

    def test_out_of_range_rate_rejected(self):
        with pytest.raises(ConfigError):
            difficulty_update(-0.01, 5, 5)
        with pytest.raises(ConfigError):
            difficulty_update(1.01, 5, 5)

    @given(
        rbar=st.floats(min_value=0.0, max_value=1.0, allow_nan=False),
        d=st.integers(min_value=-100, max_value=100),
        d_group=st.integers(min_value=-100, max_value=100),
    )
    @settings(max_examples=200)
    def test_step_size_at_most_one(self, rbar, d, d_group):
        delta, new_d = difficulty_update(rbar, d, d_group)
        assert delta in (-1, 0, 1)
        assert new_d == d + delta

    def test_scheduler_state_fields(self):
        s = SchedulerState(difficulty=5, last_group_difficulty=4, env_id="e1")
        assert (s.difficulty, s.last_group_difficulty, s.sample_count) == (5, 4, 0)


class TestLogBinomialPmf:
    def test_matches_reference_on_grid(self):
        for G in (1, 5, 16, 64):
            for mu in (-100.0, 0.0, 37.0, 50.5):
                for s in (1.0, 4.0, 6.3):
                    for d in (-500, 0, 37, 120):
                        for k in range(G + 1):
                            got = float(log_binomial_pmf(k, G, mu, s, d))
                            want = reference_log_pmf(k, G, mu, s, d)
                            assert got == pytest.approx(want, rel=1e-10, abs=1e-10)

    def test_reference_pmf_normalizes(self):
        for G, mu, s, d in [(16, 37.0, 4.0, 40), (64, 0.0, 1.0, -800), (8, 50.0, 6.0, 50)]:
            total = math.fsum(
                math.exp(reference_log_pmf(k, G, mu, s, d)) for k in range(G + 1)
            )
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_implementation_pmf_normalizes(self):
        for G, mu, s, d in [(16, 37.0, 4.0, 40), (64, 0.0, 1.0, -800), (8, 50.0, 6.0, 50)]:
            total = math.fsum(
                math.exp(float(log_binomial_pmf(k, G, mu, s, d))) for k in range(G + 1)
            )
            assert total == pytest.approx(1.0, abs=1e-12)

    def test_extreme_curves_stay_finite(self):
        out = log_binomial_pmf(0, 16, -700.0, 1.0, 100)
        assert np.isfinite(out)
        out = log_binomial_pmf(16, 16, 900.0, 1.0, 100)
        assert np.isfinite(out)

    def test_broadcasts_over_pool(self):
        rng = np.random.default_rng(0)
        mus = rng.normal(50, 40, size=64)
        ss = np.maximum(np.abs(rng.normal(6, 2, size=64)), 1.0)
        out = log_binomial_pmf(7, 16, mus, ss, 42)
        assert out.shape == (64,)
        for j in range(64):
            assert float(out[j]) == pytest.approx(
                reference_log_pmf(7, 16, float(mus[j]), float(ss[j]), 42), rel=1e-10
            )


class TestInitCalibrator:
    def test_uniform_start(self):
        cal = init_calibrator(np.random.default_rng(0))
        assert cal.pool_size == 64
        np.testing.assert_allclose(cal.log_weights, -math.log(64))
        assert float(cal.weights().sum()) == pytest.approx(1.0, abs=1e-12)
        assert effective_sample_size(cal.weights()) == pytest.approx(64.0, rel=1e-12)

    def test_scale_floor_applied(self):
        cal = init_calibrator(np.random.default_rng(1), s_scale=50.0, s_floor=2.5)
        assert (cal.ss >= 2.5).all()

    def test_default_ess_threshold_half_pool(self):
        cal = init_calibrator(np.random.default_rng(0), pool_size=48)
        assert cal.ess_threshold == 24.0

    def test_ess_threshold_override(self):
        cal = init_calibrator(np.random.default_rng(0), ess_threshold=10.0)
        assert cal.ess_threshold == 10.0

    def test_deterministic_for_seed(self):
        a = init_calibrator(np.random.default_rng(7))
        b = init_calibrator(np.random.default_rng(7))
        np.testing.assert_array_equal(a.mus, b.mus)
        np.testing.assert_array_equal(a.ss, b.ss)

    def test_invalid_params_rejected(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigError):
            init_calibrator(rng, pool_size=0)
        with pytest.raises(ConfigError):
            init_calibrator(rng, p_target=0.0)
        with pytest.raises(ConfigError):
            init_calibrator(rng, p_target=1.0)
        with pytest.raises(ConfigError):
            init_calibrator(rng, s_floor=0.0)


class TestThompsonSample:
    def test_balanced_target_returns_location_exactly(self):
        d, j, target = thompson_sample_difficulty(single_atom(37.0), np.random.default_rng(0))
        assert (d, j, target) == (37, 0, 0.5)

    def test_half_to_even_rounding(self):
        assert thompson_sample_difficulty(single_atom(36.5), np.random.default_rng(0))[0] == 36
        assert thompson_sample_difficulty(single_atom(37.5), np.random.default_rng(0))[0] == 38
        assert thompson_sample_difficulty(single_atom(-0.5), np.random.default_rng(0))[0] == 0

    def test_quarter_target_plug_in(self):
        cal = single_atom(37.0, p_target=0.25)
        d, _, target = thompson_sample_difficulty(cal, np.random.default_rng(0))
        assert target == 0.25
        assert d == round(37.0 + 4.0 * math.log(3.0))
        assert d == 41

    def test_single_candidate_always_index_zero(self):
        cal = single_atom(12.0)
        rng = np.random.default_rng(3)
        assert all(thompson_sample_difficulty(cal, rng)[1] == 0 for _ in range(20))

    def test_one_hot_weights_pin_the_candidate(self):
        cal = CalibratorState(
            mus=np.array([10.0, 90.0]),
            ss=np.array([4.0, 4.0]),
            log_weights=np.array([0.0, -np.inf]),
            explore_prob=0.0,
            ess_threshold=1.0,
        )
        rng = np.random.default_rng(5)
        for _ in range(50):
            d, j, _ = thompson_sample_difficulty(cal, rng)
            assert j == 0
            assert d == 10

    def test_exploration_stays_in_band(self):
        cal = single_atom(37.0, explore_prob=1.0)
        rng = np.random.default_rng(5)
        targets = [thompson_sample_difficulty(cal, rng)[2] for _ in range(300)]
        assert all(0.25 <= t <= 0.75 for t in targets)
        assert len(set(targets)) > 100

    def test_no_exploration_keeps_exact_target(self):
        cal = single_atom(37.0, explore_prob=0.0)
        rng = np.random.default_rng(5)
        assert all(thompson_sample_difficulty(cal, rng)[2] == 0.5 for _ in range(50))

    def test_deterministic_for_seed(self):
        cal_a = init_calibrator(np.random.default_rng(2))
        cal_b = init_calibrator(np.random.default_rng(2))
        seq_a = [thompson_sample_difficulty(cal_a, np.random.default_rng(s)) for s in range(20)]
        seq_b = [thompson_sample_difficulty(cal_b, np.random.default_rng(s)) for s in range(20)]
        assert seq_a == seq_b

    def test_empty_pool_rejected(self):
        cal = CalibratorState(
            mus=np.array([]), ss=np.array([]), log_weights=np.array([]), ess_threshold=1.0
        )
        with pytest.raises(InvalidPool):
            thompson_sample_difficulty(cal, np.random.default_rng(0))

    def test_all_zero_weights_rejected(self):
        cal = CalibratorState(
            mus=np.array([1.0, 2.0]),
            ss=np.array([1.0, 1.0]),
            log_weights=np.array([-np.inf, -np.inf]),
            ess_threshold=1.0,
        )
        with pytest.raises(InvalidPool):
            thompson_sample_difficulty(cal, np.random.default_rng(0))


class TestPosteriorUpdate:
    def test_identical_candidates_keep_uniform_weights(self):
        cal = CalibratorState(
            mus=np.full(4, 37.0),
            ss=np.full(4, 4.0),
            log_weights=np.full(4, -math.log(4)),
            ess_threshold=2.0,
        )
        w = posterior_update(cal, d=40, k=5, G=16)
        np.testing.assert_allclose(w, 0.25, rtol=1e-12)

    def test_posterior_odds_compound_over_full_success(self):
        cal = CalibratorState(
            mus=np.array([math.log(9.0), -math.log(9.0)]),
            ss=np.array([1.0, 1.0]),
            log_weights=np.full(2, -math.log(2.0)),
            ess_threshold=1.0,
        )
        w = posterior_update(cal, d=0, k=16, G=16)
        assert w[0] / w[1] == pytest.approx(9.0**16, rel=1e-12)
        assert w[0] > 0.999

    def test_mass_moves_toward_closer_candidate(self):
        logit = lambda p: math.log(p / (1.0 - p))
        cal = CalibratorState(
            mus=np.array([logit(0.3), logit(0.7)]),
            ss=np.array([1.0, 1.0]),
            log_weights=np.full(2, -math.log(2.0)),
            ess_threshold=1.0,
        )
        w = posterior_update(cal, d=0, k=6, G=10)
        want_ratio = math.exp(
            reference_log_pmf(6, 10, logit(0.7), 1.0, 0)
            - reference_log_pmf(6, 10, logit(0.3), 1.0, 0)
        )
        assert w[1] > 0.5
        assert w[1] / w[0] == pytest.approx(want_ratio, rel=1e-10)

    def test_matches_reference_over_update_sequence(self):
        rng = np.random.default_rng(11)
        mus = rng.normal(50, 40, size=16)
        ss = np.maximum(np.abs(rng.normal(6, 2, size=16)), 1.0)
        cal = CalibratorState(
            mus=mus.copy(),
            ss=ss.copy(),
            log_weights=np.full(16, -math.log(16)),
            ess_threshold=8.0,
        )
        ref_lw = [-math.log(16)] * 16
        for _ in range(30):
            d = int(rng.integers(30, 70))
            G = int(rng.integers(1, 32))
            k = int(rng.integers(0, G + 1))
            w = posterior_update(cal, d, k, G)
            ref_lw = reference_normalize(
                [
                    lw + reference_log_pmf(k, G, float(mus[j]), float(ss[j]), d)
                    for j, lw in enumerate(ref_lw)
                ]
            )
            np.testing.assert_allclose(w, np.exp(ref_lw), rtol=1e-9, atol=1e-12)

    def test_normalization_survives_fuzzed_extreme_updates(self):
        cal = init_calibrator(np.random.default_rng(3))
        rng = np.random.default_rng(4)
        for _ in range(16000):
            d = int(rng.integers(-200, 200))
            G = int(rng.integers(1, 64))
            k = int(rng.integers(0, G + 1))
            w = posterior_update(cal, d, k, G)
            assert np.isfinite(w).all()
            assert abs(float(w.sum()) - 1.0) <= 1e-9

    def test_history_records_observations(self):
        cal = init_calibrator(np.random.default_rng(0))
        posterior_update(cal, 37, 8, 16)
        posterior_update(cal, 40, 2, 16)
        assert cal.history == [(37, 8, 16), (40, 2, 16)]

    def test_out_of_range_successes_rejected(self):
        cal = init_calibrator(np.random.default_rng(0))
        with pytest.raises(ConfigError):
            posterior_update(cal, 37, -1, 16)
        with pytest.raises(ConfigError):
            posterior_update(cal, 37, 17, 16)


class TestEffectiveSampleSize:
    def test_uniform_pool(self):
        assert effective_sample_size(np.full(32, 1 / 32)) == pytest.approx(32.0, rel=1e-12)

    def test_one_hot(self):
        w = np.zeros(8)
        w[3] = 1.0
        assert effective_sample_size(w) == pytest.approx(1.0, rel=1e-12)

    def test_hand_case(self):
        assert effective_sample_size(np.array([0.8, 0.2])) == pytest.approx(1 / 0.68)

    def test_dominant_weight_collapses_ess(self):
        w = np.full(32, 0.01 / 31)
        w[0] = 0.99
        ess = effective_sample_size(w)
        assert ess == pytest.approx(1.0203, rel=1e-3)

    def test_bounds(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            m = int(rng.integers(2, 40))
            raw = rng.random(m) + 1e-9
            w = raw / raw.sum()
            ess = effective_sample_size(w)
            assert 1.0 - 1e-9 <= ess <= m + 1e-9


class TestSystematicResample:
    def test_counts_match_expected_within_one(self):
        rng = np.random.default_rng(12)
        for _ in range(150):
            m = int(rng.integers(2, 40))
            raw = rng.random(m) + 1e-12
            w = raw / raw.sum()
            idx = systematic_resample_indices(w, rng)
            assert idx.size == m
            counts = np.bincount(idx, minlength=m)
            for j in range(m):
                assert math.floor(m * w[j]) - 1e-9 <= counts[j] <= math.ceil(m * w[j]) + 1e-9

    def test_indices_nondecreasing(self):
        rng = np.random.default_rng(13)
        w = rng.random(16)
        w /= w.sum()
        idx = systematic_resample_indices(w, rng)
        assert (np.diff(idx) >= 0).all()

    def test_uniform_weights_keep_every_atom(self):
        idx = systematic_resample_indices(np.full(8, 0.125), np.random.default_rng(0))
        np.testing.assert_array_equal(np.sort(idx), np.arange(8))


class TestEssResample:
    def test_no_resample_at_threshold_boundary(self):
        cal = CalibratorState(
            mus=np.array([1.0, 2.0]),
            ss=np.array([1.0, 1.0]),
            log_weights=np.full(2, -math.log(2.0)),
            ess_threshold=2.0,
        )
        assert ess_resample(cal, np.random.default_rng(0)) is False
        np.testing.assert_allclose(cal.log_weights, -math.log(2.0))

    def test_uniform_pool_no_resample(self):
        cal = init_calibrator(np.random.default_rng(0), pool_size=32, ess_threshold=16.0)
        assert ess_resample(cal, np.random.default_rng(1)) is False

    def test_dominant_weight_triggers_and_copies_winner(self):
        m = 32
        w = np.full(m, 0.01 / (m - 1))
        w[5] = 0.99
        cal = CalibratorState(
            mus=np.arange(m, dtype=float),
            ss=np.full(m, 4.0),
            log_weights=np.log(w),
            ess_threshold=16.0,
        )
        assert ess_resample(cal, np.random.default_rng(2)) is True
        assert int((cal.mus == 5.0).sum()) >= 31
        np.testing.assert_allclose(cal.log_weights, -math.log(m))
        assert cal.history == []

    def test_history_folds_with_recency_decay(self):
        cal = CalibratorState(
            mus=np.array([10.0, 20.0]),
            ss=np.array([2.0, 3.0]),
            log_weights=np.log(np.array([0.99, 0.01])),
            recency=0.9,
            ess_threshold=1.5,
            weighted_successes=2.0,
            weighted_failures=3.0,
        )
        cal.history = [(37, 10, 16), (40, 4, 16)]
        assert ess_resample(cal, np.random.default_rng(0)) is True
        assert cal.weighted_successes == pytest.approx(0.9 * 10 + 4 + 0.81 * 2.0, rel=1e-12)
        assert cal.weighted_failures == pytest.approx(0.9 * 6 + 12 + 0.81 * 3.0, rel=1e-12)
        assert cal.history == []

    def test_resample_preserves_pool_size_and_members(self):
        cal = init_calibrator(np.random.default_rng(8), pool_size=16)
        original = set(zip(cal.mus.tolist(), cal.ss.tolist()))
        posterior_update(cal, 37, 16, 16)
        posterior_update(cal, 37, 16, 16)
        posterior_update(cal, 37, 16, 16)
        if ess_resample(cal, np.random.default_rng(9)):
            assert cal.pool_size == 16
            assert set(zip(cal.mus.tolist(), cal.ss.tolist())) <= original


class TestWeightedEnvSampler:
    def test_least_sampled_env_favored(self):
        rng = np.random.default_rng(9)
        counts = {"a": 0, "b": 9}
        hits = sum(weighted_env_sampler(counts, rng) == "a" for _ in range(8000))
        assert hits / 8000 == pytest.approx(10 / 11, abs=0.02)

    def test_equal_counts_near_uniform(self):
        rng = np.random.default_rng(10)
        counts = {"a": 3, "b": 3}
        hits = sum(weighted_env_sampler(counts, rng) == "a" for _ in range(4000))
        assert hits / 4000 == pytest.approx(0.5, abs=0.03)

    def test_single_env(self):
        assert weighted_env_sampler({"only": 99}, np.random.default_rng(0)) == "only"

    def test_empty_rejected(self):
        with pytest.raises(ConfigError):
            weighted_env_sampler({}, np.random.default_rng(0))

    def test_deterministic_for_seed(self):
        counts = {"a": 1, "b": 2, "c": 0}
        seq_a = [weighted_env_sampler(counts, np.random.default_rng(s)) for s in range(20)]
        seq_b = [weighted_env_sampler(counts, np.random.default_rng(s)) for s in range(20)]
        assert seq_a == seq_b


class TestSyntheticEnv:
    def test_midpoint_rate_is_half(self):
        env = SyntheticEnv(mu_star=37.0, s_star=4.0, rng=np.random.default_rng(0))
        assert env.solve_rate(37.0) == pytest.approx(0.5, abs=1e-12)

    def test_rate_decreases_with_difficulty(self):
        env = SyntheticEnv(mu_star=37.0, s_star=4.0, rng=np.random.default_rng(0))
        rates = [env.solve_rate(d) for d in range(20, 60)]
        assert all(a > b for a, b in zip(rates, rates[1:]))

    def test_extreme_difficulties_saturate(self):
        env = SyntheticEnv(mu_star=37.0, s_star=1.0, rng=np.random.default_rng(0))
        assert env.rollout_group(-500, 16) == 16
        assert env.rollout_group(500, 16) == 0

    def test_rollouts_within_group(self):
        env = SyntheticEnv(mu_star=37.0, s_star=4.0, rng=np.random.default_rng(1))
        for d in range(30, 45):
            k = env.rollout_group(d, 16)
            assert 0 <= k <= 16

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(ConfigError):
            SyntheticEnv(mu_star=37.0, s_star=0.0, rng=np.random.default_rng(0))
        with pytest.raises(ConfigError):
            SyntheticEnv(mu_star=37.0, s_star=-1.0, rng=np.random.default_rng(0))


class TestSimulateCalibration:
    def run(self, seed, iterations=200, s_star=4.0, **cal_kwargs):
        cal = init_calibrator(np.random.default_rng(seed), **cal_kwargs)
        env = SyntheticEnv(mu_star=37.0, s_star=s_star, rng=np.random.default_rng(seed + 1000))
        rows = simulate_calibration(env, cal, iterations, 16, np.random.default_rng(seed + 2000))
        return cal, rows

    def test_trajectory_plumbing(self):
        cal, rows = self.run(0, iterations=40)
        assert len(rows) == 40
        assert [r.iteration for r in rows] == list(range(40))
        for r in rows:
            assert isinstance(r, TrajectoryRow)
            assert r.group_size == 16
            assert 0 <= r.successes <= 16
            assert r.pass_rate == r.successes / 16
            assert 0 <= r.candidate < 64
            assert 0.25 <= r.effective_target <= 0.75
            assert r.ess >= 1.0 - 1e-9

    def test_weights_stay_normalized(self):
        cal, _ = self.run(1)
        assert abs(float(cal.weights().sum()) - 1.0) <= 1e-9

    def test_oracle_prior_passes_at_half_from_start(self):
        m = 8
        cal = CalibratorState(
            mus=np.full(m, 37.0),
            ss=np.full(m, 4.0),
            log_weights=np.full(m, -math.log(m)),
            explore_prob=0.0,
            ess_threshold=m / 2,
        )
        env = SyntheticEnv(mu_star=37.0, s_star=4.0, rng=np.random.default_rng(100))
        rows = simulate_calibration(env, cal, 50, 16, np.random.default_rng(101))
        assert all(r.difficulty == 37 for r in rows)
        mean_rate = sum(r.pass_rate for r in rows) / len(rows)
        assert 0.4 <= mean_rate <= 0.6

    def test_smooth_env_tail_pass_rate_near_target(self):
        for seed in range(3):
            _, rows = self.run(seed)
            tail = rows[-50:]
            mean_rate = sum(r.pass_rate for r in tail) / len(tail)
            assert 0.35 <= mean_rate <= 0.65, f"seed {seed}: {mean_rate}"

    def test_steep_env_difficulty_localizes(self):
        within = 0
        for seed in range(10):
            _, rows = self.run(seed, s_star=0.05, pool_size=128, mu_scale=15.0)
            tail = sorted(r.difficulty for r in rows[-50:])
            within += abs(tail[len(tail) // 2] - 37) <= 1
        assert within >= 7

    def test_zero_iterations_rejected(self):
        cal = init_calibrator(np.random.default_rng(0))
        env = SyntheticEnv(mu_star=37.0, s_star=4.0, rng=np.random.default_rng(1))
        with pytest.raises(ConfigError):
            simulate_calibration(env, cal, 0, 16, np.random.default_rng(2))
