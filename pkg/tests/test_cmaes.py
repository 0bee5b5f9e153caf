"""Optimizer unit tests against frozen hand-computed oracles."""

import json
import math

import numpy as np
import pytest

from hilotune import cmaes


def table_params(n=2, **kw):
    return cmaes.default_params(n, **kw)


def make_state(params):
    return cmaes.initial_state(params)


# --- parameter construction --------------------------------------------------


def test_default_params_table_values():
    p = table_params()
    assert p.lam == 7
    assert p.sigma_0 == 150.0
    assert p.c_1 == 0.15
    assert p.c_mu == 0.058
    assert p.c_sigma == 0.62
    assert p.c_m == 1.0


def test_default_params_mean_is_half_upper_bound():
    p = cmaes.default_params(2, lower=0.0, upper=400.0)
    np.testing.assert_allclose(p.m_0, [200.0, 200.0])


def test_default_params_log_decreasing_weights():
    p = table_params()
    assert p.mu == 3
    # oracle: w_i ~ ln(mu + 1/2) - ln(i), normalized
    raw = [math.log(3.5) - math.log(i) for i in (1, 2, 3)]
    expected = np.array(raw) / sum(raw)
    np.testing.assert_allclose(p.weights, expected, rtol=1e-12)
    np.testing.assert_allclose(p.weights, [0.637, 0.285, 0.078], atol=2e-3)


def test_default_params_rejects_bad_dimension():
    with pytest.raises(ValueError):
        cmaes.default_params(0)


def test_default_params_rejects_unknown_override():
    with pytest.raises(ValueError, match="unrecognized"):
        cmaes.default_params(2, c_zeta=0.5)


def test_default_params_rejects_invariant_violations():
    with pytest.raises(ValueError):
        cmaes.default_params(2, sigma_0=-1.0)
    with pytest.raises(ValueError):
        cmaes.default_params(2, mu=9)  # mu >= lambda
    with pytest.raises(ValueError):
        cmaes.default_params(2, weights=np.array([0.2, 0.3, 0.5]))  # increasing
    with pytest.raises(ValueError):
        cmaes.default_params(2, lower=10.0, upper=10.0)


def test_canonical_params_standard_rates():
    p = cmaes.canonical_params(4, sigma_0=0.5)
    assert p.lam == 4 + int(3 * math.log(4))
    mu_eff = p.mu_eff
    assert p.c_sigma == pytest.approx((mu_eff + 2) / (4 + mu_eff + 5))
    assert p.c_1 == pytest.approx(2 / ((4 + 1.3) ** 2 + mu_eff))


# --- sampling ----------------------------------------------------------------


def test_sample_zero_sigma_returns_mean():
    p = table_params(sigma_0=1e-300)  # degenerate hook: step size ~ 0
    s = make_state(p)
    xs = cmaes.sample_population(s, p, np.random.default_rng(0))
    np.testing.assert_allclose(xs, np.tile(p.m_0, (p.lam, 1)), atol=1e-290)


def test_sample_distribution_statistics():
    p = cmaes.default_params(
        2, lam=100000, sigma_0=1.0, m_0=np.zeros(2),
        lower=-np.inf, upper=np.inf,
    )
    s = make_state(p)
    xs = cmaes.sample_population(s, p, np.random.default_rng(42))
    assert np.abs(xs.mean(axis=0)).max() < 0.02
    cov = np.cov(xs.T)
    np.testing.assert_allclose(cov, np.eye(2), atol=0.05)


def test_sample_respects_bounds_by_repair():
    p = cmaes.default_params(2, m_0=np.array([5.0, 5.0]), sigma_0=500.0)
    s = make_state(p)
    xs = cmaes.sample_population(s, p, np.random.default_rng(1))
    assert np.all(xs >= p.lower) and np.all(xs <= p.upper)


def test_sample_deterministic_given_seed():
    p = table_params()
    s = make_state(p)
    a = cmaes.sample_population(s, p, np.random.default_rng(7))
    b = cmaes.sample_population(s, p, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)


# --- ranking -----------------------------------------------------------------


def test_rank_population_orders_by_fitness():
    xs = np.zeros((3, 2))
    ranked = cmaes.rank_population(xs, [3.0, 1.0, 2.0])
    # 0-based order; the stated 1-based permutation (2, 3, 1) is [1, 2, 0]
    np.testing.assert_array_equal(ranked.order, [1, 2, 0])


def test_rank_population_stable_on_ties():
    ranked = cmaes.rank_population(np.zeros((3, 2)), [1.0, 1.0, 1.0])
    np.testing.assert_array_equal(ranked.order, [0, 1, 2])


def test_rank_population_rejects_nan_naming_candidate():
    with pytest.raises(cmaes.InvalidFitnessError, match="candidate 1"):
        cmaes.rank_population(np.zeros((3, 2)), [1.0, float("nan"), 2.0])


def test_rank_population_rejects_length_mismatch():
    with pytest.raises(ValueError):
        cmaes.rank_population(np.zeros((3, 2)), [1.0, 2.0])


# --- mean update -------------------------------------------------------------


def test_update_mean_single_parent_takes_best():
    p = cmaes.default_params(2, mu=1, weights=np.array([1.0]))
    s = make_state(p)
    xs = np.array([[10.0, 20.0], [1.0, 2.0], [5.0, 5.0], [0, 0], [0, 0], [0, 0], [0, 0]])
    ranked = cmaes.rank_population(xs, [3.0, 0.5, 1.0, 9, 9, 9, 9])
    m = cmaes.update_mean(s, p, ranked)
    np.testing.assert_allclose(m, [1.0, 2.0], rtol=1e-12)


def test_update_mean_fixed_point_when_population_at_mean():
    p = table_params()
    s = make_state(p)
    xs = np.tile(s.m, (p.lam, 1))
    ranked = cmaes.rank_population(xs, np.arange(p.lam, dtype=float))
    np.testing.assert_allclose(cmaes.update_mean(s, p, ranked), s.m)


def test_update_mean_hand_computed_recombination():
    p = table_params()
    s = make_state(p)  # m = (200, 200)
    xs = np.array(
        [[180.0, 210.0], [220.0, 190.0], [150.0, 260.0],
         [300.0, 300.0], [310.0, 310.0], [320.0, 320.0], [330.0, 330.0]]
    )
    f = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]
    ranked = cmaes.rank_population(xs, f)
    w = p.weights
    # oracle: direct weighted recombination of the three best candidates
    expected = s.m + w[0] * (xs[0] - s.m) + w[1] * (xs[1] - s.m) + w[2] * (xs[2] - s.m)
    np.testing.assert_allclose(cmaes.update_mean(s, p, ranked), expected, rtol=1e-12)


# --- evolution paths, step size, covariance ----------------------------------


def test_conjugate_path_zero_stays_zero():
    p = table_params()
    s = make_state(p)
    xs = np.tile(s.m, (p.lam, 1))  # all selected y = 0
    ranked = cmaes.rank_population(xs, np.arange(7.0))
    np.testing.assert_allclose(cmaes.update_conjugate_path(s, p, ranked), np.zeros(2))


def test_conjugate_path_full_replacement_at_unit_rate():
    p = table_params(c_sigma=1.0)
    s = make_state(p)
    object.__setattr__(s, "p_sigma", np.array([5.0, -3.0]))
    xs = np.tile(s.m, (p.lam, 1))
    ranked = cmaes.rank_population(xs, np.arange(7.0))
    # (1 - c_sigma) = 0 wipes the memory; selected steps are zero here
    np.testing.assert_allclose(cmaes.update_conjugate_path(s, p, ranked), np.zeros(2))


def test_conjugate_path_hand_value():
    # C = I, single selected unit step along axis 0, mu_eff = 1
    p = cmaes.default_params(2, mu=1, weights=np.array([1.0]), sigma_0=1.0,
                             m_0=np.zeros(2), lower=-np.inf, upper=np.inf)
    s = make_state(p)
    xs = np.vstack([[1.0, 0.0], np.zeros((6, 2))])
    ranked = cmaes.rank_population(xs, [0.0, 1, 2, 3, 4, 5, 6])
    got = cmaes.update_conjugate_path(s, p, ranked)
    expected0 = math.sqrt(0.62 * (2 - 0.62) * 1.0)  # = 0.92499...
    assert got[0] == pytest.approx(expected0, rel=1e-9)
    assert got[1] == pytest.approx(0.0, abs=1e-12)
    assert expected0 == pytest.approx(0.9250, abs=1e-4)


def test_expected_standard_norm_values():
    assert cmaes.expected_standard_norm(4) == pytest.approx(1.8810, abs=1e-4)
    assert cmaes.expected_standard_norm(1) == pytest.approx(0.7976, abs=1e-4)
    assert cmaes.expected_standard_norm(100) == pytest.approx(9.9750, abs=1e-4)
    with pytest.raises(ValueError):
        cmaes.expected_standard_norm(0)


def test_heaviside_zero_path_is_one():
    assert cmaes.heaviside_stall(np.zeros(2), 0.62, g=0, n=2) == 1


def test_heaviside_huge_path_is_zero():
    assert cmaes.heaviside_stall(np.array([1e6, 0.0]), 0.62, g=5, n=2) == 0


def test_heaviside_transition_matches_hand_evaluation():
    # n=2, g=0: threshold length is t * sqrt(1 - (1 - c)^2) with
    # t = (1.4 + 2/3) * E||N(0,I_2)||
    c = 0.62
    e_norm = math.sqrt(2) * (1 - 1 / 8 + 1 / 84)
    threshold = (1.4 + 2.0 / 3.0) * e_norm * math.sqrt(1 - (1 - c) ** 2)
    below = np.array([threshold * (1 - 1e-9), 0.0])
    above = np.array([threshold * (1 + 1e-9), 0.0])
    assert cmaes.heaviside_stall(below, c, g=0, n=2) == 1
    assert cmaes.heaviside_stall(above, c, g=0, n=2) == 0


def test_step_size_unchanged_at_expected_length():
    p = table_params()
    s = make_state(p)
    e_norm = cmaes.expected_standard_norm(2)
    sigma = cmaes.update_step_size(s, p, np.array([e_norm, 0.0]))
    assert sigma == pytest.approx(150.0, rel=1e-12)


def test_step_size_shrinks_on_zero_path():
    p = table_params()
    s = make_state(p)
    sigma = cmaes.update_step_size(s, p, np.zeros(2))
    assert sigma == pytest.approx(150.0 * math.exp(-0.62 / p.d_sigma), rel=1e-12)
    assert sigma < 150.0


def test_step_size_hand_value_at_double_length():
    p = table_params()
    s = make_state(p)
    # d_sigma default for n=2: 1 + 0 + c_sigma = 1.62
    assert p.d_sigma == pytest.approx(1.62, rel=1e-12)
    e_norm = cmaes.expected_standard_norm(2)
    sigma = cmaes.update_step_size(s, p, np.array([2 * e_norm, 0.0]))
    assert sigma == pytest.approx(150.0 * math.exp(0.62 / 1.62), rel=1e-12)


def test_step_size_exponent_clamped(caplog):
    p = table_params()
    s = make_state(p)
    with caplog.at_level("WARNING"):
        sigma = cmaes.update_step_size(s, p, np.array([1e9, 0.0]))
    assert sigma == pytest.approx(150.0 * math.exp(20.0))
    assert "clamped" in caplog.text


def test_cumulative_path_stalled_decay_only():
    p = table_params()
    s = make_state(p)
    xs = np.random.default_rng(0).normal(size=(7, 2)) + 200
    ranked = cmaes.rank_population(xs, np.arange(7.0))
    got = cmaes.update_cumulative_path(s, p, ranked, h_sigma=0)
    np.testing.assert_allclose(got, np.zeros(2))  # p_c starts at 0

    object.__setattr__(s, "p_c", np.array([1.0, 2.0]))
    got = cmaes.update_cumulative_path(s, p, ranked, h_sigma=0)
    np.testing.assert_allclose(got, (1 - p.c_c) * np.array([1.0, 2.0]), rtol=1e-12)


def test_cumulative_path_full_replacement():
    p = table_params(c_c=1.0)
    s = make_state(p)
    object.__setattr__(s, "p_c", np.array([9.0, 9.0]))
    xs = np.tile(s.m + np.array([150.0, 0.0]), (7, 1))
    ranked = cmaes.rank_population(xs, np.arange(7.0))
    got = cmaes.update_cumulative_path(s, p, ranked, h_sigma=1)
    # decay term vanishes; y = (x - m)/sigma = (1, 0) for every candidate
    expected = math.sqrt(1.0 * 1.0 * p.mu_eff) * np.array([1.0, 0.0])
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_cumulative_path_hand_value():
    p = table_params()
    s = make_state(p)
    object.__setattr__(s, "p_c", np.array([0.5, -0.5]))
    xs = np.array([[350.0, 200.0], [200.0, 350.0]] + [[200.0, 200.0]] * 5)
    ranked = cmaes.rank_population(xs, [0.0, 1.0, 2, 3, 4, 5, 6])
    got = cmaes.update_cumulative_path(s, p, ranked, h_sigma=1)
    w = p.weights
    wy = w[0] * np.array([1.0, 0.0]) + w[1] * np.array([0.0, 1.0])  # y = (x-m)/150
    expected = (1 - p.c_c) * np.array([0.5, -0.5]) + math.sqrt(
        p.c_c * (2 - p.c_c) * p.mu_eff
    ) * wy
    np.testing.assert_allclose(got, expected, rtol=1e-12)


def test_covariance_unchanged_with_zero_rates():
    p = table_params(c_1=1e-300, c_mu=1e-300)
    s = make_state(p)
    xs = np.random.default_rng(3).normal(size=(7, 2)) * 50 + 200
    ranked = cmaes.rank_population(xs, np.arange(7.0))
    got = cmaes.update_covariance(s, p, ranked, np.array([1.0, 1.0]), h_sigma=1)
    np.testing.assert_allclose(got, s.C, atol=1e-12)


def test_covariance_rank_one_hand_value():
    p = table_params(c_1=0.15, c_mu=1e-300)
    s = make_state(p)
    xs = np.tile(s.m, (7, 1))
    ranked = cmaes.rank_population(xs, np.arange(7.0))
    got = cmaes.update_covariance(s, p, ranked, np.array([1.0, 0.0]), h_sigma=1)
    np.testing.assert_allclose(got, np.diag([1.0, 0.85]), atol=1e-12)


def test_covariance_result_symmetric():
    p = table_params()
    s = make_state(p)
    xs = np.random.default_rng(9).normal(size=(7, 2)) * 80 + 200
    ranked = cmaes.rank_population(xs, np.random.default_rng(1).random(7))
    got = cmaes.update_covariance(s, p, ranked, np.array([0.3, -0.2]), h_sigma=1)
    assert np.abs(got - got.T).max() == 0.0


# --- full step ---------------------------------------------------------------


def test_step_increments_generation():
    p = table_params()
    s = make_state(p)
    xs = cmaes.sample_population(s, p, np.random.default_rng(0))
    ranked = cmaes.rank_population(xs, np.arange(7.0))
    s2 = cmaes.step(s, p, ranked)
    assert s2.g == s.g + 1


def test_step_identical_fitness_mean_uses_stable_order():
    p = table_params()
    s = make_state(p)
    xs = cmaes.sample_population(s, p, np.random.default_rng(5))
    ranked = cmaes.rank_population(xs, np.ones(7))
    s2 = cmaes.step(s, p, ranked)
    w = p.weights
    expected = s.m + sum(w[i] * (xs[i] - s.m) for i in range(3))
    np.testing.assert_allclose(s2.m, expected, rtol=1e-12)


def test_step_matches_composed_sub_operations():
    """Two scripted generations on a quadratic agree with composing the
    individual update operations by hand."""
    p = table_params()
    s = make_state(p)
    rng = np.random.default_rng(11)
    target = np.array([120.0, 300.0])
    for _ in range(2):
        xs = cmaes.sample_population(s, p, rng)
        f = ((xs - target) ** 2).sum(axis=1)
        ranked = cmaes.rank_population(xs, f)

        m_next = cmaes.update_mean(s, p, ranked)
        p_sigma_next = cmaes.update_conjugate_path(s, p, ranked)
        sigma_next = cmaes.update_step_size(s, p, p_sigma_next)
        h = cmaes.heaviside_stall(p_sigma_next, p.c_sigma, s.g, p.n)
        p_c_next = cmaes.update_cumulative_path(s, p, ranked, h)
        c_next = cmaes.update_covariance(s, p, ranked, p_c_next, h)

        s2 = cmaes.step(s, p, ranked)
        np.testing.assert_array_equal(s2.m, m_next)
        np.testing.assert_array_equal(s2.p_sigma, p_sigma_next)
        assert s2.sigma == sigma_next
        np.testing.assert_array_equal(s2.p_c, p_c_next)
        np.testing.assert_array_equal(s2.C, c_next)
        s = s2


def test_step_atomic_on_failure():
    p = table_params()
    s = make_state(p)
    xs = cmaes.sample_population(s, p, np.random.default_rng(0))
    bad = cmaes.EvaluatedPopulation(
        candidates=xs[:, :1], fitnesses=np.arange(7.0), order=np.arange(7)
    )
    before = (s.m.copy(), s.C.copy(), s.sigma, s.g)
    with pytest.raises(ValueError):
        cmaes.step(s, p, bad)
    assert s.g == before[3] and s.sigma == before[2]
    np.testing.assert_array_equal(s.m, before[0])
    np.testing.assert_array_equal(s.C, before[1])


# --- archive -----------------------------------------------------------------


def test_archive_best_single_record():
    a = cmaes.SampleArchive()
    a.append(0, [1.0, 2.0], 5.0, 0.0)
    x, f = a.best_so_far()
    assert f == 5.0
    np.testing.assert_array_equal(x, [1.0, 2.0])


def test_archive_best_tie_prefers_earliest():
    a = cmaes.SampleArchive()
    for i, f in enumerate([5.0, 2.0, 2.0, 9.0]):
        a.append(0, [float(i), 0.0], f, float(i))
    x, f = a.best_so_far()
    assert f == 2.0
    assert x[0] == 1.0  # index 1: the first minimum


def test_archive_best_matches_linear_scan():
    rng = np.random.default_rng(2)
    a = cmaes.SampleArchive()
    fs = rng.random(70)
    for i, f in enumerate(fs):
        a.append(i // 7, rng.random(2), f, float(i))
    _, f_best = a.best_so_far()
    assert f_best == min(fs)  # exhaustive scan oracle


def test_archive_empty_raises():
    with pytest.raises(ValueError):
        cmaes.SampleArchive().best_so_far()


def test_archive_rejects_decreasing_generation():
    a = cmaes.SampleArchive()
    a.append(3, [0.0, 0.0], 1.0, 0.0)
    with pytest.raises(ValueError):
        a.append(2, [0.0, 0.0], 1.0, 0.0)


# --- snapshots ---------------------------------------------------------------


def test_snapshot_round_trip_exact():
    p = table_params()
    s = make_state(p)
    rng = np.random.default_rng(0)
    for _ in range(3):
        xs = cmaes.sample_population(s, p, rng)
        s = cmaes.step(s, p, cmaes.rank_population(xs, rng.random(7)))
    text = cmaes.save_snapshot(s, p)
    s2, p2 = cmaes.load_snapshot(text)
    np.testing.assert_array_equal(s.m, s2.m)
    np.testing.assert_array_equal(s.C, s2.C)
    np.testing.assert_array_equal(s.p_c, s2.p_c)
    np.testing.assert_array_equal(s.p_sigma, s2.p_sigma)
    assert s.sigma == s2.sigma and s.g == s2.g
    np.testing.assert_array_equal(p.weights, p2.weights)
    assert p.d_sigma == p2.d_sigma


def test_snapshot_version_mismatch_rejected():
    p = table_params()
    s = make_state(p)
    doc = json.loads(cmaes.save_snapshot(s, p))
    doc["version"] = 999
    with pytest.raises(ValueError, match="version"):
        cmaes.load_snapshot(json.dumps(doc))
