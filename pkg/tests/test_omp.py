import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from omp_recover import (
    DimensionMismatch,
    GramInstance,
    GramSingular,
    OmpConfig,
    RegressionInstance,
    SelectionRule,
    StopReason,
    ZeroResidual,
    compute_statistics,
    least_squares_on_support,
    run_omp,
    select_indices,
    update_fit,
)
from omp_recover.theory import tau

from oracles import naive_omp, one_term_reduction_argmin


def gaussian_instance(seed, n, p, k, beta_min=1.0, sigma=0.1):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, p))
    beta = np.zeros(p)
    support = rng.choice(p, k, replace=False)
    beta[support] = beta_min * rng.choice([-1.0, 1.0], k) * rng.uniform(1, 2, k)
    noise = sigma * rng.standard_normal(n)
    return RegressionInstance.build(x, beta, noise, sigma)


# ----------------------------------------------------------------------
# compute_statistics


def test_statistics_identity_design():
    inst = RegressionInstance.build(np.eye(2), np.zeros(2), np.zeros(2), 1.0)
    np.testing.assert_array_equal(compute_statistics(inst, np.array([1.0, 0.0]), [0, 1]), [1.0, 0.0])


def test_statistics_cauchy_schwarz_equality():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((6, 3))
    inst = RegressionInstance.build(x, np.zeros(3), np.zeros(6), 1.0)
    z = compute_statistics(inst, 2.5 * x[:, 0], [0])
    assert z[0] == pytest.approx(np.linalg.norm(x[:, 0]), rel=1e-14)


def test_statistics_match_direct_dot_products():
    rng = np.random.default_rng(8)
    x = rng.standard_normal((8, 16))
    y = rng.standard_normal(8)
    inst = RegressionInstance(x, np.zeros(16), y, y, 1.0)
    z = compute_statistics(inst, y)
    norm = np.sqrt(sum(v * v for v in y))
    for j in range(16):
        ref = sum(x[i, j] * y[i] for i in range(8)) / norm
        assert z[j] == pytest.approx(ref, rel=1e-12)


def test_statistics_zero_residual_raises():
    inst = RegressionInstance.build(np.eye(3), np.zeros(3), np.zeros(3), 1.0)
    with pytest.raises(ZeroResidual):
        compute_statistics(inst, np.zeros(3))


# ----------------------------------------------------------------------
# select_indices


def test_select_below_threshold_stops():
    assert select_indices([0.5, -0.9], 1.0) == []


def test_select_tie_goes_to_lowest_index():
    assert select_indices([2.0, -2.0], 1.0) == [0]


def test_select_hard_threshold_all():
    assert select_indices([2.0, -2.0, 0.5], 1.0, SelectionRule.HARD_THRESHOLD_ALL) == [0, 1]


def test_select_maps_to_candidates():
    assert select_indices([0.1, 3.0], 1.0, candidates=[4, 9]) == [9]


def test_select_empty_statistics():
    with pytest.raises(ValueError):
        select_indices([], 1.0)


# ----------------------------------------------------------------------
# update_fit and least squares


def test_update_fit_rank_one_projection():
    q, _ = np.linalg.qr(np.random.default_rng(1).standard_normal((5, 5)))
    y = np.arange(1.0, 6.0)
    inst = RegressionInstance(q, np.zeros(5), y, y, 1.0)
    r, _ = update_fit(inst, [], [2])
    np.testing.assert_allclose(r, y - (q[:, 2] @ y) * q[:, 2], atol=1e-12)


def test_update_fit_full_rank_gives_zero_residual():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((6, 6))
    y = rng.standard_normal(6)
    inst = RegressionInstance(x, np.zeros(6), y, y, 1.0)
    r, _ = update_fit(inst, [], list(range(6)))
    assert np.linalg.norm(r) < 1e-10 * np.linalg.norm(y)


def test_update_fit_incremental_matches_resolve():
    inst = gaussian_instance(32, 32, 64, 5)
    order = list(np.random.default_rng(0).permutation(64)[:20])
    state, detected = None, []
    for j in order:
        r, state = update_fit(inst, detected, [j], state)
        detected.append(j)
        coef, *_ = np.linalg.lstsq(inst.x_matrix[:, detected], inst.response, rcond=None)
        ref = inst.response - inst.x_matrix[:, detected] @ coef
        assert np.linalg.norm(r - ref) <= 1e-10 * np.linalg.norm(ref)


def test_update_fit_rejects_collinear_column_and_keeps_state():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((10, 4))
    x[:, 3] = 2.0 * x[:, 1]
    y = rng.standard_normal(10)
    inst = RegressionInstance(x, np.zeros(4), y, y, 1.0)
    r, state = update_fit(inst, [], [0, 1])
    with pytest.raises(GramSingular):
        update_fit(inst, [0, 1], [3], state)
    assert state.detected == [0, 1]
    r2, _ = update_fit(inst, [0, 1], [2], state)
    coef, *_ = np.linalg.lstsq(x[:, [0, 1, 2]], y, rcond=None)
    np.testing.assert_allclose(r2, y - x[:, [0, 1, 2]] @ coef, atol=1e-10)


def test_least_squares_empty_support():
    inst = gaussian_instance(0, 10, 5, 2)
    np.testing.assert_array_equal(least_squares_on_support(inst, []), np.zeros(5))


def test_least_squares_noiseless_recovers_beta():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((20, 8))
    beta = np.array([0, 1.5, 0, -2, 0, 0, 0.5, 0])
    inst = RegressionInstance.build(x, beta, np.zeros(20), 1.0)
    np.testing.assert_allclose(least_squares_on_support(inst, [1, 3, 6, 7]), beta, atol=1e-10)


def test_least_squares_matches_normal_equations():
    rng = np.random.default_rng(16)
    x = rng.standard_normal((16, 8))
    y = rng.standard_normal(16)
    inst = RegressionInstance(x, np.zeros(8), y, y, 1.0)
    ref = np.linalg.solve(x.T @ x, x.T @ y)
    np.testing.assert_allclose(least_squares_on_support(inst, range(8)), ref, rtol=1e-10, atol=1e-12)
    gram = GramInstance.from_instance(inst)
    np.testing.assert_allclose(least_squares_on_support(gram, range(8)), ref, rtol=1e-9, atol=1e-12)


# ----------------------------------------------------------------------
# run_omp


def test_run_orthogonal_noiseless():
    n = 6
    x = np.sqrt(n) * np.eye(n)
    beta = np.zeros(n)
    beta[0] = 5.0
    inst = RegressionInstance.build(x, beta, np.zeros(n), 1.0)
    # the normalized statistic of the true column is ||X_1|| = sqrt(n), whatever beta_1 is
    trace = run_omp(inst, OmpConfig(threshold=0.99 * np.sqrt(n)))
    assert trace.detected == [0]
    assert trace.stop_reason is StopReason.RESIDUAL_ZERO
    np.testing.assert_allclose(trace.beta_hat, beta)
    above = run_omp(inst, OmpConfig(threshold=np.sqrt(n)))
    assert above.detected == []
    assert above.stop_reason is StopReason.THRESHOLD_NOT_EXCEEDED


def test_run_null_model_stops_immediately():
    rng = np.random.default_rng(11)
    n, p = 200, 50
    x = rng.standard_normal((n, p))
    noise = rng.standard_normal(n)
    inst = RegressionInstance.build(x, np.zeros(p), noise, 1.0)
    z = np.abs(x.T @ noise) / np.linalg.norm(noise)
    trace = run_omp(inst, OmpConfig(threshold=z.max() + 1e-9))
    assert trace.detected == []
    assert trace.steps == []
    assert trace.stop_reason is StopReason.THRESHOLD_NOT_EXCEEDED
    assert trace.final_max_statistic == pytest.approx(z.max(), rel=1e-12)


def test_run_matches_naive_reference_seeded():
    inst = gaussian_instance(64128, 64, 128, 4, beta_min=1.0, sigma=0.1)
    t = tau(128, 1.0)
    trace = run_omp(inst, OmpConfig(threshold=t))
    detected, beta = naive_omp(inst.x_matrix, inst.response, t)
    assert trace.detected == detected
    np.testing.assert_allclose(trace.beta_hat, beta, atol=1e-8)


def test_run_max_steps_respected():
    inst = gaussian_instance(1, 40, 60, 6, sigma=1.0)
    trace = run_omp(inst, OmpConfig(threshold=1e-3, max_steps=3))
    assert len(trace.steps) == 3
    assert trace.stop_reason is StopReason.MAX_STEPS_REACHED


def test_run_max_steps_above_cap_rejected():
    inst = gaussian_instance(1, 10, 20, 2)
    with pytest.raises(DimensionMismatch):
        run_omp(inst, OmpConfig(threshold=1.0, max_steps=11))


def test_run_duplicated_column_stops_gram_singular():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((30, 5))
    x[:, 4] = x[:, 2]
    beta = np.array([0, 0, 3.0, 0, 0])
    # noise keeps the residual nonzero after column 2 enters
    inst = RegressionInstance.build(x, beta, 0.01 * rng.standard_normal(30), 0.01)
    cfg = OmpConfig(threshold=1e-6, selection_rule=SelectionRule.HARD_THRESHOLD_ALL)
    trace = run_omp(inst, cfg)
    assert trace.stop_reason is StopReason.GRAM_SINGULAR
    assert trace.steps == []
    assert trace.detected == []


def test_hard_threshold_selects_every_exceedance():
    inst = gaussian_instance(21, 200, 30, 5, beta_min=2.0, sigma=0.1)
    t = tau(30, 1.0)
    trace = run_omp(inst, OmpConfig(threshold=t, selection_rule=SelectionRule.HARD_THRESHOLD_ALL))
    first = trace.steps[0]
    expected = [int(first.candidates[i]) for i in np.flatnonzero(np.abs(first.statistics) > t)]
    assert list(first.selected) == expected
    assert len(trace.detected) == sum(len(s.selected) for s in trace.steps)


def test_malformed_instance_rejected():
    with pytest.raises(DimensionMismatch):
        RegressionInstance.build(np.ones((3, 2)), np.ones(3), np.ones(3), 1.0)
    with pytest.raises(DimensionMismatch):
        RegressionInstance(np.ones((3, 2)), np.ones(2), np.ones(3), np.ones(4), 1.0)


def test_gram_and_dense_paths_agree():
    for seed in range(20):
        inst = gaussian_instance(seed, 80, 120, 5, sigma=0.5)
        t = tau(120, 1.0)
        a = run_omp(inst, OmpConfig(threshold=t))
        b = run_omp(GramInstance.from_instance(inst), OmpConfig(threshold=t))
        assert a.detected == b.detected
        assert a.stop_reason == b.stop_reason
        np.testing.assert_allclose(a.beta_hat, b.beta_hat, atol=1e-8)
        assert b.residual_final is None
        assert a.residual_norm_final == pytest.approx(b.residual_norm_final, rel=1e-6, abs=1e-9)


# ----------------------------------------------------------------------
# invariants


@st.composite
def instances(draw):
    n = draw(st.integers(4, 40))
    p = draw(st.integers(2, 48))
    k = draw(st.integers(0, min(n, p, 6)))
    seed = draw(st.integers(0, 2**32 - 1))
    sigma = draw(st.sampled_from([0.0, 0.05, 0.5, 2.0]))
    rademacher = draw(st.booleans())
    rng = np.random.default_rng(seed)
    x = rng.choice([-1.0, 1.0], (n, p)) if rademacher else rng.standard_normal((n, p))
    beta = np.zeros(p)
    beta[rng.choice(p, k, replace=False)] = rng.uniform(0.5, 3, k) * rng.choice([-1, 1], k)
    noise = sigma * rng.standard_normal(n)
    return RegressionInstance.build(x, beta, noise, max(sigma, 1e-3))


def _replay_residuals(inst, trace):
    detected, residuals = [], [inst.response]
    for step in trace.steps:
        detected += list(step.selected)
        coef, *_ = np.linalg.lstsq(inst.x_matrix[:, detected], inst.response, rcond=None)
        residuals.append(inst.response - inst.x_matrix[:, detected] @ coef)
    return residuals


@settings(max_examples=150, deadline=None)
@given(instances(), st.floats(0.5, 4.0))
def test_trace_invariants(inst, threshold):
    trace = run_omp(inst, OmpConfig(threshold=threshold))
    x, y = inst.x_matrix, inst.response
    # step cap and distinctness
    assert len(trace.steps) <= min(inst.n, inst.p)
    assert len(set(trace.detected)) == len(trace.detected)
    # beta_hat is zero exactly off the detected set
    off = np.setdiff1d(np.arange(inst.p), trace.detected)
    assert np.all(trace.beta_hat[off] == 0)
    # residual orthogonal to the detected columns
    if trace.detected:
        r = trace.residual_final
        for j in trace.detected:
            assert abs(x[:, j] @ r) <= 1e-8 * np.linalg.norm(x[:, j]) * max(np.linalg.norm(y), 1.0)
    norms = [s.residual_norm_before for s in trace.steps] + [trace.residual_norm_final]
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(norms, norms[1:]))
    for s in trace.steps:
        assert s.residual_norm_before > 0
        assert s.max_statistic == pytest.approx(np.max(np.abs(s.statistics)))


@settings(max_examples=100, deadline=None)
@given(instances())
def test_max_over_remaining_equals_max_over_all(inst):
    trace = run_omp(inst, OmpConfig(threshold=0.5))
    residuals = _replay_residuals(inst, trace)
    for step, r in zip(trace.steps, residuals):
        z_all = np.abs(inst.x_matrix.T @ r) / np.linalg.norm(r)
        assert step.max_statistic == pytest.approx(z_all.max(), rel=1e-8)


@settings(max_examples=100, deadline=None)
@given(instances())
def test_incremental_equals_naive(inst):
    t = 1.0
    trace = run_omp(inst, OmpConfig(threshold=t))
    if trace.stop_reason is StopReason.GRAM_SINGULAR:
        return
    detected, beta = naive_omp(inst.x_matrix, inst.response, t)
    # near-ties between columns can flip under rounding; only compare clear cases
    margins = [np.sort(np.abs(s.statistics))[-2:] for s in trace.steps if s.statistics.size > 1]
    if any(abs(a - b) < 1e-9 * b for a, b in margins):
        return
    assert trace.detected == detected
    np.testing.assert_allclose(trace.beta_hat, beta, atol=1e-6 * max(1.0, np.abs(beta).max()))


def test_selection_equals_one_term_reduction_for_equal_norm_columns():
    rng = np.random.default_rng(77)
    for _ in range(10):
        x = rng.choice([-1.0, 1.0], (24, 20))
        beta = np.zeros(20)
        beta[:4] = [3, -2, 1.5, 1]
        inst = RegressionInstance.build(x, beta, 0.3 * rng.standard_normal(24), 0.3)
        trace = run_omp(inst, OmpConfig(threshold=0.5))
        for step, r in zip(trace.steps, _replay_residuals(inst, trace)):
            assert step.selected[0] == one_term_reduction_argmin(x, r, range(20))
