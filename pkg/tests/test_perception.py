"""Perception-model tests: EM recovery, clustering, classification, deadlines."""

import math

import numpy as np
import pytest

from brainsched.chi2 import chi_square_quantile
from brainsched.perception import (
    DataError,
    GmmModel,
    JointDataset,
    assign_cluster,
    classify,
    effective_delay,
    em_fit,
    label_rows,
    load_dataset_csv,
    load_model_json,
    mode_count_scan,
    perception_bound,
    responsibility,
    save_dataset_csv,
    save_model_json,
    select_mode_count,
    train_classifier,
    within_cluster_scatter,
)

TWO_MODE_MEANS = np.array([[0.0, 0.0, 0.0, 0.02], [5.0, 5.0, 5.0, 0.15]])
TWO_MODE_COV = np.diag([0.09, 0.09, 0.09, 1e-4])


def two_mode_dataset(n=500, seed=7) -> JointDataset:
    """Synthetic draw from two well-separated known Gaussians."""
    rng = np.random.default_rng(seed)
    half = n // 2
    chol = np.linalg.cholesky(TWO_MODE_COV)
    rows = []
    for k, count in ((0, half), (1, n - half)):
        z = rng.standard_normal((count, 4))
        block = TWO_MODE_MEANS[k] + z @ chol.T
        block[:, -1] = np.maximum(block[:, -1], 1e-4)
        rows.append(block)
    return JointDataset.from_arrays(np.vstack(rows)[:, :3], np.vstack(rows)[:, 3])


def separated_model(sigma_scale=1.0) -> GmmModel:
    """Two modes separated by ~20 standard deviations in every coordinate."""
    dim = 4
    means = np.array([[0.0] * dim, [20.0 * sigma_scale] * dim])
    cov = (sigma_scale**2) * np.eye(dim)
    return GmmModel(
        weights=np.array([0.5, 0.5]),
        means=means,
        covariances=np.array([cov, cov]),
        fit_log_likelihood=0.0,
    )


# ---------------------------------------------------------------------------
# em_fit
# ---------------------------------------------------------------------------


def test_single_mode_fit_reduces_to_sample_moments():
    data = two_mode_dataset(n=200, seed=3)
    model = em_fit(data, 1, seed=0)
    assert model.means[0] == pytest.approx(data.rows.mean(axis=0), rel=1e-6)
    # The documented ridge adds 1e-8 * mean(diag) to the diagonal.
    expected_cov = np.cov(data.rows, rowvar=False, bias=True)
    ridge = 1e-8 * np.mean(np.diag(expected_cov))
    assert model.covariances[0] == pytest.approx(
        expected_cov + ridge * np.eye(4), rel=1e-7, abs=1e-12
    )


def test_two_mode_recovery_within_tolerance():
    data = two_mode_dataset(n=500, seed=11)
    model = em_fit(data, 2, seed=0)
    order = np.argsort(model.means[:, 0])
    recovered = model.means[order]
    for k in range(2):
        assert np.linalg.norm(recovered[k] - TWO_MODE_MEANS[k]) < 0.1


def test_insufficient_data_raises():
    data = two_mode_dataset(n=3, seed=1)
    with pytest.raises(DataError, match="insufficient data"):
        em_fit(data, 5)


def test_log_likelihood_history_is_monotone():
    data = two_mode_dataset(n=300, seed=5)
    for seed in range(5):
        model = em_fit(data, 2, seed=seed)
        hist = model.log_likelihood_history
        assert len(hist) >= 1
        assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(hist, hist[1:]))
        assert model.fit_log_likelihood == hist[-1]


def test_non_finite_input_rejected():
    rows = np.ones((10, 3))
    rows[2, 1] = np.nan
    with pytest.raises(DataError):
        JointDataset(rows=rows, feature_names=("a", "b", "beta_seconds"))


# ---------------------------------------------------------------------------
# responsibility / assign_cluster
# ---------------------------------------------------------------------------


def test_responsibility_single_mode_is_one():
    model = em_fit(two_mode_dataset(n=100, seed=2), 1, seed=0)
    r = responsibility(model, model.means[0])
    assert r == pytest.approx([1.0])


def test_responsibility_identical_modes_split_evenly():
    dim = 3
    model = GmmModel(
        weights=np.array([0.5, 0.5]),
        means=np.zeros((2, dim)),
        covariances=np.array([np.eye(dim), np.eye(dim)]),
        fit_log_likelihood=0.0,
    )
    r = responsibility(model, [0.3, -1.2, 0.5])
    assert r == pytest.approx([0.5, 0.5])


def test_responsibility_at_far_mode_mean_is_decisive():
    model = separated_model()
    r = responsibility(model, model.means[0])
    assert r[0] > 0.999
    # Direct density-evaluation oracle for the same quantity.
    def log_norm(w, mean):
        diff = w - mean
        return -0.5 * float(diff @ diff) - 0.5 * 4 * math.log(2 * math.pi)

    w = model.means[0]
    num = 0.5 * math.exp(log_norm(w, model.means[0]))
    den = num + 0.5 * math.exp(log_norm(w, model.means[1]))
    assert r[0] == pytest.approx(num / den, rel=1e-9)


def test_responsibility_sums_to_one_on_random_inputs():
    data = two_mode_dataset(n=200, seed=9)
    model = em_fit(data, 2, seed=0)
    rng = np.random.default_rng(42)
    for _ in range(50):
        w = rng.normal(scale=5.0, size=4)
        r = responsibility(model, w)
        assert np.all(r >= 0.0)
        assert abs(r.sum() - 1.0) < 1e-12


def test_responsibility_dimension_mismatch():
    model = separated_model()
    with pytest.raises(DataError):
        responsibility(model, [1.0, 2.0])


def test_assign_cluster_cases():
    model = separated_model()
    assert assign_cluster(model, model.means[1]) == 2
    assert assign_cluster(model, model.means[0]) == 1
    single = em_fit(two_mode_dataset(n=50, seed=4), 1, seed=0)
    assert assign_cluster(single, single.means[0]) == 1


def test_assign_cluster_tie_breaks_to_lowest_index():
    dim = 2
    model = GmmModel(
        weights=np.array([1 / 3, 1 / 3, 1 / 3]),
        means=np.array([[-1.0, 0.0], [9.0, 9.0], [1.0, 0.0]]),
        covariances=np.array([np.eye(dim)] * 3),
        fit_log_likelihood=0.0,
    )
    # Midpoint of symmetric modes 1 and 3: responsibilities tie exactly.
    assert assign_cluster(model, [0.0, 0.0]) == 1


def test_assign_cluster_invariant_to_weight_rescaling():
    data = two_mode_dataset(n=150, seed=6)
    model = em_fit(data, 2, seed=0)
    # Same weights passed unnormalized would violate the model invariant, so
    # check argmax stability against a uniform prior instead.
    uniform = GmmModel(
        weights=np.full(2, 0.5),
        means=model.means,
        covariances=model.covariances,
        fit_log_likelihood=0.0,
    )
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = rng.normal(scale=4.0, size=4) + np.array([2.5, 2.5, 2.5, 0.08])
        if abs(model.weights[0] - 0.5) < 1e-6:
            assert assign_cluster(model, w) == assign_cluster(uniform, w)


# ---------------------------------------------------------------------------
# within-cluster scatter and mode-count selection
# ---------------------------------------------------------------------------


def test_scatter_identical_points_is_zero():
    rows = np.hstack([np.ones((5, 2)), np.full((5, 1), 0.1)])
    data = JointDataset(rows=rows, feature_names=("a", "b", "beta_seconds"))
    assert within_cluster_scatter(data, np.ones(5, dtype=int)) == 0.0


def test_scatter_two_point_hand_value():
    # One cluster of two 1-D points {0, 2}: ordered pairs (1,2) and (2,1),
    # each squared distance 4, summed 8, halved -> 4.
    rows = np.array([[0.0, 0.05], [2.0, 0.05]])
    data = JointDataset(rows=rows, feature_names=("x", "beta_seconds"))
    value = within_cluster_scatter(data, np.array([1, 1]), standardize=False)
    assert value == pytest.approx(4.0)


def test_scatter_singleton_clusters_is_zero():
    data = two_mode_dataset(n=20, seed=8)
    labels = np.arange(1, 21)
    assert within_cluster_scatter(data, labels) == 0.0


def test_scatter_label_validation():
    data = two_mode_dataset(n=10, seed=8)
    with pytest.raises(DataError):
        within_cluster_scatter(data, np.zeros(10, dtype=int))
    with pytest.raises(DataError):
        within_cluster_scatter(data, np.ones(3, dtype=int))


def test_select_mode_count_single_tight_gaussian():
    rng = np.random.default_rng(5)
    feats = rng.normal(size=(200, 2)) * 0.1 + [1.0, 2.0]
    beta = rng.normal(0.05, 0.005, 200).clip(1e-3)
    data = JointDataset.from_arrays(feats, beta)
    assert select_mode_count(data, 1, 4, seed=2) == 1


def test_select_mode_count_three_separated_modes():
    rng = np.random.default_rng(4)
    centers = np.array(
        [[0.0, 0.0, 0.03], [10.0, 0.0, 0.10], [0.0, 10.0, 0.17]]
    )
    blocks = [
        centers[k] + rng.normal(scale=[1.0, 1.0, 0.005], size=(120, 3))
        for k in range(3)
    ]
    rows = np.vstack(blocks)
    data = JointDataset.from_arrays(rows[:, :2], np.maximum(rows[:, 2], 1e-3))
    assert select_mode_count(data, 1, 6, seed=0) == 3


def test_select_mode_count_degenerate_range():
    data = two_mode_dataset(n=60, seed=12)
    assert select_mode_count(data, 4, 4, seed=0) == 4


def test_mode_count_scan_curve_shape():
    data = two_mode_dataset(n=120, seed=13)
    curve = mode_count_scan(data, 1, 3, seed=0)
    assert [k for k, _ in curve] == [1, 2, 3]
    assert all(w >= 0.0 for _, w in curve)


# ---------------------------------------------------------------------------
# classifier
# ---------------------------------------------------------------------------


def test_classifier_peaks_at_own_mean():
    model = separated_model()
    clf = train_classifier(model)
    assert classify(clf, model.means[0][:3]) == 1
    assert classify(clf, model.means[1][:3]) == 2


def test_classifier_resubstitution_accuracy():
    data = two_mode_dataset(n=400, seed=21)
    model = em_fit(data, 2, seed=0)
    clf = train_classifier(model)
    labels = label_rows(model, data)
    hits = sum(
        classify(clf, data.features[i]) == labels[i] for i in range(data.n)
    )
    assert hits / data.n >= 0.99


def test_classifier_single_mode_always_one():
    model = em_fit(two_mode_dataset(n=80, seed=22), 1, seed=0)
    clf = train_classifier(model)
    rng = np.random.default_rng(1)
    for _ in range(10):
        assert classify(clf, rng.normal(size=3)) == 1


def test_classifier_midpoint_tie_breaks_low():
    dim = 3
    model = GmmModel(
        weights=np.array([0.5, 0.5]),
        means=np.array([[-1.0, 0.0, 0.05], [1.0, 0.0, 0.05]]),
        covariances=np.array([np.eye(dim), np.eye(dim)]),
        fit_log_likelihood=0.0,
    )
    clf = train_classifier(model)
    assert classify(clf, [0.0, 0.0]) == 1


def test_classify_dimension_mismatch():
    clf = train_classifier(separated_model())
    with pytest.raises(DataError):
        classify(clf, [1.0])


# ---------------------------------------------------------------------------
# perception bound and effective delay
# ---------------------------------------------------------------------------


def worked_model(mu_d=0.100, var_d=4e-4) -> GmmModel:
    dim = 4
    cov = np.eye(dim)
    cov[-1, -1] = var_d
    means = np.zeros((1, dim))
    means[0, -1] = mu_d
    return GmmModel(
        weights=np.array([1.0]),
        means=means,
        covariances=np.array([cov]),
        fit_log_likelihood=0.0,
    )


def test_perception_bound_zero_gamma():
    assert perception_bound(worked_model(), 1, 0.0) == 0.0


def test_perception_bound_worked_value():
    # sigma = 20 ms, gamma = 0.95, 4 joint dimensions.
    bound = perception_bound(worked_model(), 1, 0.95)
    assert bound == pytest.approx(0.02 * math.sqrt(chi_square_quantile(4, 0.95)), rel=1e-12)
    assert bound == pytest.approx(0.061604, abs=5e-7)


def test_perception_bound_monte_carlo_coverage():
    model = worked_model()
    rng = np.random.default_rng(100)
    gamma = 0.9
    bound = perception_bound(model, 1, gamma)
    draws = rng.normal(loc=0.1, scale=0.02, size=100_000)
    covered = np.mean(np.abs(draws - 0.1) < bound)
    # The joint-ellipsoid level is a lower bound on marginal coverage.
    assert covered >= gamma


def test_effective_delay_worked_value():
    profile = effective_delay(worked_model(), 1, 0.025)
    assert profile.d_min == pytest.approx(0.038396, abs=1e-5)
    assert profile.mode_id == 1
    assert profile.mu_d == pytest.approx(0.1)
    assert profile.var_d == pytest.approx(4e-4)
    assert not profile.clamped


def test_effective_delay_near_half_approaches_mean():
    # At epsilon' -> 0.5 the confidence level hits 0, so the bound collapses.
    profile = effective_delay(worked_model(), 1, 0.5 - 1e-12)
    assert profile.d_min == pytest.approx(0.100, abs=1e-4)


def test_effective_delay_clamps_small_means():
    profile = effective_delay(worked_model(mu_d=0.010), 1, 0.025)
    assert profile.d_min == pytest.approx(1e-3)
    assert profile.clamped


def test_effective_delay_monotone_in_epsilon_prime():
    model = worked_model()
    eps_grid = np.linspace(0.01, 0.45, 23)
    values = [effective_delay(model, 1, e).d_min for e in eps_grid]
    assert all(b >= a for a, b in zip(values, values[1:]))


def test_effective_delay_decreases_with_variance():
    low = effective_delay(worked_model(var_d=1e-4), 1, 0.025).d_min
    high = effective_delay(worked_model(var_d=9e-4), 1, 0.025).d_min
    assert high < low


def test_effective_delay_coverage_is_one_sided():
    # Pr{beta < d_min} <= epsilon' checked by sampling the fitted mode.
    model = worked_model()
    eps = 0.05
    profile = effective_delay(model, 1, eps)
    rng = np.random.default_rng(7)
    draws = rng.normal(loc=profile.mu_d, scale=math.sqrt(profile.var_d), size=100_000)
    below = np.mean(draws < profile.d_min)
    assert below <= eps + 3.0 * math.sqrt(eps / 100_000)


def test_effective_delay_epsilon_range():
    with pytest.raises(DataError):
        effective_delay(worked_model(), 1, 0.5)
    with pytest.raises(DataError):
        effective_delay(worked_model(), 1, 0.0)
    with pytest.raises(DataError):
        effective_delay(worked_model(), 2, 0.1)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_model_json_round_trip(tmp_path):
    data = two_mode_dataset(n=120, seed=33)
    model = em_fit(data, 2, seed=0)
    path = tmp_path / "model.json"
    save_model_json(model, path)
    loaded = load_model_json(path)
    assert loaded.weights == pytest.approx(model.weights)
    assert loaded.means == pytest.approx(model.means)
    assert loaded.covariances == pytest.approx(model.covariances)
    assert loaded.fit_log_likelihood == pytest.approx(model.fit_log_likelihood)


def test_dataset_csv_round_trip(tmp_path):
    data = two_mode_dataset(n=40, seed=34)
    path = tmp_path / "subjects.csv"
    save_dataset_csv(data, path)
    loaded = load_dataset_csv(path)
    assert loaded.feature_names == data.feature_names
    assert loaded.rows == pytest.approx(data.rows, rel=1e-8)


def test_dataset_csv_requires_beta_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b,c\n1,2,3\n")
    with pytest.raises(DataError, match="beta_seconds"):
        load_dataset_csv(path)
