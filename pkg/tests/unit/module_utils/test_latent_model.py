import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nonneg_cl.module_utils.errors import (
    ConfigInvalid,
    InvalidPermutation,
    LabelMapMismatch,
    NonStochastic,
    RequiresAtLeastTwoClasses,
    ZeroMarginal,
)
from nonneg_cl.module_utils.latent_model import (
    LabelMap,
    LatentClassModel,
    bayes_classifier_weights,
    build_model,
    build_two_view_model,
    class_overlap,
    cooccurrence,
    ground_truth_phi,
    mutual_information_oracle,
    sample_negative,
    sample_pair,
    tie_break_argmax,
    two_view_ground_truth,
)
from nonneg_cl.module_utils.objectives import asymmetric_nmf_objective


def test_marginal_of_two_class_model(two_class):
    assert_allclose(two_class.marginal, [0.25, 0.25, 0.25, 0.25])


def test_one_hot_posterior_rows_are_one_hot(one_hot):
    post = one_hot.posterior
    assert post.shape == (50, 5)
    assert_array_equal(np.sort(post, axis=1)[:, -1], np.ones(50))
    assert np.all((post == 0.0) | (post == 1.0))


def test_conditional_row_not_summing_to_one_is_rejected():
    with pytest.raises(NonStochastic):
        LatentClassModel([0.5, 0.5], [[0.45, 0.45, 0.0],
                                      [0.0, 0.5, 0.5]])


def test_sample_with_no_mass_is_rejected():
    with pytest.raises(ZeroMarginal):
        LatentClassModel([0.5, 0.5], [[1.0, 0.0, 0.0],
                                      [0.0, 1.0, 0.0]])


def test_model_arrays_are_read_only(two_class):
    with pytest.raises(ValueError):
        two_class.marginal[0] = 1.0


def test_unknown_preset():
    with pytest.raises(ConfigInvalid):
        build_model({'preset': 'spiral', 'm': 2, 'n_samples': 4})


def test_cooccurrence_entries(two_class):
    co = cooccurrence(two_class)
    expected = np.array([[0.125, 0.125, 0, 0],
                         [0.125, 0.125, 0, 0],
                         [0, 0, 0.125, 0.125],
                         [0, 0, 0.125, 0.125]])
    assert_allclose(co.raw, expected, atol=1e-15)
    assert_allclose(co.normalized, 4 * expected, atol=1e-15)


def test_cooccurrence_is_symmetric_and_normalized(random_model):
    co = cooccurrence(random_model)
    assert_array_equal(co.raw, co.raw.T)
    assert co.raw.sum() == pytest.approx(1.0, abs=1e-10)
    assert_allclose(co.degree, random_model.marginal, atol=1e-12)
    assert co.spectral_radius() == pytest.approx(1.0, abs=1e-10)


def test_ground_truth_phi_values(two_class):
    phi = ground_truth_phi(two_class)
    assert_allclose(phi.values[0], [np.sqrt(2), 0.0])
    assert np.all(np.count_nonzero(phi.values, axis=1) == 1)


def test_ground_truth_phi_factorizes_normalized_matrix(two_class):
    big_f = ground_truth_phi(two_class).weighted()
    residual = big_f @ big_f.T - cooccurrence(two_class).normalized
    assert np.linalg.norm(residual) < 1e-12


def test_ground_truth_phi_permutation_and_padding(random_model):
    phi = ground_truth_phi(random_model)
    permuted = ground_truth_phi(random_model, permutation=[2, 0, 3, 1])
    assert_allclose(permuted.values, phi.values[:, [2, 0, 3, 1]])

    padded = ground_truth_phi(random_model, k=6)
    assert padded.dim == 6
    assert_array_equal(padded.values[:, 4:], 0.0)


def test_invalid_permutation(two_class):
    with pytest.raises(InvalidPermutation):
        ground_truth_phi(two_class, permutation=[0, 0])


def test_bayes_weights_reproduce_label_posterior(two_class):
    labels = LabelMap.identity(2)
    weights = bayes_classifier_weights(two_class, labels)
    assert_allclose(weights[:, 0], [np.sqrt(0.5), 0.0])

    scores = ground_truth_phi(two_class).values @ weights
    assert scores[0, 0] == pytest.approx(1.0)
    assert_allclose(scores, labels.label_posterior(two_class), atol=1e-12)


def test_bayes_weights_on_overlap_model(overlap):
    labels = LabelMap.identity(2)
    scores = ground_truth_phi(overlap).values @ \
        bayes_classifier_weights(overlap, labels)
    assert_allclose(scores, overlap.posterior, atol=1e-12)


def test_label_map_must_partition_classes():
    with pytest.raises(LabelMapMismatch):
        LabelMap.from_groups([[0, 1], [1, 2]])
    with pytest.raises(LabelMapMismatch):
        LabelMap((0, 0, 2), 3)


def test_label_map_model_mismatch(two_class):
    with pytest.raises(LabelMapMismatch):
        LabelMap.identity(3).label_posterior(two_class)


def test_tie_break_goes_to_lowest_index():
    scores = np.array([[0.5, 0.5], [0.2, 0.8], [0.3, 0.3 + 1e-14]])
    assert_array_equal(tie_break_argmax(scores), [0, 1, 0])


def test_class_overlap_of_one_hot(one_hot):
    assert class_overlap(one_hot) == 0.0


def test_class_overlap_with_one_shared_sample():
    model = LatentClassModel([0.5, 0.5], [[0.75, 0.25, 0.0],
                                          [0.0, 0.25, 0.75]])
    assert model.marginal[1] == pytest.approx(0.25)
    assert class_overlap(model) == pytest.approx(0.0625)


def test_class_overlap_needs_two_classes():
    model = build_model({'preset': 'one_hot', 'm': 1, 'n_samples': 3})
    with pytest.raises(RequiresAtLeastTwoClasses):
        class_overlap(model)


@pytest.mark.parametrize('epsilon', [0.0, 0.01, 0.05])
def test_overlap_preset_hits_requested_epsilon(epsilon):
    model = build_model({'preset': 'overlap', 'm': 2, 'n_samples': 20,
                         'epsilon': epsilon})
    assert class_overlap(model) == pytest.approx(epsilon, abs=1e-10)


def test_random_preset_is_seeded():
    a = build_model({'preset': 'random', 'm': 3, 'n_samples': 9}, seed=3)
    b = build_model({'preset': 'random', 'm': 3, 'n_samples': 9, 'seed': 3})
    assert_array_equal(a.conditional, b.conditional)
    assert_array_equal(a.class_prior, b.class_prior)


def test_pair_frequencies_match_cooccurrence(two_class):
    rng = np.random.default_rng(0)
    anchors, positives = sample_pair(two_class, rng, size=10 ** 6)
    freq = np.mean((anchors == 0) & (positives == 1))
    assert freq == pytest.approx(0.125, abs=0.002)


def test_pairs_stay_within_a_class(one_hot):
    anchors, positives = sample_pair(one_hot, np.random.default_rng(5),
                                     size=5000)
    assert_array_equal(anchors // 10, positives // 10)


def test_sampling_is_deterministic(one_hot):
    first = sample_pair(one_hot, np.random.default_rng(9), size=100)
    second = sample_pair(one_hot, np.random.default_rng(9), size=100)
    assert_array_equal(first[0], second[0])
    assert_array_equal(first[1], second[1])
    assert_array_equal(sample_negative(one_hot, np.random.default_rng(2), 50),
                       sample_negative(one_hot, np.random.default_rng(2), 50))


def test_single_draws_are_ints(two_class):
    rng = np.random.default_rng(0)
    x, x_pos = sample_pair(two_class, rng)
    assert isinstance(x, int) and isinstance(x_pos, int)
    assert isinstance(sample_negative(two_class, rng), int)


def test_mutual_information_oracle(two_class):
    identity = np.eye(4)
    assert mutual_information_oracle(identity, two_class) == \
        pytest.approx(np.log(2))
    constant = np.ones((4, 1))
    assert mutual_information_oracle(constant, two_class) == \
        pytest.approx(0.0, abs=1e-15)


def test_two_view_one_hot_optimum_has_zero_residual():
    model = build_two_view_model({'preset': 'one_hot', 'm': 2,
                                  'n_visual': 2, 'n_language': 2})
    assert_allclose(model.normalized, np.eye(2), atol=1e-15)
    phi_v, phi_l = two_view_ground_truth(model)
    residual = asymmetric_nmf_objective(model.normalized, phi_v, phi_l).loss
    assert residual == pytest.approx(0.0, abs=1e-24)


def test_two_view_random_joint_is_a_distribution():
    model = build_two_view_model({'preset': 'random', 'm': 3,
                                  'n_visual': 5, 'n_language': 7,
                                  'seed': 4})
    assert model.joint.shape == (5, 7)
    assert model.joint.sum() == pytest.approx(1.0, abs=1e-12)
    assert_allclose(model.joint.sum(axis=1), model.marginal_visual,
                    atol=1e-12)
