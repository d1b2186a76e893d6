import pytest

from nonneg_cl.module_utils import theorems
from nonneg_cl.module_utils.theorems import SuiteConfig


@pytest.fixture
def small_suite():
    return SuiteConfig(m=3, n_samples=12, random_models=3, feature_draws=3,
                       max_random_m=4, max_random_n=12, restarts=2)


@pytest.mark.parametrize('name', ['rotation', 'equivalence', 'optimality',
                                  'one_hot', 'bayes', 'orthogonality'])
def test_exact_checks_pass(small_suite, name):
    check = dict(theorems.SUITE)[name]
    results = check(small_suite)
    assert results
    for result in results:
        assert result.passed, result.to_json()


def test_default_one_hot_sparsity_check():
    results = theorems.check_one_hot(SuiteConfig())
    sparsity = [r for r in results if r.name == 'one_hot_sparsity'][0]
    assert sparsity.detail['expected'] == pytest.approx(0.8)
    assert sparsity.passed


def test_orthogonality_checks_each_epsilon(small_suite):
    names = [r.name for r in theorems.check_orthogonality(small_suite)]
    assert names == ['orthogonality_bound_eps_0',
                     'orthogonality_bound_eps_0.01',
                     'orthogonality_bound_eps_0.05']


def test_skip_and_all_passed(small_suite):
    small_suite.skip = tuple(n for n in theorems.SUITE_NAMES
                             if n != 'optimality')
    checks = theorems.run_suite(small_suite)
    assert [c.name for c in checks] == ['phi_optimal_loss',
                                        'phi_nmf_residual']
    assert theorems.all_passed(checks)


def test_failed_check_is_reported():
    check = theorems._check('made_up', 0.5, 0.1)
    assert not check.passed
    assert not theorems.all_passed([check])
    assert check.to_json() == {'name': 'made_up', 'measured': 0.5,
                               'tolerance': 0.1, 'passed': False,
                               'detail': {}}


@pytest.mark.slow
def test_uniqueness_restarts_align(small_suite):
    for result in theorems.check_uniqueness(small_suite):
        assert result.passed, result.to_json()


def test_rotation_checks_train_plain_features(small_suite):
    results = {r.name: r for r in theorems.check_rotation(small_suite)}
    assert list(results) == ['cl_reaches_optimal_loss',
                             'cl_rotation_invariance',
                             'cl_rotation_has_negative_entry',
                             'cl_not_aligned_to_phi',
                             'rotation_invariance',
                             'rotation_breaks_nonnegativity']
    assert results['cl_reaches_optimal_loss'].measured < 1e-10
    assert results['cl_reaches_optimal_loss'].detail['steps'] > 1
    assert results['cl_rotation_invariance'].measured < 1e-10
    assert results['cl_rotation_has_negative_entry'].measured < -1e-3
    assert results['cl_not_aligned_to_phi'].passed
