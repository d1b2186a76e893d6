# The verification suite run by 'nonneg-cl verify'.
#
# Each check computes one measured number on exactly-computable models,
# compares it with a tolerance, and records both. Nothing here samples
# except the random models and restarts, all seeded from the suite
# seed.

__metaclass__ = type
"""
Property checks for the NCL/NMF equivalence and its consequences.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from nonneg_cl.module_utils import metrics, objectives
from nonneg_cl.module_utils.encoders import TabularEncoder
from nonneg_cl.module_utils.features import FeatureTable
from nonneg_cl.module_utils.latent_model import (
    LabelMap,
    bayes_classifier_weights,
    build_model,
    cooccurrence,
    ground_truth_phi,
)
from nonneg_cl.module_utils.training import (
    ObjectiveSpec,
    TrainConfig,
    projected_gradient_nmf,
    train,
)

log = logging.getLogger(__name__)


@dataclass
class TheoremCheck:
    name: str
    measured: float
    tolerance: float
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_json(self):
        return {
            'name': self.name,
            'measured': float(self.measured),
            'tolerance': float(self.tolerance),
            'passed': bool(self.passed),
            'detail': metrics.to_plain(self.detail),
        }


@dataclass
class SuiteConfig:
    m: int = 5
    n_samples: int = 50
    seed: int = 0
    exact_tolerance: float = 1e-10
    random_models: int = 10
    feature_draws: int = 10
    max_random_m: int = 8
    max_random_n: int = 64
    restarts: int = 20
    learning_rate: float = 5.0
    nmf_learning_rate: float = 0.1
    steps: int = 4000
    convergence_tolerance: float = 1e-13
    alignment_tolerance: float = 1e-3
    epsilons: tuple = (0.0, 0.01, 0.05)
    overlap_samples: int = 20
    skip: tuple = ()


def _check(name, measured, tolerance, passed=None, **detail):
    if passed is None:
        passed = bool(measured <= tolerance)
    log.info("%s: measured %.3g, tolerance %.3g, %s", name, measured,
             tolerance, "pass" if passed else "FAIL")
    return TheoremCheck(name=name, measured=float(measured),
                        tolerance=float(tolerance), passed=bool(passed),
                        detail=detail)


def _one_hot(cfg):
    return build_model({'preset': 'one_hot', 'm': cfg.m,
                        'n_samples': cfg.n_samples})


def _random_models(cfg, count, offset=0):
    rng = np.random.default_rng(cfg.seed + offset)
    models = []
    for i in range(count):
        m = int(rng.integers(2, cfg.max_random_m + 1))
        n = int(rng.integers(m, cfg.max_random_n + 1))
        models.append(build_model({'preset': 'random', 'm': m,
                                   'n_samples': n},
                                  seed=int(rng.integers(2 ** 31))))
    return models


def _two_label_map(m):
    """Disjoint labels: the first half of the classes, and the rest."""
    half = max(1, m // 2)
    return LabelMap.from_groups([list(range(half)), list(range(half, m))])


def _train_unconstrained(cfg, model):
    """Plain CL features: tabular, no output transform, Gaussian start."""
    enc = TabularEncoder.initialize(model.n_samples, model.m,
                                    seed=cfg.seed * 1000 + 999)
    train_cfg = TrainConfig(learning_rate=cfg.learning_rate,
                            steps=cfg.steps,
                            tolerance=cfg.convergence_tolerance,
                            backtracking=True, seed=cfg.seed)
    trace, enc = train(enc, ObjectiveSpec(), model, train_cfg)
    return trace, enc.encode_all(model.n_samples, cache=False)


def check_rotation(cfg):
    """Trained CL features reach the optimum and stay there under any
    rotation, so their axes carry no meaning; rotating the non-negative
    optimum leaves the loss alone but breaks non-negativity."""
    model = _one_hot(cfg)
    phi = ground_truth_phi(model)
    const = objectives.equivalence_constant(model)

    def loss(table):
        return objectives.spectral_loss_population(table, model).loss

    trace, learned = _train_unconstrained(cfg, model)
    cl_gap = abs(loss(learned) + const)
    cl_rotated = metrics.rotation_symmetry_check(learned, cfg.seed + 1, loss)
    cl_residual = metrics.identifiability_align(learned, phi).residual

    result = metrics.rotation_symmetry_check(phi, cfg.seed, loss)
    return [
        _check('cl_reaches_optimal_loss', cl_gap, cfg.exact_tolerance,
               steps=len(trace)),
        _check('cl_rotation_invariance', cl_rotated['loss_delta'],
               cfg.exact_tolerance),
        _check('cl_rotation_has_negative_entry',
               cl_rotated['min_entry_after_rotation'], -1e-3,
               passed=cl_rotated['min_entry_after_rotation'] < -1e-3),
        _check('cl_not_aligned_to_phi', cl_residual, cfg.alignment_tolerance,
               passed=cl_residual > cfg.alignment_tolerance),
        _check('rotation_invariance', result['loss_delta'],
               cfg.exact_tolerance),
        _check('rotation_breaks_nonnegativity',
               result['min_entry_after_rotation'], -1e-3,
               passed=result['is_permutation'] or
               result['min_entry_after_rotation'] < -1e-3),
    ]


def check_equivalence(cfg):
    """L_NMF(F) - L_NCL(f) is the same constant for every table."""
    rng = np.random.default_rng(cfg.seed + 1)
    worst = 0.0
    for model in _random_models(cfg, cfg.random_models, offset=1):
        const = objectives.equivalence_constant(model)
        a_bar = cooccurrence(model).normalized
        for _ in range(cfg.feature_draws):
            table = FeatureTable(rng.random((model.n_samples, model.m)),
                                 nonneg=True,
                                 weighting=np.sqrt(model.marginal))
            nmf = objectives.nmf_objective(a_bar, table).loss
            ncl = objectives.spectral_loss_population(table, model).loss
            worst = max(worst, abs(nmf - ncl - const))
    return [_check('equivalence_constant', worst, cfg.exact_tolerance,
                   models=cfg.random_models, tables=cfg.feature_draws)]


def check_optimality(cfg):
    """phi attains -const, and F_phi factorizes A_bar exactly."""
    worst = 0.0
    for model in [_one_hot(cfg)] + _random_models(cfg, cfg.random_models,
                                                   offset=2):
        phi = ground_truth_phi(model)
        loss = objectives.spectral_loss_population(phi, model).loss
        worst = max(worst, abs(loss + objectives.equivalence_constant(model)))

    model = _one_hot(cfg)
    residual = objectives.nmf_objective(cooccurrence(model).normalized,
                                        ground_truth_phi(model)).loss
    return [_check('phi_optimal_loss', worst, cfg.exact_tolerance),
            _check('phi_nmf_residual', residual, cfg.exact_tolerance)]


def check_one_hot(cfg):
    """On one-hot models phi is orthonormal, one-hot and sparse."""
    model = _one_hot(cfg)
    phi = ground_truth_phi(model)
    second = phi.values.T @ (phi.values * model.marginal[:, None])
    deviation = float(np.max(np.abs(second - np.eye(model.m))))
    active = np.sum(phi.values > metrics.SPARSITY_THRESHOLD, axis=1)
    _, mean_sparsity = metrics.sparsity(phi)
    expected = (model.m - 1) / model.m
    return [
        _check('one_hot_orthonormal', deviation, cfg.exact_tolerance),
        _check('one_hot_single_active', float(np.max(np.abs(active - 1))),
               0.0),
        _check('one_hot_sparsity', abs(mean_sparsity - expected),
               1e-12, expected=expected),
    ]


def check_bayes(cfg):
    """A linear head on phi reproduces the Bayes classifier."""
    models = _random_models(cfg, cfg.random_models, offset=3)
    for eps in cfg.epsilons:
        if eps > 0:
            models.append(build_model({'preset': 'overlap', 'm': 2,
                                       'n_samples': cfg.overlap_samples,
                                       'epsilon': eps}))
    worst = 1.0
    for model in models:
        labels = _two_label_map(model.m)
        weights = bayes_classifier_weights(model, labels)
        worst = min(worst, metrics.bayes_agreement(
            weights, ground_truth_phi(model), model, labels))

    model = _one_hot(cfg)
    labels = _two_label_map(model.m)
    phi = ground_truth_phi(model).values
    y = labels.sample_labels(model)
    train_idx, test_idx = np.arange(0, model.n_samples, 2), \
        np.arange(1, model.n_samples, 2)
    probe = metrics.linear_probe(phi[train_idx], y[train_idx],
                                 phi[test_idx], y[test_idx])
    return [
        _check('bayes_agreement', 1.0 - worst, 0.0, models=len(models)),
        _check('linear_probe_on_phi', 1.0 - probe.test_accuracy, 0.0,
               train_accuracy=probe.train_accuracy),
    ]


def check_uniqueness(cfg):
    """Every NCL and NMF restart recovers phi up to permutation and
    scaling."""
    model = _one_hot(cfg)
    phi = ground_truth_phi(model)
    a_bar = cooccurrence(model).normalized

    ncl = []
    nmf = []
    for restart in range(cfg.restarts):
        seed = cfg.seed * 1000 + restart
        enc = TabularEncoder.initialize(model.n_samples, model.m,
                                        transform='relu', seed=seed)
        train_cfg = TrainConfig(learning_rate=cfg.learning_rate,
                                steps=cfg.steps,
                                tolerance=cfg.convergence_tolerance,
                                seed=seed)
        train(enc, ObjectiveSpec(), model, train_cfg)
        learned = enc.encode_all(model.n_samples, cache=False)
        ncl.append(metrics.identifiability_align(learned, phi).residual)

        nmf_cfg = TrainConfig(learning_rate=cfg.nmf_learning_rate,
                              steps=cfg.steps,
                              tolerance=cfg.convergence_tolerance,
                              seed=seed)
        factor, _ = projected_gradient_nmf(a_bar, model.marginal, model.m,
                                           nmf_cfg)
        nmf.append(metrics.identifiability_align(factor, phi).residual)

    return [
        _check('ncl_restarts_align', max(ncl), cfg.alignment_tolerance,
               residuals=ncl),
        _check('nmf_restarts_align', max(nmf), cfg.alignment_tolerance,
               residuals=nmf),
    ]


def check_orthogonality(cfg):
    """phi satisfies the overlap bound on its cross moments."""
    checks = []
    for eps in cfg.epsilons:
        model = build_model({'preset': 'overlap', 'm': 2,
                             'n_samples': cfg.overlap_samples,
                             'epsilon': eps})
        result = metrics.orthogonality_bound(ground_truth_phi(model), model)
        checks.append(_check(f'orthogonality_bound_eps_{eps:g}',
                             result.measured - result.bound, 1e-9,
                             bound=result.bound, epsilon=result.epsilon))
    return checks


SUITE = (
    ('rotation', check_rotation),
    ('equivalence', check_equivalence),
    ('optimality', check_optimality),
    ('one_hot', check_one_hot),
    ('bayes', check_bayes),
    ('uniqueness', check_uniqueness),
    ('orthogonality', check_orthogonality),
)

SUITE_NAMES = tuple(name for name, _ in SUITE)


def run_suite(cfg=None):
    """Run every check not named in cfg.skip. Returns a list of
    TheoremCheck."""
    cfg = cfg or SuiteConfig()
    checks = []
    for name, fn in SUITE:
        if name in cfg.skip:
            log.info("skipping %s checks", name)
            continue
        checks.extend(fn(cfg))
    failed = [c.name for c in checks if not c.passed]
    if failed:
        log.warning("%d of %d checks failed: %s", len(failed), len(checks),
                    ", ".join(failed))
    return checks


def all_passed(checks):
    return all(c.passed for c in checks)
