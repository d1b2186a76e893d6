# Finite latent-class generative models.
#
# Samples are indices 0..N-1 of a finite space. Each of m latent
# classes c has a prior P(c) and a conditional distribution P(x|c) over
# the samples. A positive pair is drawn by picking a class and then two
# samples independently from that class, so
#
#   P(x, x') = sum_c P(c) P(x|c) P(x'|c).
#
# Everything here is computed exactly from those two arrays: marginals,
# posteriors, the co-occurrence matrix and its normalized form, the
# closed-form optimal features and the Bayes classifier on top of them.

__metaclass__ = type
"""
Latent-class models, their population quantities, and pair sampling.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import brentq

from nonneg_cl.module_utils.errors import (
    ConfigInvalid,
    DimensionMismatch,
    InvalidPermutation,
    LabelMapMismatch,
    NonStochastic,
    RequiresAtLeastTwoClasses,
    ZeroMarginal,
)
from nonneg_cl.module_utils.features import FeatureTable

log = logging.getLogger(__name__)

# Normalization tolerance for priors and conditionals.
STOCHASTIC_TOL = 1e-12

PRESETS = ('explicit', 'one_hot', 'overlap', 'random')


def _frozen(array):
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def _check_distributions(class_prior, conditional):
    """Validate a prior vector and an m x N row-stochastic matrix."""

    if class_prior.ndim != 1:
        raise DimensionMismatch("class_prior must be a vector",
                                class_prior.shape)
    if conditional.ndim != 2 or conditional.shape[0] != class_prior.shape[0]:
        raise DimensionMismatch(
            "conditional must be an m x N matrix matching class_prior",
            (class_prior.shape, conditional.shape))
    if not np.all(np.isfinite(class_prior)) or \
       not np.all(np.isfinite(conditional)):
        raise NonStochastic("distributions must be finite")

    if np.any(class_prior <= 0):
        raise NonStochastic("class priors must be positive",
                            class_prior.min())
    if abs(class_prior.sum() - 1.0) > STOCHASTIC_TOL:
        raise NonStochastic("class priors do not sum to 1",
                            class_prior.sum())

    if np.any(conditional < 0):
        raise NonStochastic("conditional has a negative entry",
                            conditional.min())
    row_sums = conditional.sum(axis=1)
    bad = np.flatnonzero(np.abs(row_sums - 1.0) > STOCHASTIC_TOL)
    if bad.size > 0:
        raise NonStochastic(f"conditional row {bad[0]} does not sum to 1",
                            row_sums[bad[0]])


class LatentClassModel:
    """A finite latent-class model.

    Immutable after construction: the arrays are read-only and the
    derived quantities are computed once.
    """

    def __init__(self, class_prior, conditional, embedding=None, name=None):
        class_prior = _frozen(class_prior)
        conditional = _frozen(conditional)
        _check_distributions(class_prior, conditional)

        marginal = class_prior @ conditional
        zero = np.flatnonzero(marginal <= 0)
        if zero.size > 0:
            raise ZeroMarginal(f"sample {zero[0]} has zero marginal "
                               "probability", int(zero[0]))

        self.class_prior = class_prior
        self.conditional = conditional
        self.marginal = _frozen(marginal)
        self.posterior = _frozen(
            (conditional * class_prior[:, None]).T / marginal[:, None])
        self.name = name

        if embedding is not None:
            embedding = _frozen(embedding)
            if embedding.ndim != 2 or embedding.shape[0] != self.n_samples:
                raise DimensionMismatch(
                    "embedding must have one row per sample",
                    embedding.shape)
        self._embedding = embedding

    @property
    def m(self):
        return self.class_prior.shape[0]

    @property
    def n_samples(self):
        return self.conditional.shape[1]

    @property
    def embedding(self):
        """Coordinate embedding of the samples, for MLP encoders.

        Defaults to the one-hot encoding of the sample index.
        """
        if self._embedding is None:
            return _frozen(np.eye(self.n_samples))
        return self._embedding

    @cached_property
    def _cdf(self):
        cdf = np.cumsum(self.conditional, axis=1)
        cdf[:, -1] = 1.0
        return cdf

    def __repr__(self):
        return (f"LatentClassModel(name={self.name!r}, m={self.m}, "
                f"n_samples={self.n_samples})")


@dataclass(frozen=True)
class CooccurrenceMatrix:
    raw: np.ndarray
    normalized: np.ndarray

    @property
    def degree(self):
        """Row sums of the raw matrix, i.e., the marginal P(x)."""
        return self.raw.sum(axis=1)

    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvalsh(self.normalized))))


@dataclass(frozen=True)
class LabelMap:
    """Assignment of each latent class to exactly one observed label.

    'assignment[c]' is the label of latent class c. Because every class
    gets exactly one label, the label sets are disjoint and cover all
    classes by construction.
    """
    assignment: tuple
    label_count: int

    def __post_init__(self):
        assignment = tuple(int(a) for a in self.assignment)
        object.__setattr__(self, 'assignment', assignment)
        if self.label_count < 1:
            raise LabelMapMismatch("label_count must be positive",
                                   self.label_count)
        for c, y in enumerate(assignment):
            if not 0 <= y < self.label_count:
                raise LabelMapMismatch(f"class {c} maps to an invalid label",
                                       y)
        used = set(assignment)
        if len(used) != self.label_count:
            missing = sorted(set(range(self.label_count)) - used)
            raise LabelMapMismatch("every label needs at least one class",
                                   missing)

    @classmethod
    def identity(cls, m):
        """One label per latent class."""
        return cls(tuple(range(m)), m)

    @classmethod
    def from_groups(cls, groups):
        """Build from a list of class-index lists, one per label."""
        m = sum(len(g) for g in groups)
        assignment = [None] * m
        for y, group in enumerate(groups):
            for c in group:
                if not 0 <= c < m or assignment[c] is not None:
                    raise LabelMapMismatch("label groups must partition "
                                           "the latent classes", groups)
                assignment[c] = y
        return cls(tuple(assignment), len(groups))

    @property
    def m(self):
        return len(self.assignment)

    def indicator(self):
        """m x C matrix with a 1 where class c belongs to label y."""
        ind = np.zeros((self.m, self.label_count))
        ind[np.arange(self.m), self.assignment] = 1.0
        return ind

    def label_posterior(self, model):
        """N x C matrix of P(y|x)."""
        self._check_model(model)
        return model.posterior @ self.indicator()

    def sample_labels(self, model, tol=1e-12):
        """Bayes label argmax_y P(y|x) of every sample.

        Scores within 'tol' of the maximum count as ties, and ties go to
        the lowest label index.
        """
        return tie_break_argmax(self.label_posterior(model), tol)

    def _check_model(self, model):
        if self.m != model.m:
            raise LabelMapMismatch("label map and model disagree on the "
                                   "number of latent classes",
                                   (self.m, model.m))


def tie_break_argmax(scores, tol=1e-12):
    """Row-wise argmax where anything within 'tol' of the row maximum
    counts as a tie, resolved to the lowest index."""

    scores = np.asarray(scores, dtype=np.float64)
    top = scores.max(axis=1, keepdims=True)
    return np.argmax(scores >= top - tol, axis=1)


def _uniform_blocks(n_samples, m):
    """Split 0..N-1 into m contiguous, nearly equal blocks."""
    if n_samples < m:
        raise DimensionMismatch("need at least one sample per class",
                                (n_samples, m))
    return np.array_split(np.arange(n_samples), m)


def _one_hot_conditional(n_samples, m):
    conditional = np.zeros((m, n_samples))
    for c, block in enumerate(_uniform_blocks(n_samples, m)):
        conditional[c, block] = 1.0 / len(block)
    return conditional


def _overlap_of(class_prior, conditional):
    """Maximal pairwise class overlap sum_x P(x) P(ci|x) P(cj|x).

    Samples with zero marginal contribute nothing, so this also works
    on the degenerate models visited while solving for a target overlap.
    """
    marginal = class_prior @ conditional
    live = marginal > 0
    joint = conditional[:, live] * class_prior[:, None]
    # P(x) P(ci|x) P(cj|x) = P(ci,x) P(cj,x) / P(x)
    pairwise = (joint / marginal[live]) @ joint.T
    np.fill_diagonal(pairwise, -np.inf)
    return float(pairwise.max())


def _overlap_conditional(n_samples, m, n_bridge, delta):
    """Pure per-class blocks, plus 'n_bridge' shared samples that every
    class puts a fraction 'delta' of its mass on."""

    conditional = np.zeros((m, n_samples))
    pure = _uniform_blocks(n_samples - n_bridge, m)
    for c, block in enumerate(pure):
        conditional[c, block] = (1.0 - delta) / len(block)
    conditional[:, n_samples - n_bridge:] = delta / n_bridge
    return conditional


def _normalize(vec):
    vec = np.asarray(vec, dtype=np.float64)
    return vec / vec.sum(axis=-1, keepdims=True)


def build_model(spec, seed=None):
    """Build a LatentClassModel from a specification dict.

    Keys:
      preset: one of PRESETS. 'explicit' (the default when class_prior
        and conditional are given) uses the arrays as-is.
      m, n_samples: dimensions. Required for presets, checked against
        the arrays for 'explicit'.
      class_prior: optional prior vector. Presets default to uniform.
      conditional: m x N matrix, 'explicit' only.
      epsilon: target class overlap for 'overlap'.
      n_bridge: number of shared samples for 'overlap'.
      concentration: Dirichlet concentration for 'random'.
      seed: random seed for 'random'. The 'seed' argument overrides it.
      name: optional label carried by the model.
    """

    spec = dict(spec)
    preset = spec.get('preset')
    if preset is None:
        preset = 'explicit' if spec.get('conditional') is not None \
            else 'one_hot'
    if preset not in PRESETS:
        raise ConfigInvalid("unknown model preset", preset)

    m = spec.get('m')
    n_samples = spec.get('n_samples')
    name = spec.get('name') or preset
    if seed is None:
        seed = spec.get('seed')

    if preset == 'explicit':
        if spec.get('class_prior') is None or spec.get('conditional') is None:
            raise ConfigInvalid("explicit models need class_prior and "
                                "conditional")
        class_prior = np.asarray(spec['class_prior'], dtype=np.float64)
        conditional = np.asarray(spec['conditional'], dtype=np.float64)
        if conditional.ndim != 2:
            raise DimensionMismatch("conditional must be 2-D",
                                    conditional.shape)
        if m is not None and conditional.shape[0] != m:
            raise DimensionMismatch("conditional does not have m rows",
                                    (conditional.shape, m))
        if n_samples is not None and conditional.shape[1] != n_samples:
            raise DimensionMismatch("conditional does not have N columns",
                                    (conditional.shape, n_samples))
        return LatentClassModel(class_prior, conditional,
                                embedding=spec.get('embedding'), name=name)

    if m is None or n_samples is None:
        raise ConfigInvalid(f"preset {preset} needs m and n_samples")
    m = int(m)
    n_samples = int(n_samples)
    if m < 1:
        raise DimensionMismatch("m must be positive", m)

    if spec.get('class_prior') is not None:
        class_prior = np.asarray(spec['class_prior'], dtype=np.float64)
        if class_prior.shape != (m,):
            raise DimensionMismatch("class_prior does not have m entries",
                                    (class_prior.shape, m))
    else:
        class_prior = np.full(m, 1.0 / m)

    if preset == 'one_hot':
        conditional = _one_hot_conditional(n_samples, m)

    elif preset == 'overlap':
        epsilon = float(spec.get('epsilon') or 0.0)
        if epsilon < 0:
            raise ConfigInvalid("epsilon must be non-negative", epsilon)
        if epsilon == 0.0:
            # No overlap at all is just the one-hot model.
            conditional = _one_hot_conditional(n_samples, m)
        else:
            if m < 2:
                raise RequiresAtLeastTwoClasses(
                    "an overlap model needs at least two classes", m)
            n_bridge = int(spec.get('n_bridge') or max(1, n_samples // 10))
            if n_samples - n_bridge < m:
                raise DimensionMismatch(
                    "not enough samples for pure blocks plus bridge",
                    (n_samples, n_bridge, m))

            def gap(delta):
                cond = _overlap_conditional(n_samples, m, n_bridge, delta)
                return _overlap_of(class_prior, cond) - epsilon

            high = 1.0 - 1e-9
            if gap(high) < 0:
                raise ConfigInvalid(
                    "epsilon is larger than this model can reach",
                    (epsilon, gap(high) + epsilon))
            delta = brentq(gap, 0.0, high, xtol=1e-15, rtol=1e-15,
                           maxiter=200)
            log.debug("overlap model: epsilon=%g needs bridge mass %g",
                      epsilon, delta)
            conditional = _overlap_conditional(n_samples, m, n_bridge, delta)

    elif preset == 'random':
        rng = np.random.default_rng(seed)
        alpha = float(spec.get('concentration') or 1.0)
        if spec.get('class_prior') is None:
            class_prior = rng.dirichlet(np.full(m, alpha))
        conditional = rng.dirichlet(np.full(n_samples, alpha), size=m)

    return LatentClassModel(_normalize(class_prior), _normalize(conditional),
                            embedding=spec.get('embedding'), name=name)


def cooccurrence(model):
    """Exact co-occurrence matrix A and its normalization
    D^-1/2 A D^-1/2."""

    weighted = model.conditional * model.class_prior[:, None]
    raw = model.conditional.T @ weighted
    # Exact symmetry; a + b == b + a in floating point.
    raw = 0.5 * (raw + raw.T)
    root = np.sqrt(model.marginal)
    normalized = raw / np.outer(root, root)
    normalized = 0.5 * (normalized + normalized.T)
    return CooccurrenceMatrix(raw=_frozen(raw), normalized=_frozen(normalized))


def _check_permutation(permutation, m):
    if permutation is None:
        return np.arange(m)
    perm = np.asarray(permutation)
    if perm.shape != (m,) or not np.issubdtype(perm.dtype, np.integer) \
       or not np.array_equal(np.sort(perm), np.arange(m)):
        raise InvalidPermutation(f"not a permutation of 0..{m - 1}",
                                 permutation)
    return perm


def ground_truth_phi(model, permutation=None, k=None):
    """Closed-form optimal features phi(x).

    Entry j of phi(x) is P(pi_j|x) / sqrt(P(pi_j)). For k > m the extra
    columns are zero. The returned table is weighted by sqrt(P(x)), so
    its weighted() rows F satisfy F F^T = normalized co-occurrence.
    """
    perm = _check_permutation(permutation, model.m)
    k = model.m if k is None else int(k)
    if k < model.m:
        raise DimensionMismatch("k must be at least m", (k, model.m))

    phi = np.zeros((model.n_samples, k))
    phi[:, :model.m] = model.posterior[:, perm] / \
        np.sqrt(model.class_prior[perm])
    return FeatureTable(phi, nonneg=True, weighting=np.sqrt(model.marginal))


def bayes_classifier_weights(model, labels, permutation=None, k=None):
    """k x C weights w*_y with entry j = sqrt(P(pi_j)) [pi_j in C_y].

    On top of ground_truth_phi with the same permutation, the score
    w*_y . phi(x) is P(y|x).
    """
    if not isinstance(labels, LabelMap):
        raise LabelMapMismatch("labels must be a LabelMap", labels)
    labels._check_model(model)
    perm = _check_permutation(permutation, model.m)
    k = model.m if k is None else int(k)
    if k < model.m:
        raise DimensionMismatch("k must be at least m", (k, model.m))

    weights = np.zeros((k, labels.label_count))
    weights[:model.m] = labels.indicator()[perm] * \
        np.sqrt(model.class_prior[perm])[:, None]
    return weights


def class_overlap(model):
    """Maximal class overlap epsilon = max_{i != j} P(c_i, c_j)."""
    if model.m < 2:
        raise RequiresAtLeastTwoClasses("class overlap needs two classes",
                                        model.m)
    return _overlap_of(model.class_prior, model.conditional)


def _draw_from_classes(model, classes, rng):
    """Draw one sample from P(.|c) for every entry of 'classes'."""
    u = rng.random(classes.shape[0])
    draws = np.empty(classes.shape[0], dtype=np.int64)
    cdf = model._cdf
    for c in range(model.m):
        mask = classes == c
        if np.any(mask):
            draws[mask] = np.searchsorted(cdf[c], u[mask], side='right')
    return np.minimum(draws, model.n_samples - 1)


def sample_pair(model, rng, size=None):
    """Draw positive pairs: c ~ P(c), then x and x+ from P(.|c).

    Returns a pair of ints when 'size' is None, else two index arrays.
    """
    n = 1 if size is None else int(size)
    classes = rng.choice(model.m, size=n, p=model.class_prior)
    anchors = _draw_from_classes(model, classes, rng)
    positives = _draw_from_classes(model, classes, rng)
    if size is None:
        return int(anchors[0]), int(positives[0])
    return anchors, positives


def sample_negative(model, rng, size=None):
    """Draw negatives from the marginal P(x)."""
    draws = rng.choice(model.n_samples, size=size, p=model.marginal)
    if size is None:
        return int(draws)
    return draws


def partition_by_rows(values):
    """Group samples whose feature rows are identical.

    Returns (cell index per sample, number of cells).
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatch("expected a 2-D feature array", values.shape)
    if values.shape[1] == 0:
        return np.zeros(values.shape[0], dtype=np.int64), 1
    _, inverse = np.unique(values, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).reshape(-1)
    return inverse, int(inverse.max()) + 1


def cell_cooccurrence(model, cells, n_cells):
    """Joint distribution of the cells of (x, x+) and its marginal."""
    membership = np.zeros((model.n_samples, n_cells))
    membership[np.arange(model.n_samples), cells] = 1.0
    joint = membership.T @ cooccurrence(model).raw @ membership
    return joint, membership.T @ model.marginal


def mutual_information_oracle(values, model):
    """Exact I(g(x); g(x+)) in nats for a deterministic feature map.

    'values' holds g(x) for every sample. The information only depends
    on which samples share a feature row.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.shape[0] != model.n_samples:
        raise DimensionMismatch("need one feature row per sample",
                                (values.shape, model.n_samples))
    cells, n_cells = partition_by_rows(values)
    joint, marginal = cell_cooccurrence(model, cells, n_cells)
    outer = np.outer(marginal, marginal)
    live = joint > 0
    return float(np.sum(joint[live] * np.log(joint[live] / outer[live])))


#
# Two-view (multi-modal) models
#

class TwoViewModel:
    """Latent classes generating a visual and a language view.

    A positive pair (x_v, x_l) has joint
      P_M(x_v, x_l) = sum_c P(c) P(x_v|c) P(x_l|c),
    and negatives come independently from the two view marginals.
    """

    def __init__(self, class_prior, conditional_visual,
                 conditional_language, name=None):
        class_prior = _frozen(class_prior)
        conditional_visual = _frozen(conditional_visual)
        conditional_language = _frozen(conditional_language)
        _check_distributions(class_prior, conditional_visual)
        _check_distributions(class_prior, conditional_language)

        self.class_prior = class_prior
        self.conditional_visual = conditional_visual
        self.conditional_language = conditional_language
        self.name = name

        for view, cond in (('visual', conditional_visual),
                           ('language', conditional_language)):
            marginal = class_prior @ cond
            zero = np.flatnonzero(marginal <= 0)
            if zero.size > 0:
                raise ZeroMarginal(f"{view} sample {zero[0]} has zero "
                                   "marginal probability", int(zero[0]))

        self.marginal_visual = _frozen(class_prior @ conditional_visual)
        self.marginal_language = _frozen(class_prior @ conditional_language)
        self.posterior_visual = _frozen(
            (conditional_visual * class_prior[:, None]).T /
            self.marginal_visual[:, None])
        self.posterior_language = _frozen(
            (conditional_language * class_prior[:, None]).T /
            self.marginal_language[:, None])

        joint = conditional_visual.T @ \
            (conditional_language * class_prior[:, None])
        self.joint = _frozen(joint)
        self.normalized = _frozen(
            joint / np.outer(np.sqrt(self.marginal_visual),
                             np.sqrt(self.marginal_language)))

    @property
    def m(self):
        return self.class_prior.shape[0]

    @property
    def n_visual(self):
        return self.conditional_visual.shape[1]

    @property
    def n_language(self):
        return self.conditional_language.shape[1]

    def __repr__(self):
        return (f"TwoViewModel(name={self.name!r}, m={self.m}, "
                f"n_visual={self.n_visual}, n_language={self.n_language})")


def build_two_view_model(spec, seed=None):
    """Build a TwoViewModel.

    Keys: preset ('one_hot', 'random' or 'explicit'), m, n_visual,
    n_language, class_prior, conditional_visual, conditional_language,
    concentration, seed, name.
    """
    spec = dict(spec)
    preset = spec.get('preset') or 'one_hot'
    name = spec.get('name') or preset
    if seed is None:
        seed = spec.get('seed')

    if preset == 'explicit':
        return TwoViewModel(spec['class_prior'], spec['conditional_visual'],
                            spec['conditional_language'], name=name)

    m = spec.get('m')
    n_visual = spec.get('n_visual')
    n_language = spec.get('n_language')
    if m is None or n_visual is None or n_language is None:
        raise ConfigInvalid(f"preset {preset} needs m, n_visual and "
                            "n_language")
    m, n_visual, n_language = int(m), int(n_visual), int(n_language)

    if spec.get('class_prior') is not None:
        class_prior = np.asarray(spec['class_prior'], dtype=np.float64)
        if class_prior.shape != (m,):
            raise DimensionMismatch("class_prior does not have m entries",
                                    (class_prior.shape, m))
    else:
        class_prior = np.full(m, 1.0 / m)

    if preset == 'one_hot':
        visual = _one_hot_conditional(n_visual, m)
        language = _one_hot_conditional(n_language, m)
    elif preset == 'random':
        rng = np.random.default_rng(seed)
        alpha = float(spec.get('concentration') or 1.0)
        if spec.get('class_prior') is None:
            class_prior = rng.dirichlet(np.full(m, alpha))
        visual = rng.dirichlet(np.full(n_visual, alpha), size=m)
        language = rng.dirichlet(np.full(n_language, alpha), size=m)
    else:
        raise ConfigInvalid("unknown two-view preset", preset)

    return TwoViewModel(_normalize(class_prior), _normalize(visual),
                        _normalize(language), name=name)


def two_view_ground_truth(model, permutation=None):
    """Optimal non-negative features (phi_V, phi_L) of the two-view
    model, weighted by the square roots of the view marginals."""
    perm = _check_permutation(permutation, model.m)
    scale = np.sqrt(model.class_prior[perm])
    visual = FeatureTable(model.posterior_visual[:, perm] / scale,
                          nonneg=True,
                          weighting=np.sqrt(model.marginal_visual))
    language = FeatureTable(model.posterior_language[:, perm] / scale,
                            nonneg=True,
                            weighting=np.sqrt(model.marginal_language))
    return visual, language
