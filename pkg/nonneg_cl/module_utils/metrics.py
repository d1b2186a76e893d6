# Measurements on feature tables.
#
# Every function here is pure. The ones the CLI reports by name are
# wrapped at the bottom of the file into MetricFragment producers, keyed
# by the names a config's 'metrics' list may use.
#
# Conventions:
#   - "Activated" means strictly greater than the threshold, and the
#     default threshold is the sparsity one, 1e-5.
#   - Correlations normalize each column by its root sum of squares, so
#     live dimensions have C_ii = 1.
#   - Every argmax and every ranking breaks ties toward the lower index.

__metaclass__ = type
"""
Sparsity, correlation, selection, retrieval, SEPIN, identifiability and
probing metrics.
"""

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp

from nonneg_cl.module_utils import objectives
from nonneg_cl.module_utils.errors import (
    AllDimensionsDead,
    AllRowsZero,
    ConfigInvalid,
    DegenerateLabels,
    DimensionMismatch,
    InsufficientDraws,
    ShapeMismatch,
    ZeroColumn,
    ZeroNormFeature,
)
from nonneg_cl.module_utils.features import FeatureTable
from nonneg_cl.module_utils.latent_model import (
    bayes_classifier_weights,
    cell_cooccurrence,
    class_overlap,
    partition_by_rows,
    sample_negative,
    sample_pair,
    tie_break_argmax,
)

log = logging.getLogger(__name__)

# Entries with |x| below this count as zero.
SPARSITY_THRESHOLD = 1e-5

# Largest k solved by exact assignment in identifiability_align.
EXACT_ASSIGNMENT_MAX_K = 12

# Smallest scaling identifiability_align reports.
SCALING_FLOOR = 1e-12


def _values(features):
    if isinstance(features, FeatureTable):
        return features.values
    values = np.asarray(features, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatch("features must be 2-D", values.shape)
    return values


@dataclass
class MetricFragment:
    name: str
    value: object
    per_item: Optional[list] = None
    stderr: Optional[float] = None
    config: dict = field(default_factory=dict)

    def to_json(self):
        return to_plain(asdict(self))


def to_plain(obj):
    """Turn numpy scalars and arrays into plain JSON types."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


#
# Sparsity, correlation, consistency
#

def sparsity(features, threshold=SPARSITY_THRESHOLD):
    """Fraction of entries with |value| < threshold.

    Returns (per-row fractions, mean over rows).
    """
    values = _values(features)
    if values.size == 0:
        raise DimensionMismatch("sparsity of an empty table", values.shape)
    per_row = np.mean(np.abs(values) < threshold, axis=1)
    return per_row, float(per_row.mean())


@dataclass
class CorrelationResult:
    matrix: np.ndarray
    live: list
    dead: list

    def max_off_diagonal(self):
        if len(self.live) < 2:
            return 0.0
        off = np.abs(self.matrix - np.diag(np.diag(self.matrix)))
        return float(off.max())


def correlation_matrix(features, weights=None):
    """C_ij = sum_x w(x) f~_i(x) f~_j(x), f~_i = f_i / sqrt(sum_x w f_i^2).

    Without weights, w = 1. All-zero columns are left out of the matrix
    and listed in 'dead'.
    """
    values = _values(features)
    if values.shape[0] == 0:
        raise DimensionMismatch("correlation of an empty table",
                                values.shape)
    w = np.ones(values.shape[0]) if weights is None \
        else np.asarray(weights, dtype=np.float64)

    norms = np.sqrt(w @ (values * values))
    live = np.flatnonzero(norms > 0)
    dead = np.flatnonzero(norms == 0)
    if live.size == 0:
        raise AllDimensionsDead("every feature dimension is zero",
                                values.shape[1])
    unit = values[:, live] / norms[live]
    matrix = unit.T @ (unit * w[:, None])
    return CorrelationResult(matrix=matrix, live=live.tolist(),
                             dead=dead.tolist())


@dataclass
class ConsistencyResult:
    rates: np.ndarray
    mean: float
    excluded: list


def class_consistency(features, labels, threshold=SPARSITY_THRESHOLD):
    """Per dimension, the fraction of activated samples that carry the
    dimension's most frequent label.

    'labels' gives one label per sample. Dimensions that activate on no
    sample get a NaN rate and are listed in 'excluded'.
    """
    values = _values(features)
    labels = np.asarray(labels)
    if labels.shape != (values.shape[0],):
        raise DimensionMismatch("need one label per sample",
                                (labels.shape, values.shape))

    rates = np.full(values.shape[1], np.nan)
    excluded = []
    for d in range(values.shape[1]):
        active = values[:, d] > threshold
        if not np.any(active):
            excluded.append(d)
            continue
        counts = np.bincount(labels[active])
        rates[d] = counts.max() / active.sum()
    kept = rates[~np.isnan(rates)]
    mean = float(kept.mean()) if kept.size else float('nan')
    return ConsistencyResult(rates=rates, mean=mean, excluded=excluded)


#
# Feature selection
#

@dataclass
class ActivationResult:
    values: np.ndarray
    skipped: int


def expected_activation(features, weights=None, absolute=False):
    """EA_i = E_x f~_i(x) with f~(x) = f(x)/||f(x)||.

    Zero rows are skipped and counted. 'weights' (e.g., the marginal)
    replace the plain mean over rows; 'absolute' averages |f~| instead,
    for features that are not non-negative.
    """
    values = _values(features)
    norms = np.linalg.norm(values, axis=1)
    keep = norms > 0
    if not np.any(keep):
        raise AllRowsZero("every feature row is zero", values.shape[0])
    unit = values[keep] / norms[keep, None]
    if absolute:
        unit = np.abs(unit)
    if weights is None:
        ea = unit.mean(axis=0)
    else:
        w = np.asarray(weights, dtype=np.float64)[keep]
        ea = (w @ unit) / w.sum()
    return ActivationResult(values=ea, skipped=int(np.sum(~keep)))


def select_top(ea, n):
    """Indices of the n largest EA values, descending, ties to the lower
    index."""
    if isinstance(ea, ActivationResult):
        ea = ea.values
    ea = np.asarray(ea, dtype=np.float64)
    return np.argsort(-ea, kind='stable')[:n].tolist()


def random_selection(k, n, seed):
    """n distinct dimensions drawn uniformly, sorted."""
    rng = np.random.default_rng(seed)
    return sorted(rng.choice(k, size=n, replace=False).tolist())


#
# Retrieval
#

@dataclass
class RetrievalResult:
    map: float
    ap: np.ndarray
    zero_relevant: int
    k: int


def _unit_rows(values, allow_zero=False):
    norms = np.linalg.norm(values, axis=1, keepdims=True)
    if allow_zero:
        return np.divide(values, norms, out=np.zeros_like(values),
                         where=norms > 0)
    if np.any(norms == 0):
        raise ZeroNormFeature("cosine similarity of a zero feature row",
                              int(np.flatnonzero(norms[:, 0] == 0)[0]))
    return values / norms


def retrieval_map(query, gallery, labels, k=10, gallery_labels=None,
                  allow_zero=False):
    """mAP@k under cosine similarity.

    With gallery=None the queries retrieve among themselves and each
    query is left out of its own ranking. AP@k is the mean precision
    over the top-k positions that hold a relevant item; a query with no
    relevant item in its top k scores 0 and is still counted.

    A zero row has no direction. By default it is an error; with
    allow_zero it is similar to nothing, and as a query it scores 0.
    """
    if k < 1:
        raise ConfigInvalid("k must be at least 1", k)
    q = _unit_rows(_values(query), allow_zero)
    labels = np.asarray(labels)
    self_retrieval = gallery is None
    if self_retrieval:
        g = q
        gallery_labels = labels
    else:
        g = _unit_rows(_values(gallery), allow_zero)
        gallery_labels = labels if gallery_labels is None \
            else np.asarray(gallery_labels)
    if q.shape[1] != g.shape[1]:
        raise DimensionMismatch("query and gallery widths differ",
                                (q.shape, g.shape))

    sims = q @ g.T
    ap = np.zeros(q.shape[0])
    zero_relevant = 0
    for i in range(q.shape[0]):
        order = np.argsort(-sims[i], kind='stable')
        if self_retrieval:
            order = order[order != i]
        top = order[:k]
        hits = (gallery_labels[top] == labels[i]).astype(np.float64)
        if hits.sum() == 0 or not np.any(q[i]):
            zero_relevant += 1
            continue
        precision = np.cumsum(hits) / np.arange(1, top.size + 1)
        ap[i] = float(np.sum(precision * hits) / hits.sum())
    return RetrievalResult(map=float(ap.mean()), ap=ap,
                           zero_relevant=zero_relevant, k=k)


#
# SEPIN
#

SEPIN_CRITICS = ('plugin', 'dot')
SEPIN_DENOMINATORS = ('mean', 'sum')


@dataclass
class SepinConfig:
    draws: int = 200
    batch_size: int = 64
    negatives: int = 16
    seed: Optional[int] = None
    critic: str = 'plugin'
    denominator: str = 'mean'
    normalize: bool = False

    def __post_init__(self):
        if self.critic not in SEPIN_CRITICS:
            raise ConfigInvalid("unknown SEPIN critic", self.critic)
        if self.denominator not in SEPIN_DENOMINATORS:
            raise ConfigInvalid("unknown SEPIN denominator",
                                self.denominator)
        if self.draws < 2:
            raise InsufficientDraws("SEPIN needs at least two draws for a "
                                    "standard error", self.draws)
        if self.batch_size < 1 or self.negatives < 1:
            raise InsufficientDraws("SEPIN needs at least one pair and one "
                                    "negative per draw",
                                    (self.batch_size, self.negatives))


@dataclass
class SepinResult:
    score: float
    stderr: float
    k: int
    ranking: list
    per_dim: np.ndarray
    per_dim_stderr: np.ndarray


class _Draws:
    """Sample indices shared by every subset, so that differences of
    estimates use common random numbers."""

    def __init__(self, model, cfg):
        rng = np.random.default_rng(cfg.seed)
        self.anchors = []
        self.positives = []
        self.negatives = []
        for _ in range(cfg.draws):
            a, p = sample_pair(model, rng, size=cfg.batch_size)
            self.anchors.append(a)
            self.positives.append(p)
            self.negatives.append(sample_negative(
                model, rng, size=(cfg.batch_size, cfg.negatives)))


def _log_scores(values, model, cfg):
    """N x N matrix of log critic values between samples."""
    if cfg.normalize:
        norms = np.linalg.norm(values, axis=1, keepdims=True)
        values = np.divide(values, norms, out=np.zeros_like(values),
                           where=norms > 0)
    if cfg.critic == 'dot':
        return values @ values.T
    # The plug-in critic is the exact density ratio between the cells of
    # identical feature rows.
    cells, n_cells = partition_by_rows(values)
    joint, marginal = cell_cooccurrence(model, cells, n_cells)
    with np.errstate(divide='ignore'):
        log_ratio = np.log(joint) - np.log(np.outer(marginal, marginal))
    return log_ratio[np.ix_(cells, cells)]


def bound_offset(cfg):
    """Constant added to the negated InfoNCE loss, in nats: log 2 with
    the 1/M denominator, log(M + 1) without it."""
    if cfg.denominator == 'mean':
        return math.log(2.0)
    return math.log(cfg.negatives + 1.0)


def _infonce_bound(log_scores, draws, cfg):
    """Per-draw InfoNCE estimates of I(g(x); g(x+)), in nats."""
    estimates = np.empty(len(draws.anchors))
    m = cfg.negatives
    offset = bound_offset(cfg)
    for d, (a, p, n) in enumerate(zip(draws.anchors, draws.positives,
                                      draws.negatives)):
        s_pos = log_scores[a, p]
        s_neg = log_scores[a[:, None], n]
        if cfg.denominator == 'mean':
            s_neg = s_neg - math.log(m)
        lse = logsumexp(np.concatenate([s_pos[:, None], s_neg], axis=1),
                        axis=1)
        estimates[d] = offset + float(np.mean(s_pos - lse))
    return estimates


def infonce_information(features, model, cfg=None):
    """InfoNCE lower bound on I(g(x); g(x+)): (mean, stderr)."""
    cfg = cfg or SepinConfig()
    values = _values(features)
    draws = _Draws(model, cfg)
    est = _infonce_bound(_log_scores(values, model, cfg), draws, cfg)
    return float(est.mean()), float(est.std(ddof=1) / math.sqrt(est.size))


def sepin_at_k(features, model, k, cfg=None):
    """SEPIN@k: mean over the top-k dimensions of
    I(f) - I(f without dimension i), each term an InfoNCE estimate on
    the same draws."""

    cfg = cfg or SepinConfig()
    values = _values(features)
    if values.shape[0] != model.n_samples:
        raise DimensionMismatch("need one feature row per sample",
                                (values.shape, model.n_samples))
    dim = values.shape[1]
    if not 1 <= k <= dim:
        raise ConfigInvalid(f"k must lie in 1..{dim}", k)

    draws = _Draws(model, cfg)
    full = _infonce_bound(_log_scores(values, model, cfg), draws, cfg)
    diffs = np.empty((dim, cfg.draws))
    for i in range(dim):
        rest = np.delete(values, i, axis=1)
        diffs[i] = full - _infonce_bound(_log_scores(rest, model, cfg),
                                         draws, cfg)

    per_dim = diffs.mean(axis=1)
    per_dim_stderr = diffs.std(axis=1, ddof=1) / math.sqrt(cfg.draws)
    ranking = np.argsort(-per_dim, kind='stable').tolist()
    top = diffs[ranking[:k]].mean(axis=0)
    return SepinResult(score=float(top.mean()),
                       stderr=float(top.std(ddof=1) / math.sqrt(cfg.draws)),
                       k=k, ranking=ranking, per_dim=per_dim,
                       per_dim_stderr=per_dim_stderr)


#
# Identifiability and rotation symmetry
#

@dataclass
class AlignmentResult:
    permutation: np.ndarray
    scaling: np.ndarray
    residual: float
    exact_assignment: bool = True
    # False when some column only matched with a non-positive fit.
    valid: bool = True


def _greedy_assignment(score):
    k = score.shape[0]
    perm = np.full(k, -1)
    used_rows = np.zeros(k, dtype=bool)
    used_cols = np.zeros(k, dtype=bool)
    order = np.argsort(-score, axis=None, kind='stable')
    for flat in order:
        i, j = divmod(int(flat), k)
        if not used_rows[i] and not used_cols[j]:
            perm[i] = j
            used_rows[i] = used_cols[j] = True
    return perm


def identifiability_align(f, g):
    """Find the permutation P and positive scaling D that best map g
    onto f, column by column.

    Columns are matched by maximal absolute normalized correlation,
    solved exactly for k <= 12 and greedily above. Each scaling is the
    least-squares fit for its pair, floored at SCALING_FLOOR so D
    stays positive; a pair whose fit is not positive marks the result
    invalid. The residual is ||f - g P D|| / ||f||.
    """
    fv = _values(f)
    gv = _values(g)
    if fv.shape != gv.shape:
        raise ShapeMismatch("tables to align differ in shape",
                            (fv.shape, gv.shape))
    g_norms = np.linalg.norm(gv, axis=0)
    if np.any(g_norms == 0):
        raise ZeroColumn("reference table has an all-zero column",
                         int(np.flatnonzero(g_norms == 0)[0]))
    f_norms = np.linalg.norm(fv, axis=0)
    safe = np.where(f_norms > 0, f_norms, 1.0)
    score = np.abs(fv.T @ gv) / np.outer(safe, g_norms)

    k = fv.shape[1]
    exact = k <= EXACT_ASSIGNMENT_MAX_K
    if exact:
        rows, cols = linear_sum_assignment(score, maximize=True)
        perm = np.empty(k, dtype=np.int64)
        perm[rows] = cols
    else:
        warnings.warn(f"aligning k={k} columns greedily; the assignment "
                      "may not be optimal")
        perm = _greedy_assignment(score)

    matched = gv[:, perm]
    fit = np.sum(fv * matched, axis=0) / g_norms[perm] ** 2
    scaling = np.maximum(fit, SCALING_FLOOR)
    total = np.linalg.norm(fv)
    diff = np.linalg.norm(fv - matched * scaling)
    residual = float(diff / total) if total > 0 else float(diff)
    return AlignmentResult(permutation=perm, scaling=scaling,
                           residual=residual, exact_assignment=exact,
                           valid=bool(np.all(fit > 0)))


def random_orthogonal(k, seed=None):
    """Haar-random rotation: QR of a Gaussian matrix with the signs of
    R's diagonal moved into Q, then det forced to +1."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(k, k)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def planar_rotation(k, angle, i=0, j=1):
    """Rotation by 'angle' in the (i, j) coordinate plane."""
    rot = np.eye(k)
    c, s = math.cos(angle), math.sin(angle)
    rot[i, i] = rot[j, j] = c
    rot[i, j] = -s
    rot[j, i] = s
    return rot


def rotation_symmetry_check(features, seed=None, loss_evaluator=None,
                            rotation=None):
    """Rotate every feature row by R and report how much the loss moved
    and the smallest entry of the rotated table.

    'loss_evaluator' maps a FeatureTable to a scalar loss. 'rotation'
    overrides the random draw.
    """
    table = features if isinstance(features, FeatureTable) \
        else FeatureTable(features)
    rot = random_orthogonal(table.dim, seed) if rotation is None \
        else np.asarray(rotation, dtype=np.float64)
    if rot.shape != (table.dim, table.dim):
        raise DimensionMismatch("rotation does not match the feature width",
                                rot.shape)
    rotated = table.with_values(table.values @ rot.T, nonneg=False)

    result = {
        'min_entry_after_rotation': float(rotated.values.min())
        if rotated.values.size else 0.0,
        'is_permutation': bool(np.all(np.isin(np.round(rot, 12), (0.0, 1.0)))),
    }
    if loss_evaluator is not None:
        result['loss_delta'] = abs(float(loss_evaluator(rotated)) -
                                   float(loss_evaluator(table)))
    return result


#
# Spectra and activation counts
#

def eigen_spectrum(features, model):
    """Descending eigenvalues of sum_x P(x) f(x) f(x)^T."""
    values = _values(features)
    second = values.T @ (values * model.marginal[:, None])
    return np.sort(np.linalg.eigvalsh(0.5 * (second + second.T)))[::-1]


def activated_dim_histogram(features, threshold=SPARSITY_THRESHOLD):
    """Per-sample count of activated dimensions, and a histogram of the
    counts over 0..k."""
    values = _values(features)
    counts = np.sum(values > threshold, axis=1)
    return counts, np.bincount(counts, minlength=values.shape[1] + 1)


#
# Probing and Bayes optimality
#

@dataclass
class ProbeConfig:
    learning_rate: float = 0.1
    steps: int = 3000
    tolerance: float = 1e-10


@dataclass
class ProbeResult:
    train_accuracy: float
    test_accuracy: float
    weights: np.ndarray
    steps: int


def _with_bias(values):
    return np.hstack([values, np.ones((values.shape[0], 1))])


def linear_probe(train_features, train_labels, test_features, test_labels,
                 cfg=None):
    """Multinomial logistic regression on frozen features, trained by
    full-batch gradient descent until the loss changes by less than
    cfg.tolerance."""

    cfg = cfg or ProbeConfig()
    x_train = _with_bias(_values(train_features))
    x_test = _with_bias(_values(test_features))
    y_train = np.asarray(train_labels)
    y_test = np.asarray(test_labels)
    n_classes = int(max(y_train.max(), y_test.max())) + 1
    if np.unique(y_train).size < 2:
        raise DegenerateLabels("a probe needs at least two classes in its "
                               "training labels", np.unique(y_train).tolist())

    weights = np.zeros((x_train.shape[1], n_classes))
    previous = None
    step = 0
    for step in range(1, cfg.steps + 1):
        report = objectives.ce_loss(x_train, weights, y_train,
                                    with_grad=True)
        weights = weights - cfg.learning_rate * report.grads['embeddings']
        if previous is not None and abs(previous - report.loss) < cfg.tolerance:
            break
        previous = report.loss

    def accuracy(x, y):
        return float(np.mean(tie_break_argmax(x @ weights) == y))

    return ProbeResult(train_accuracy=accuracy(x_train, y_train),
                       test_accuracy=accuracy(x_test, y_test),
                       weights=weights, steps=step)


def bayes_agreement(weights, features, model, labels, tol=1e-12):
    """Fraction of samples where argmax_y w_y . f(x) equals the Bayes
    label argmax_y P(y|x), both with the same tie-break."""
    values = _values(features)
    predicted = tie_break_argmax(values @ np.asarray(weights), tol)
    return float(np.mean(predicted == labels.sample_labels(model, tol)))


@dataclass
class BoundResult:
    measured: float
    bound: float
    epsilon: float
    slack: float


def orthogonality_bound(features, model, normalize=False):
    """Largest off-diagonal sum_x P(x) f_i(x) f_j(x) against the bound
    epsilon / min_c P(c), epsilon being the model's class overlap.

    With 'normalize' the columns are scaled to unit weighted norm
    first. The bound holds exactly for the closed-form optimum.
    """
    values = _values(features)
    if normalize:
        measured = correlation_matrix(values, model.marginal) \
            .max_off_diagonal()
    else:
        second = values.T @ (values * model.marginal[:, None])
        np.fill_diagonal(second, 0.0)
        measured = float(np.abs(second).max()) if second.size else 0.0
    epsilon = class_overlap(model)
    bound = epsilon / float(model.class_prior.min())
    return BoundResult(measured=measured, bound=bound, epsilon=epsilon,
                       slack=bound - measured)


#
# Named metrics for reports
#

@dataclass
class EvalContext:
    """What a named metric may look at."""
    table: FeatureTable
    model: object
    labels: object
    reference: Optional[FeatureTable] = None
    seed: Optional[int] = None

    @property
    def sample_labels(self):
        return self.labels.sample_labels(self.model)


def _split(n):
    idx = np.arange(n)
    return idx[0::2], idx[1::2]


def _m_sparsity(ctx, p):
    per_row, mean = sparsity(ctx.table, p['sparsity_threshold'])
    return MetricFragment('sparsity', mean, per_item=per_row.tolist(),
                          config={'threshold': p['sparsity_threshold']})


def _m_correlation(ctx, p):
    result = correlation_matrix(ctx.table, ctx.model.marginal
                                if p['weighted'] else None)
    return MetricFragment('correlation', result.max_off_diagonal(),
                          per_item=result.matrix.tolist(),
                          config={'weighted': p['weighted'],
                                  'live': result.live,
                                  'dead': result.dead})


def _m_class_consistency(ctx, p):
    result = class_consistency(ctx.table, ctx.sample_labels,
                               p['activation_threshold'])
    return MetricFragment('class_consistency', result.mean,
                          per_item=result.rates.tolist(),
                          config={'threshold': p['activation_threshold'],
                                  'excluded': result.excluded})


def _m_expected_activation(ctx, p):
    result = expected_activation(ctx.table, ctx.model.marginal,
                                 absolute=not ctx.table.nonneg)
    return MetricFragment('expected_activation',
                          select_top(result, ctx.table.dim),
                          per_item=result.values.tolist(),
                          config={'skipped_rows': result.skipped,
                                  'absolute': not ctx.table.nonneg})


def _m_retrieval_map(ctx, p):
    result = retrieval_map(ctx.table, None, ctx.sample_labels, k=p['map_k'])
    return MetricFragment('retrieval_map', result.map,
                          per_item=result.ap.tolist(),
                          config={'k': p['map_k'],
                                  'zero_relevant': result.zero_relevant})


def _sepin_fragment(ctx, p, normalize):
    cfg = SepinConfig(draws=p['sepin_draws'],
                      batch_size=p['sepin_batch_size'],
                      negatives=p['sepin_negatives'], seed=ctx.seed,
                      critic=p['sepin_critic'],
                      denominator=p['sepin_denominator'],
                      normalize=normalize)
    k = min(p['sepin_k'], ctx.table.dim)
    result = sepin_at_k(ctx.table, ctx.model, k, cfg)
    return MetricFragment('sepin' + ('_normalized' if normalize else ''),
                          result.score, per_item=result.per_dim.tolist(),
                          stderr=result.stderr,
                          config={'k': k, 'ranking': result.ranking,
                                  'critic': cfg.critic,
                                  'denominator': cfg.denominator,
                                  'offset_nats': bound_offset(cfg),
                                  'draws': cfg.draws,
                                  'normalize': normalize})


def _m_sepin(ctx, p):
    return _sepin_fragment(ctx, p, False)


def _m_sepin_normalized(ctx, p):
    return _sepin_fragment(ctx, p, True)


def _m_eigen_spectrum(ctx, p):
    eig = eigen_spectrum(ctx.table, ctx.model)
    return MetricFragment('eigen_spectrum', int(np.sum(eig > 1e-10)),
                          per_item=eig.tolist())


def _m_activated_dims(ctx, p):
    counts, hist = activated_dim_histogram(ctx.table,
                                           p['activation_threshold'])
    return MetricFragment('activated_dims', float(counts.mean()),
                          per_item=hist.tolist(),
                          config={'threshold': p['activation_threshold']})


def _m_linear_probe(ctx, p):
    train, test = _split(ctx.table.n_samples)
    labels = ctx.sample_labels
    values = ctx.table.values
    result = linear_probe(values[train], labels[train], values[test],
                          labels[test],
                          ProbeConfig(learning_rate=p['probe_learning_rate'],
                                      steps=p['probe_steps']))
    return MetricFragment('linear_probe', result.test_accuracy,
                          config={'train_accuracy': result.train_accuracy,
                                  'steps': result.steps,
                                  'split': 'even/odd samples'})


def _m_bayes_agreement(ctx, p):
    if ctx.table.dim < ctx.model.m:
        raise DimensionMismatch("bayes agreement needs k >= m",
                                (ctx.table.dim, ctx.model.m))
    weights = bayes_classifier_weights(ctx.model, ctx.labels,
                                       k=ctx.table.dim)
    return MetricFragment('bayes_agreement',
                          bayes_agreement(weights, ctx.table, ctx.model,
                                          ctx.labels))


def _m_orthogonality_bound(ctx, p):
    result = orthogonality_bound(ctx.table, ctx.model)
    return MetricFragment('orthogonality_bound', result.measured,
                          config={'bound': result.bound,
                                  'epsilon': result.epsilon,
                                  'slack': result.slack})


def _m_identifiability(ctx, p):
    if ctx.reference is None:
        raise ConfigInvalid("identifiability needs a reference table")
    result = identifiability_align(ctx.table, ctx.reference)
    return MetricFragment('identifiability', result.residual,
                          per_item=result.permutation.tolist(),
                          config={'scaling': result.scaling.tolist(),
                                  'exact_assignment':
                                  result.exact_assignment,
                                  'valid': result.valid})


def _m_rotation_symmetry(ctx, p):
    def loss(table):
        return objectives.spectral_loss_population(table, ctx.model).loss

    result = rotation_symmetry_check(ctx.table, ctx.seed, loss)
    return MetricFragment('rotation_symmetry', result['loss_delta'],
                          config=result)


METRICS = {
    'sparsity': _m_sparsity,
    'correlation': _m_correlation,
    'class_consistency': _m_class_consistency,
    'expected_activation': _m_expected_activation,
    'retrieval_map': _m_retrieval_map,
    'sepin': _m_sepin,
    'sepin_normalized': _m_sepin_normalized,
    'eigen_spectrum': _m_eigen_spectrum,
    'activated_dims': _m_activated_dims,
    'linear_probe': _m_linear_probe,
    'bayes_agreement': _m_bayes_agreement,
    'orthogonality_bound': _m_orthogonality_bound,
    'identifiability': _m_identifiability,
    'rotation_symmetry': _m_rotation_symmetry,
}

# Defaults for the knobs the named metrics read.
METRIC_PARAMS = {
    'sparsity_threshold': SPARSITY_THRESHOLD,
    'activation_threshold': SPARSITY_THRESHOLD,
    'weighted': True,
    'map_k': 10,
    'sepin_k': 1,
    'sepin_draws': 200,
    'sepin_batch_size': 64,
    'sepin_negatives': 16,
    'sepin_critic': 'plugin',
    'sepin_denominator': 'mean',
    'probe_learning_rate': 0.1,
    'probe_steps': 3000,
}


def compute(name, ctx, params=None):
    """Compute the named metric as a MetricFragment."""
    if name not in METRICS:
        raise ConfigInvalid("unknown metric", name)
    p = dict(METRIC_PARAMS)
    p.update(params or {})
    return METRICS[name](ctx, p)
