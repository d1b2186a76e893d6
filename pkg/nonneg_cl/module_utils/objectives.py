# Losses, in population-exact and mini-batch form, with analytic
# gradients with respect to the feature tables.
#
# None of the contrastive losses enforce non-negativity themselves: NCL
# is the spectral loss evaluated on non-negative features, and the
# constraint lives in the encoder. Only the NMF objectives check the
# factor, since they are the factorization-side view.
#
# Gradients are returned in LossReport.grads, keyed by the table they
# belong to ("features", "anchor", "positive", "negative", "factor",
# "visual", "language", "embeddings").

__metaclass__ = type
"""
Contrastive, factorization and supervised objectives.
"""

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp, softmax

from nonneg_cl.module_utils import reparam
from nonneg_cl.module_utils.errors import (
    DegenerateLabels,
    DimensionMismatch,
    EmptyBatch,
    EmptyNegatives,
    LabelOutOfRange,
    NegativeEntry,
    ZeroNormFeature,
    ConfigInvalid,
)
from nonneg_cl.module_utils.features import FeatureTable
from nonneg_cl.module_utils.latent_model import cooccurrence

# SimCLR's temperature, used when cosine similarity is on and no
# temperature is given.
DEFAULT_COSINE_TEMPERATURE = 0.5

# Default weight of the l1 penalty.
DEFAULT_L1_LAMBDA = 0.01


@dataclass
class LossReport:
    loss: float
    alignment: Optional[float] = None
    uniformity: Optional[float] = None
    penalty: float = 0.0
    grads: dict = field(default_factory=dict)

    @property
    def grad(self):
        """The gradient, when there is only one table to differentiate."""
        if 'features' in self.grads:
            return self.grads['features']
        if len(self.grads) == 1:
            return next(iter(self.grads.values()))
        return None

    @property
    def grad_norm(self):
        if not self.grads:
            return None
        return math.sqrt(sum(float(np.sum(g * g))
                             for g in self.grads.values()))

    def to_json(self):
        return {
            'loss': float(self.loss),
            'alignment': None if self.alignment is None
            else float(self.alignment),
            'uniformity': None if self.uniformity is None
            else float(self.uniformity),
            'penalty': float(self.penalty),
            'grad_norm': self.grad_norm,
        }


def _values(features):
    if isinstance(features, FeatureTable):
        return features.values
    values = np.asarray(features, dtype=np.float64)
    if values.ndim != 2:
        raise DimensionMismatch("features must be 2-D", values.shape)
    return values


def _check_rows(values, n, what):
    if values.shape[0] != n:
        raise DimensionMismatch(f"{what} has the wrong number of rows",
                                (values.shape[0], n))


#
# Spectral contrastive loss
#

def spectral_loss_population(features, model, with_grad=False):
    """Exact spectral contrastive loss

      -2 sum P(x,x') f(x).f(x') + sum P(x)P(x') (f(x).f(x'))^2

    over the whole sample space.
    """
    f = _values(features)
    _check_rows(f, model.n_samples, "feature table")
    raw = cooccurrence(model).raw
    weights = np.outer(model.marginal, model.marginal)

    gram = f @ f.T
    alignment = -2.0 * float(np.sum(raw * gram))
    uniformity = float(np.sum(weights * gram * gram))

    report = LossReport(loss=alignment + uniformity, alignment=alignment,
                        uniformity=uniformity)
    if with_grad:
        report.grads['features'] = -4.0 * (raw @ f) + \
            4.0 * ((weights * gram) @ f)
    return report


def spectral_loss_batch(anchor, positive, negative, with_grad=False):
    """Mini-batch estimate of the spectral loss.

    'anchor' and 'positive' are B x k rows of positive pairs; 'negative'
    is M x k rows drawn from the marginal, paired with every anchor. An
    empty 'negative' gives a zero uniformity term.
    """
    a = _values(anchor)
    p = _values(positive)
    n = _values(negative) if negative is not None \
        else np.zeros((0, a.shape[1]))
    if a.shape[0] == 0:
        raise EmptyBatch("no positive pairs in batch")
    if p.shape != a.shape or n.shape[1] != a.shape[1]:
        raise DimensionMismatch("inconsistent batch shapes",
                                (a.shape, p.shape, n.shape))

    batch = a.shape[0]
    alignment = -2.0 * float(np.sum(a * p)) / batch
    report = LossReport(loss=0.0, alignment=alignment)

    if n.shape[0] == 0:
        uniformity = 0.0
        sims = None
    else:
        sims = a @ n.T
        pairs = sims.size
        uniformity = float(np.sum(sims * sims)) / pairs
    report.uniformity = uniformity
    report.loss = alignment + uniformity

    if with_grad:
        grad_a = -2.0 * p / batch
        grad_p = -2.0 * a / batch
        grad_n = np.zeros_like(n)
        if sims is not None:
            grad_a = grad_a + 2.0 * (sims @ n) / pairs
            grad_n = 2.0 * (sims.T @ a) / pairs
        report.grads = {'anchor': grad_a, 'positive': grad_p,
                        'negative': grad_n}
    return report


#
# InfoNCE
#

def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroNormFeature("cannot normalize a zero feature row")
    return x / norms, norms


def _normalize_backward(unit, norms, upstream):
    """Gradient through x -> x/|x|."""
    radial = np.sum(unit * upstream, axis=-1, keepdims=True)
    return (upstream - unit * radial) / norms


def infonce_loss(anchor, positive, negative, temperature=None, cosine=False,
                 with_grad=False, mean_negatives=False):
    """InfoNCE loss

      -mean log exp(s+) / (exp(s+) + sum_i exp(s_i-))

    with similarities s divided by the temperature. 'negative' is either
    M x k (shared by all anchors) or B x M x k (one set per anchor).

    With 'mean_negatives' the negative sum is averaged over M instead,
    the form used by the SEPIN estimator.
    """
    if temperature is None:
        temperature = DEFAULT_COSINE_TEMPERATURE if cosine else 1.0
    if temperature <= 0:
        raise ConfigInvalid("temperature must be positive", temperature)

    a = _values(anchor)
    p = _values(positive)
    n = np.asarray(negative.values if isinstance(negative, FeatureTable)
                   else negative, dtype=np.float64)
    if a.shape[0] == 0:
        raise EmptyBatch("no positive pairs in batch")
    if p.shape != a.shape:
        raise DimensionMismatch("anchor and positive shapes differ",
                                (a.shape, p.shape))
    shared = n.ndim == 2
    if shared:
        n = np.broadcast_to(n, (a.shape[0],) + n.shape)
    if n.ndim != 3 or n.shape[0] != a.shape[0] or n.shape[2] != a.shape[1]:
        raise DimensionMismatch("negative batch has the wrong shape",
                                n.shape)
    n_neg = n.shape[1]
    if n_neg == 0:
        raise EmptyNegatives("InfoNCE needs at least one negative")

    if cosine:
        a_hat, a_norm = _normalize_rows(a)
        p_hat, p_norm = _normalize_rows(p)
        n_hat, n_norm = _normalize_rows(n)
    else:
        a_hat, p_hat, n_hat = a, p, n

    batch = a.shape[0]
    s_pos = np.sum(a_hat * p_hat, axis=1) / temperature
    s_neg = np.einsum('bk,bmk->bm', a_hat, n_hat) / temperature
    if mean_negatives:
        s_neg_denominator = s_neg - math.log(n_neg)
    else:
        s_neg_denominator = s_neg
    logits = np.concatenate([s_pos[:, None], s_neg_denominator], axis=1)
    log_denominator = logsumexp(logits, axis=1)

    alignment = -float(np.mean(s_pos))
    uniformity = float(np.mean(log_denominator))
    report = LossReport(loss=alignment + uniformity, alignment=alignment,
                        uniformity=uniformity)

    if with_grad:
        weights = softmax(logits, axis=1)
        d_pos = (weights[:, 0] - 1.0) / (batch * temperature)
        d_neg = weights[:, 1:] / (batch * temperature)

        g_a = d_pos[:, None] * p_hat + np.einsum('bm,bmk->bk', d_neg, n_hat)
        g_p = d_pos[:, None] * a_hat
        g_n = d_neg[:, :, None] * a_hat[:, None, :]

        if cosine:
            g_a = _normalize_backward(a_hat, a_norm, g_a)
            g_p = _normalize_backward(p_hat, p_norm, g_p)
            g_n = _normalize_backward(n_hat, n_norm, g_n)
        if shared:
            g_n = g_n.sum(axis=0)
        report.grads = {'anchor': g_a, 'positive': g_p, 'negative': g_n}
    return report


#
# Matrix factorization objectives
#

def _factorization(normalized, factor, check_nonneg, with_grad):
    normalized = np.asarray(normalized, dtype=np.float64)
    if isinstance(factor, FeatureTable):
        if check_nonneg and not factor.nonneg:
            raise NegativeEntry("NMF factor is not flagged non-negative")
        big_f = factor.weighted()
    else:
        big_f = np.asarray(factor, dtype=np.float64)
    if normalized.ndim != 2 or normalized.shape[0] != normalized.shape[1] \
       or big_f.ndim != 2 or big_f.shape[0] != normalized.shape[0]:
        raise DimensionMismatch("factor does not match the matrix",
                                (normalized.shape, big_f.shape))
    if check_nonneg and big_f.size > 0 and big_f.min() < 0:
        raise NegativeEntry("NMF factor has a negative entry", big_f.min())

    residual = normalized - big_f @ big_f.T
    report = LossReport(loss=float(np.sum(residual * residual)))
    if with_grad:
        report.grads['factor'] = -4.0 * (residual @ big_f)
    return report


def nmf_objective(normalized, factor, with_grad=False):
    """||A_bar - F+ F+^T||^2 for a non-negative factor F+.

    'factor' is a FeatureTable; its weighted() rows are F. The gradient
    is with respect to F: 4 (F F^T - A_bar) F.
    """
    return _factorization(normalized, factor, True, with_grad)


def mf_objective(normalized, factor, with_grad=False):
    """||A_bar - F F^T||^2, with no sign constraint on F."""
    return _factorization(normalized, factor, False, with_grad)


def equivalence_constant(model):
    """sum P(x,x')^2 / (P(x)P(x')), i.e., ||A_bar||_F^2.

    nmf_objective(F) = spectral_loss_population(f) + this constant.
    """
    normalized = cooccurrence(model).normalized
    return float(np.sum(normalized * normalized))


def l1_regularized_loss(base, features, lam=DEFAULT_L1_LAMBDA,
                        sample_weights=None, key='features'):
    """Add lam * E_x ||f(x)||_1 to a LossReport.

    'features' are the rows the penalty applies to, and 'key' names
    their gradient in base.grads. The expectation is a plain mean over
    rows unless 'sample_weights' (e.g., the marginal) are given. The
    subgradient at exact zeros is 0.
    """
    if lam < 0:
        raise ConfigInvalid("l1 lambda must be non-negative", lam)
    f = _values(features)
    if sample_weights is None:
        weights = np.full(f.shape[0], 1.0 / f.shape[0])
    else:
        weights = np.asarray(sample_weights, dtype=np.float64)
        _check_rows(weights[:, None], f.shape[0], "sample weights")

    penalty = lam * float(weights @ np.sum(np.abs(f), axis=1))
    report = LossReport(loss=base.loss + penalty, alignment=base.alignment,
                        uniformity=base.uniformity,
                        penalty=base.penalty + penalty,
                        grads=dict(base.grads))
    if key in report.grads:
        report.grads[key] = report.grads[key] + \
            lam * weights[:, None] * np.sign(f)
    return report


#
# Multi-modal (asymmetric) objectives
#

def mm_spectral_loss(visual, language, model, with_grad=False):
    """Two-view spectral loss

      -2 sum P_M(v,l) f_V(v).f_L(l) + sum P_V(v)P_L(l) (f_V(v).f_L(l))^2.
    """
    fv = _values(visual)
    fl = _values(language)
    _check_rows(fv, model.n_visual, "visual table")
    _check_rows(fl, model.n_language, "language table")
    if fv.shape[1] != fl.shape[1]:
        raise DimensionMismatch("views have different feature dimensions",
                                (fv.shape, fl.shape))

    weights = np.outer(model.marginal_visual, model.marginal_language)
    cross = fv @ fl.T
    alignment = -2.0 * float(np.sum(model.joint * cross))
    uniformity = float(np.sum(weights * cross * cross))
    report = LossReport(loss=alignment + uniformity, alignment=alignment,
                        uniformity=uniformity)
    if with_grad:
        weighted = weights * cross
        report.grads = {
            'visual': -2.0 * (model.joint @ fl) + 2.0 * (weighted @ fl),
            'language': -2.0 * (model.joint.T @ fv) + 2.0 * (weighted.T @ fv),
        }
    return report


def asymmetric_nmf_objective(normalized, visual, language, with_grad=False):
    """||A_bar_M - F_V+ F_L+^T||^2 with both factors non-negative."""
    normalized = np.asarray(normalized, dtype=np.float64)
    factors = []
    for name, table in (('visual', visual), ('language', language)):
        if isinstance(table, FeatureTable):
            if not table.nonneg:
                raise NegativeEntry(f"{name} factor is not flagged "
                                    "non-negative")
            big = table.weighted()
        else:
            big = np.asarray(table, dtype=np.float64)
        if big.size > 0 and big.min() < 0:
            raise NegativeEntry(f"{name} factor has a negative entry",
                                big.min())
        factors.append(big)
    fv, fl = factors
    if fv.shape[0] != normalized.shape[0] or \
       fl.shape[0] != normalized.shape[1] or fv.shape[1] != fl.shape[1]:
        raise DimensionMismatch("factors do not match the matrix",
                                (normalized.shape, fv.shape, fl.shape))

    residual = normalized - fv @ fl.T
    report = LossReport(loss=float(np.sum(residual * residual)))
    if with_grad:
        report.grads = {'visual': -2.0 * (residual @ fl),
                        'language': -2.0 * (residual.T @ fv)}
    return report


def mm_equivalence_constant(model):
    """||A_bar_M||_F^2, the two-view analogue of equivalence_constant."""
    return float(np.sum(model.normalized * model.normalized))


#
# Supervised objectives
#

def ce_loss(features, embeddings, labels, with_grad=False):
    """Cross entropy with logits f(x) . w_y.

    'embeddings' is k x C, one column per class.
    """
    f = _values(features)
    w = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if w.ndim != 2 or w.shape[0] != f.shape[1]:
        raise DimensionMismatch("class embeddings do not match features",
                                (f.shape, w.shape))
    n_classes = w.shape[1]
    if n_classes < 2:
        raise DegenerateLabels("cross entropy needs at least two classes",
                               n_classes)
    if f.shape[0] == 0:
        raise EmptyBatch("no samples in batch")
    if labels.shape != (f.shape[0],):
        raise DimensionMismatch("need one label per sample",
                                (labels.shape, f.shape))
    if labels.min() < 0 or labels.max() >= n_classes:
        raise LabelOutOfRange(f"labels must lie in 0..{n_classes - 1}",
                              (int(labels.min()), int(labels.max())))

    batch = f.shape[0]
    rows = np.arange(batch)
    logits = f @ w
    log_norm = logsumexp(logits, axis=1)
    alignment = -float(np.mean(logits[rows, labels]))
    uniformity = float(np.mean(log_norm))
    report = LossReport(loss=alignment + uniformity, alignment=alignment,
                        uniformity=uniformity)
    if with_grad:
        d_logits = softmax(logits, axis=1)
        d_logits[rows, labels] -= 1.0
        d_logits /= batch
        report.grads = {'features': d_logits @ w.T,
                        'embeddings': f.T @ d_logits}
    return report


def nce_loss(features, embeddings, labels, transform=None, with_grad=False):
    """Non-negative cross entropy: ce_loss on sigma+(f(x)) and
    sigma+(w_y). 'features' and 'embeddings' are pre-transform values;
    gradients are with respect to them."""

    if transform is None:
        transform = reparam.NonNegTransform('relu')
    f = _values(features)
    w = np.asarray(embeddings, dtype=np.float64)
    f_plus = reparam.forward(transform, f)
    w_plus = reparam.forward(transform, w)
    report = ce_loss(f_plus, w_plus, labels, with_grad=with_grad)
    if with_grad:
        report.grads = {
            'features': reparam.backward(transform, f,
                                         report.grads['features']),
            'embeddings': reparam.backward(transform, w,
                                           report.grads['embeddings']),
        }
    return report
