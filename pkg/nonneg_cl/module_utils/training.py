# Optimization drivers.
#
# train() covers the contrastive objectives over any encoder, either
# full-batch on the exact population loss or on sampled mini-batches.
# projected_gradient_nmf() solves the factorization side directly on a
# raw factor. train_asymmetric() is the two-view variant, and
# train_supervised() trains CE/NCE heads.
#
# No update rule here enforces non-negativity on encoder parameters:
# that is the output transform's job. Only projected_gradient_nmf
# projects.

__metaclass__ = type
"""
Training loops, optimizers, and traces.
"""

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from nonneg_cl.module_utils import objectives, reparam
from nonneg_cl.module_utils.errors import (
    ConfigInvalid,
    DivergenceDetected,
    NegativeEntry,
    NonSymmetricInput,
)
from nonneg_cl.module_utils.features import from_factor
from nonneg_cl.module_utils.latent_model import (
    sample_negative,
    sample_pair,
)

log = logging.getLogger(__name__)

OPTIMIZERS = ('gd', 'momentum_gd', 'adam_like')
SCHEDULES = ('constant', 'cosine')
OBJECTIVES = ('spectral', 'infonce')

# How many times a single step may halve its learning rate.
MAX_BACKTRACKS = 60


@dataclass
class TrainConfig:
    optimizer: str = 'gd'
    learning_rate: float = 0.1
    schedule: str = 'constant'
    steps: int = 1000
    batch_size: int = 0
    negatives: int = 16
    tolerance: float = 0.0
    convergence_window: int = 50
    backtracking: bool = False
    backtrack_factor: float = 0.5
    momentum: float = 0.9
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed: Optional[int] = None
    snapshot_every: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigInvalid("unknown optimizer", self.optimizer)
        if self.schedule not in SCHEDULES:
            raise ConfigInvalid("unknown learning-rate schedule",
                                self.schedule)
        # A zero rate is allowed: it leaves the parameters untouched.
        if not self.learning_rate >= 0:
            raise ConfigInvalid("learning_rate must be non-negative",
                                self.learning_rate)
        if self.steps < 1:
            raise ConfigInvalid("steps must be positive", self.steps)
        if self.batch_size < 0 or self.negatives < 0:
            raise ConfigInvalid("batch sizes must be non-negative",
                                (self.batch_size, self.negatives))
        if self.tolerance < 0:
            raise ConfigInvalid("tolerance must be non-negative",
                                self.tolerance)
        if self.convergence_window < 1:
            raise ConfigInvalid("convergence_window must be positive",
                                self.convergence_window)
        if not 0 < self.backtrack_factor < 1:
            raise ConfigInvalid("backtrack_factor must lie in (0, 1)",
                                self.backtrack_factor)
        self.betas = tuple(self.betas)
        if len(self.betas) != 2:
            raise ConfigInvalid("betas must be a pair", self.betas)
        if self.snapshot_every < 0:
            raise ConfigInvalid("snapshot_every must be non-negative",
                                self.snapshot_every)

    def rate(self, step):
        """Learning rate at 'step' (0-based)."""
        if self.schedule == 'cosine':
            return self.learning_rate * 0.5 * \
                (1.0 + math.cos(math.pi * step / self.steps))
        return self.learning_rate


@dataclass
class ObjectiveSpec:
    kind: str = 'spectral'
    l1_lambda: float = 0.0
    temperature: Optional[float] = None
    cosine: bool = False

    def __post_init__(self):
        if self.kind not in OBJECTIVES:
            raise ConfigInvalid("unknown contrastive objective", self.kind)
        if self.l1_lambda < 0:
            raise ConfigInvalid("l1_lambda must be non-negative",
                                self.l1_lambda)


@dataclass
class TrainTrace:
    loss: list = field(default_factory=list)
    grad_norm: list = field(default_factory=list)
    dead_dims: list = field(default_factory=list)
    ms: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)
    stopped_early: bool = False

    def __len__(self):
        return len(self.loss)

    def record(self, loss, grad_norm, dead_dims, ms):
        self.loss.append(float(loss))
        self.grad_norm.append(float(grad_norm))
        self.dead_dims.append(int(dead_dims))
        self.ms.append(float(ms))

    @property
    def final_loss(self):
        return self.loss[-1] if self.loss else None

    def rows(self):
        for step, row in enumerate(zip(self.loss, self.grad_norm,
                                       self.dead_dims, self.ms)):
            yield (step,) + row

    def to_csv(self, path):
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(('step', 'loss', 'grad_norm', 'dead_dims', 'ms'))
            for step, loss, grad_norm, dead, ms in self.rows():
                writer.writerow((step, repr(loss), repr(grad_norm), dead,
                                 f"{ms:.3f}"))

    def summary(self):
        return {
            'steps': len(self),
            'final_loss': self.final_loss,
            'final_grad_norm': self.grad_norm[-1] if self.grad_norm else None,
            'final_dead_dims': self.dead_dims[-1] if self.dead_dims else None,
            'stopped_early': self.stopped_early,
        }


class Optimizer:
    """First-order update rules over a dict of parameter arrays."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.state = {}
        self.t = 0

    def update(self, params, grads, rate):
        """Return updated copies of 'params'. The optimizer state only
        advances when commit() is called, so a rejected backtracking
        trial does not pollute it."""
        cfg = self.cfg
        new = {}
        pending = {}
        t = self.t + 1
        for name, p in params.items():
            g = grads[name]
            if cfg.optimizer == 'gd':
                new[name] = p - rate * g
            elif cfg.optimizer == 'momentum_gd':
                v = cfg.momentum * self.state.get(name, np.zeros_like(p)) + g
                pending[name] = v
                new[name] = p - rate * v
            else:
                beta1, beta2 = cfg.betas
                m1, m2 = self.state.get(name, (np.zeros_like(p),
                                               np.zeros_like(p)))
                m1 = beta1 * m1 + (1.0 - beta1) * g
                m2 = beta2 * m2 + (1.0 - beta2) * g * g
                pending[name] = (m1, m2)
                m_hat = m1 / (1.0 - beta1 ** t)
                v_hat = m2 / (1.0 - beta2 ** t)
                new[name] = p - rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        self._pending = pending
        return new

    def commit(self):
        self.state.update(self._pending)
        self.t += 1


class _Convergence:
    """Early stop once |loss delta| < tolerance for 'window' consecutive
    checks."""

    def __init__(self, cfg):
        self.tolerance = cfg.tolerance
        self.window = cfg.convergence_window
        self.streak = 0
        self.previous = None

    def check(self, loss):
        done = False
        if self.previous is not None and \
           abs(loss - self.previous) < self.tolerance:
            self.streak += 1
            done = self.streak >= self.window
        else:
            self.streak = 0
        self.previous = loss
        return done


def _finite_params(params):
    return all(np.all(np.isfinite(p)) for p in params.values())


def _grad_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def _check_finite(loss, params, step):
    if not math.isfinite(loss):
        raise DivergenceDetected(f"loss is not finite at step {step}", loss)
    for name, p in params.items():
        if not np.all(np.isfinite(p)):
            raise DivergenceDetected(f"parameter {name} is not finite after "
                                     f"step {step}", name)


def _check_collapse(enc, dead, live_at_start, step, final=False):
    """Raise once every output dimension of a run that started with live
    ones is dead. A dead relu output gets no gradient, so under relu
    this is final at once; other transforms get until the last step."""
    if not live_at_start or dead < enc.dim:
        return
    transform = enc.transform
    if final or (transform is not None and transform.kind == 'relu'):
        raise DivergenceDetected(f"every feature dimension is dead after "
                                 f"step {step}", dead)


def dead_dimensions(values):
    """Number of columns that are exactly zero on every row."""
    values = np.asarray(values)
    if values.shape[0] == 0:
        return 0
    return int(np.sum(np.all(values == 0, axis=0)))


def _population_step(enc, objective, model):
    table = enc.encode_all(model.n_samples, cache=True)
    report = objectives.spectral_loss_population(table, model, with_grad=True)
    if objective.l1_lambda > 0:
        report = objectives.l1_regularized_loss(
            report, table, objective.l1_lambda,
            sample_weights=model.marginal)
    return report, enc.grad_params(report.grad)


def _batch_step(enc, objective, model, cfg, rng):
    anchors, positives = sample_pair(model, rng, size=cfg.batch_size)
    negatives = sample_negative(model, rng, size=cfg.negatives)
    idx = np.concatenate([anchors, positives, negatives])
    table = enc.encode(idx, cache=True)
    b = cfg.batch_size
    a, p, n = table.values[:b], table.values[b:2 * b], table.values[2 * b:]

    if objective.kind == 'spectral':
        report = objectives.spectral_loss_batch(a, p, n, with_grad=True)
    else:
        report = objectives.infonce_loss(a, p, n,
                                         temperature=objective.temperature,
                                         cosine=objective.cosine,
                                         with_grad=True)
    report.grads = {'features': np.concatenate([report.grads['anchor'],
                                                report.grads['positive'],
                                                report.grads['negative']])}
    if objective.l1_lambda > 0:
        report = objectives.l1_regularized_loss(report, table.values,
                                                objective.l1_lambda)
    return report, enc.grad_params(report.grad)


def _population_loss(enc, objective, model):
    table = enc.encode_all(model.n_samples, cache=False)
    loss = objectives.spectral_loss_population(table, model).loss
    if objective.l1_lambda > 0:
        loss += objective.l1_lambda * \
            float(model.marginal @ np.abs(table.values).sum(axis=1))
    return loss


def train(enc, objective, model, cfg):
    """Minimize a contrastive objective over the encoder's parameters.

    With cfg.batch_size == 0 every step uses the exact population loss
    and gradient; otherwise each step draws batch_size positive pairs
    and cfg.negatives shared negatives.

    Returns (trace, enc). The encoder is updated in place.
    """
    if isinstance(objective, dict):
        objective = ObjectiveSpec(**objective)
    if objective.kind == 'infonce' and cfg.batch_size == 0:
        raise ConfigInvalid("InfoNCE has no population form here; set "
                            "batch_size > 0")
    if cfg.backtracking and (cfg.batch_size != 0 or cfg.optimizer != 'gd'):
        raise ConfigInvalid("backtracking needs full-batch plain gd")
    if enc.n_inputs != model.n_samples and enc.kind == 'tabular':
        raise ConfigInvalid("encoder rows do not match the model's samples",
                            (enc.n_inputs, model.n_samples))

    rng = np.random.default_rng(cfg.seed)
    opt = Optimizer(cfg)
    trace = TrainTrace()
    convergence = _Convergence(cfg)
    live_at_start = dead_dimensions(
        enc.encode_all(enc.n_inputs, cache=False).values) < enc.dim

    for step in range(cfg.steps):
        started = time.perf_counter()
        rate = cfg.rate(step)
        with np.errstate(over='ignore', invalid='ignore'):
            if cfg.batch_size == 0:
                report, grads = _population_step(enc, objective, model)
            else:
                report, grads = _batch_step(enc, objective, model, cfg, rng)
            params = enc.params()
            _check_finite(report.loss, params, step)

            new = opt.update(params, grads, rate)
            if cfg.backtracking:
                for _ in range(MAX_BACKTRACKS):
                    if _finite_params(new):
                        enc.set_params(new)
                        if _population_loss(enc, objective, model) <= \
                           report.loss + 1e-12:
                            break
                    rate *= cfg.backtrack_factor
                    new = opt.update(params, grads, rate)
                else:
                    log.warning("step %d: no decrease after %d backtracks; "
                                "keeping parameters", step, MAX_BACKTRACKS)
                    new = params
            _check_finite(report.loss, new, step)
            enc.set_params(new)
            opt.commit()

        values = enc.encode_all(enc.n_inputs, cache=False).values
        trace.record(report.loss, _grad_norm(grads), dead_dimensions(values),
                     1000.0 * (time.perf_counter() - started))
        _check_collapse(enc, trace.dead_dims[-1], live_at_start, step)

        if cfg.snapshot_every and step % cfg.snapshot_every == 0:
            trace.snapshots.append((step, values.copy()))
            log.debug("step %d: loss %.6g, grad norm %.3g, %d dead",
                      step, report.loss, trace.grad_norm[-1],
                      trace.dead_dims[-1])

        if convergence.check(report.loss):
            trace.stopped_early = True
            log.info("converged after %d steps, loss %.10g",
                     step + 1, report.loss)
            break

    _check_collapse(enc, trace.dead_dims[-1], live_at_start, len(trace) - 1,
                    final=True)
    return trace, enc


def projected_gradient_nmf(normalized, marginal, k, cfg):
    """Symmetric NMF of the normalized co-occurrence matrix by projected
    gradient descent, F <- max(0, F - eta * 4 (F F^T - A_bar) F).

    Every step starts from cfg.learning_rate and halves it until the
    residual does not increase, so the trace is monotone.

    Returns (weighted non-negative FeatureTable, trace).
    """
    a_bar = np.asarray(normalized, dtype=np.float64)
    if a_bar.ndim != 2 or a_bar.shape[0] != a_bar.shape[1]:
        raise NonSymmetricInput("matrix is not square", a_bar.shape)
    if not np.allclose(a_bar, a_bar.T, rtol=0.0, atol=1e-12):
        raise NonSymmetricInput("matrix is not symmetric",
                                float(np.max(np.abs(a_bar - a_bar.T))))
    if a_bar.min() < 0:
        raise NegativeEntry("matrix has a negative entry", a_bar.min())
    if k < 1:
        raise ConfigInvalid("k must be positive", k)

    rng = np.random.default_rng(cfg.seed)
    scale = math.sqrt(max(float(a_bar.mean()), 1e-12) / k)
    factor = np.abs(rng.normal(size=(a_bar.shape[0], k))) * scale

    def residual(f):
        r = a_bar - f @ f.T
        return float(np.sum(r * r)), r

    trace = TrainTrace()
    loss, r = residual(factor)
    convergence = _Convergence(cfg)
    convergence.check(loss)
    for step in range(cfg.steps):
        started = time.perf_counter()
        grad = -4.0 * (r @ factor)
        rate = cfg.rate(step)
        for _ in range(MAX_BACKTRACKS):
            candidate = np.maximum(0.0, factor - rate * grad)
            new_loss, new_r = residual(candidate)
            if new_loss <= loss:
                break
            rate *= cfg.backtrack_factor
        else:
            candidate, new_loss, new_r = factor, loss, r

        if not math.isfinite(new_loss):
            raise DivergenceDetected(f"residual is not finite at step {step}",
                                     new_loss)
        factor, loss, r = candidate, new_loss, new_r
        trace.record(loss, math.sqrt(float(np.sum(grad * grad))),
                     dead_dimensions(factor),
                     1000.0 * (time.perf_counter() - started))

        if convergence.check(loss):
            trace.stopped_early = True
            break

    log.info("projected-gradient NMF: %d steps, residual %.3g",
             len(trace), loss)
    return from_factor(factor, marginal, nonneg=True), trace


def train_asymmetric(enc_visual, enc_language, model, cfg):
    """Minimize the two-view spectral loss over both encoders jointly.

    Full-batch only. Returns (trace, enc_visual, enc_language).
    """
    if enc_visual.n_inputs != model.n_visual or \
       enc_language.n_inputs != model.n_language:
        raise ConfigInvalid("encoders do not match the view sizes",
                            ((enc_visual.n_inputs, enc_language.n_inputs),
                             (model.n_visual, model.n_language)))
    if enc_visual.dim != enc_language.dim:
        raise ConfigInvalid("views have different feature dimensions",
                            (enc_visual.dim, enc_language.dim))
    if cfg.batch_size != 0:
        raise ConfigInvalid("two-view training is full-batch only",
                            cfg.batch_size)

    opt_v = Optimizer(cfg)
    opt_l = Optimizer(cfg)
    trace = TrainTrace()
    convergence = _Convergence(cfg)
    for step in range(cfg.steps):
        started = time.perf_counter()
        rate = cfg.rate(step)
        with np.errstate(over='ignore', invalid='ignore'):
            fv = enc_visual.encode_all(model.n_visual, cache=True)
            fl = enc_language.encode_all(model.n_language, cache=True)
            report = objectives.mm_spectral_loss(fv, fl, model,
                                                 with_grad=True)
            grads_v = enc_visual.grad_params(report.grads['visual'])
            grads_l = enc_language.grad_params(report.grads['language'])

            new_v = opt_v.update(enc_visual.params(), grads_v, rate)
            new_l = opt_l.update(enc_language.params(), grads_l, rate)
            _check_finite(report.loss, new_v, step)
            _check_finite(report.loss, new_l, step)
            enc_visual.set_params(new_v)
            enc_language.set_params(new_l)
            opt_v.commit()
            opt_l.commit()

        dead = dead_dimensions(np.vstack([
            enc_visual.encode_all(model.n_visual, cache=False).values,
            enc_language.encode_all(model.n_language, cache=False).values]))
        trace.record(report.loss, math.hypot(_grad_norm(grads_v),
                                             _grad_norm(grads_l)),
                     dead, 1000.0 * (time.perf_counter() - started))

        if convergence.check(report.loss):
            trace.stopped_early = True
            break

    return trace, enc_visual, enc_language


def train_supervised(enc, embeddings, inputs, labels, cfg, transform=None):
    """Full-batch CE training, or NCE when 'transform' is given.

    'embeddings' is the initial k x C class-embedding matrix; it is
    trained jointly with the encoder. For NCE the encoder itself should
    have no output transform, since nce_loss applies one to both sides.

    Returns (trace, enc, embeddings).
    """
    embeddings = np.array(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    opt = Optimizer(cfg)
    trace = TrainTrace()
    convergence = _Convergence(cfg)

    for step in range(cfg.steps):
        started = time.perf_counter()
        rate = cfg.rate(step)
        with np.errstate(over='ignore', invalid='ignore'):
            table = enc.encode(inputs, cache=True)
            if transform is None:
                report = objectives.ce_loss(table, embeddings, labels,
                                            with_grad=True)
            else:
                report = objectives.nce_loss(table, embeddings, labels,
                                             transform=transform,
                                             with_grad=True)
            grads = enc.grad_params(report.grads['features'])
            grads['__embeddings'] = report.grads['embeddings']
            params = enc.params()
            params['__embeddings'] = embeddings
            new = opt.update(params, grads, rate)
            _check_finite(report.loss, new, step)
            embeddings = new.pop('__embeddings')
            enc.set_params(new)
            opt.commit()
        trace.record(report.loss, _grad_norm(grads), 0,
                     1000.0 * (time.perf_counter() - started))
        if convergence.check(report.loss):
            trace.stopped_early = True
            break

    return trace, enc, embeddings


def supervised_predict(enc, embeddings, inputs, transform=None):
    """argmax_y of the (possibly transformed) logits."""
    f = enc.encode(inputs, cache=False).values
    w = np.asarray(embeddings, dtype=np.float64)
    if transform is not None:
        f = reparam.forward(transform, f)
        w = reparam.forward(transform, w)
    return np.argmax(f @ w, axis=1)
