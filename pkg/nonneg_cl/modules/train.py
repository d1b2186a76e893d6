#!/usr/bin/python
__metaclass__ = type

# Train an encoder on a latent-class model and save it.

DOCUMENTATION = '''
---
module: train
short_description: Train CL, NCL, NMF, two-view, CE or NCE features.
description:
  - Builds the model named in C(model), trains the requested objective
    and writes a checkpoint, the training trace and the learned feature
    table.
  - C(objective.kind=spectral) or C(infonce) trains an encoder with the
    contrastive loss. With C(encoder.transform=none) this is ordinary
    contrastive learning; with any other transform it is the
    non-negative variant.
  - C(objective.kind=nmf) runs projected-gradient symmetric NMF on the
    normalized co-occurrence matrix and saves the result as a tabular
    checkpoint.
  - C(objective.kind=mmncl) needs a two-view model. It trains one
    tabular encoder per view and saves both.
  - C(objective.kind=ce) and C(nce) train a classifier on the Bayes
    labels of the samples, with trainable class embeddings. For C(nce)
    the encoder's transform is applied inside the loss, to features
    and class embeddings alike.
options:
  seed:
    description:
      - Seeds the encoder initialization and the batch sampler.
    type: int
    required: true
  output_dir:
    description:
      - Directory for every file this run writes.
    type: path
  model:
    description:
      - The model specification. See M(generate).
    type: dict
    required: true
  encoder:
    description:
      - The encoder to train.
    type: dict
    suboptions:
      kind:
        description:
          - C(tabular) learns one row per sample. C(mlp) is a GELU
            network over the model's sample embedding.
        type: str
        choices: [ tabular, mlp ]
        default: tabular
      k:
        description:
          - Feature dimension. Defaults to the number of latent classes.
        type: int
      transform:
        description:
          - Output transform. C(none) gives unconstrained features.
        type: str
        choices: [ none, relu, softplus, sigmoid, relu_forward_gelu_backward ]
        default: relu
      hidden:
        description:
          - Hidden layer sizes of an MLP encoder.
        type: list
        elements: int
        default: []
  objective:
    description:
      - What to minimize.
    type: dict
    suboptions:
      kind:
        type: str
        choices: [ spectral, infonce, nmf, mmncl, ce, nce ]
        default: spectral
      l1:
        description:
          - Add an L1 penalty on the features.
        type: bool
        default: false
      l1_lambda:
        type: float
        default: 0.01
      temperature:
        description:
          - InfoNCE temperature. Defaults to 1, or 0.5 with C(cosine).
        type: float
      cosine:
        description:
          - Use cosine similarity in InfoNCE.
        type: bool
        default: false
  train:
    description:
      - Optimizer settings. See C(TrainConfig).
    type: dict
  labels:
    description:
      - Label groups for C(ce) and C(nce). One label per latent class
        when omitted.
    type: dict
    suboptions:
      groups:
        type: list
        elements: list
'''

EXAMPLES = '''
# Non-negative spectral CL on the one-hot model
seed: 0
output_dir: out/ncl
model:
  preset: one_hot
  m: 5
  n_samples: 50
encoder:
  kind: tabular
  transform: relu
train:
  learning_rate: 5.0
  steps: 4000
  tolerance: 1.0e-13

# Unconstrained CL instead:
#   nonneg-cl train configs/ncl.yml --set encoder.transform=none
'''

RETURN = '''
---
train:
  description:
    - Summary of the run, as written to train.json.
  type: dict
  returned: Success.
  sample:
    objective: spectral
    steps: 1210
    final_loss: -5.0
    stopped_early: true
    final_dead_dims: 0
files:
  description: Files written (or, in check mode, that would be written).
  type: list
'''

import numpy as np

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils import encoders
from nonneg_cl.module_utils import objectives
from nonneg_cl.module_utils import reparam
from nonneg_cl.module_utils import training
from nonneg_cl.module_utils.errors import NclError
from nonneg_cl.module_utils.features import FeatureTable
from nonneg_cl.module_utils.latent_model import TwoViewModel, cooccurrence
from nonneg_cl.module_utils.report import ExperimentReport, write_matrix

ARGUMENT_SPEC = cfg_utils.common_spec()
ARGUMENT_SPEC.update(
    encoder=cfg_utils.section(cfg_utils.ENCODER_OPTIONS),
    objective=cfg_utils.section(cfg_utils.OBJECTIVE_OPTIONS),
    train=cfg_utils.section(cfg_utils.TRAIN_OPTIONS),
    labels=cfg_utils.section(cfg_utils.LABEL_OPTIONS),
)


def _contrastive(module, model, enc_spec, objective, cfg, seed):
    enc = encoders.build_encoder(enc_spec, model.n_samples,
                                 embedding=model.embedding, seed=seed)
    spec = training.ObjectiveSpec(
        kind=objective['kind'],
        l1_lambda=objective['l1_lambda'] if objective['l1'] else 0.0,
        temperature=objective['temperature'],
        cosine=objective['cosine'])
    trace, enc = training.train(enc, spec, model, cfg)
    table = enc.encode_all(model.n_samples, cache=False)
    summary = dict(
        population=objectives.spectral_loss_population(table, model)
        .to_json(),
        equivalence_constant=objectives.equivalence_constant(model),
    )
    return trace, {'encoder.ckpt': enc}, {'features.csv': table.values}, \
        summary


def _nmf(module, model, enc_spec, objective, cfg, seed):
    if objective['l1']:
        module.warn("objective.l1 is ignored by projected-gradient NMF.")
    normalized = cooccurrence(model).normalized
    table, trace = training.projected_gradient_nmf(
        normalized, model.marginal, enc_spec['k'], cfg)
    # relu is the identity here; the checkpoint loads as non-negative.
    enc = encoders.TabularEncoder(table.values, transform='relu', seed=seed)
    summary = dict(
        residual=objectives.nmf_objective(normalized, table).loss,
        population=objectives.spectral_loss_population(table, model)
        .to_json(),
    )
    return trace, {'encoder.ckpt': enc}, {'features.csv': table.values}, \
        summary


def _mmncl(module, model, enc_spec, objective, cfg, seed):
    if enc_spec['kind'] != 'tabular':
        module.fail_config(msg="Two-view training uses tabular encoders.")
    enc_v = encoders.build_encoder(enc_spec, model.n_visual, seed=seed)
    enc_l = encoders.build_encoder(
        enc_spec, model.n_language, seed=None if seed is None else seed + 1)
    trace, enc_v, enc_l = training.train_asymmetric(enc_v, enc_l, model, cfg)

    fv = enc_v.encode_all(model.n_visual, cache=False)
    fl = enc_l.encode_all(model.n_language, cache=False)
    weighted_v = FeatureTable(fv.values, nonneg=True,
                              weighting=np.sqrt(model.marginal_visual))
    weighted_l = FeatureTable(fl.values, nonneg=True,
                              weighting=np.sqrt(model.marginal_language))
    summary = dict(
        equivalence_constant=objectives.mm_equivalence_constant(model),
        residual=objectives.asymmetric_nmf_objective(
            model.normalized, weighted_v, weighted_l).loss,
    )
    return trace, {'visual.ckpt': enc_v, 'language.ckpt': enc_l}, \
        {'features_visual.csv': fv.values,
         'features_language.csv': fl.values}, summary


def _supervised(module, model, enc_spec, objective, cfg, seed):
    labels = cfg_utils.labels_from_params(module.params['labels'], model)
    targets = labels.sample_labels(model)

    transform = None
    if objective['kind'] == 'nce':
        # The loss applies the transform; the encoder stays linear.
        transform = reparam.from_name(enc_spec['transform']) or \
            reparam.NonNegTransform('relu')
        enc_spec = dict(enc_spec, transform='none')

    enc = encoders.build_encoder(enc_spec, model.n_samples,
                                 embedding=model.embedding, seed=seed)
    rng = np.random.default_rng(seed)
    k = enc_spec['k']
    if transform is None:
        init = rng.normal(0.0, 1.0 / np.sqrt(k),
                          size=(k, labels.label_count))
    else:
        init = rng.uniform(0.0, 1.0 / np.sqrt(k),
                           size=(k, labels.label_count))
    inputs = np.arange(model.n_samples)
    trace, enc, embeddings = training.train_supervised(
        enc, init, inputs, targets, cfg, transform=transform)

    predicted = training.supervised_predict(enc, embeddings, inputs,
                                            transform=transform)
    table = enc.encode_all(model.n_samples, cache=False)
    summary = dict(accuracy=float(np.mean(predicted == targets)))
    if transform is not None:
        embeddings_out = reparam.forward(transform, embeddings)
        features_out = reparam.forward(transform, table.values)
    else:
        embeddings_out = embeddings
        features_out = table.values
    return trace, {'encoder.ckpt': enc}, \
        {'features.csv': features_out, 'embeddings.csv': embeddings_out}, \
        summary


TRAINERS = dict(
    spectral=_contrastive,
    infonce=_contrastive,
    nmf=_nmf,
    mmncl=_mmncl,
    ce=_supervised,
    nce=_supervised,
)


def main(module):
    result = dict(
        changed=False,
        msg=''
    )

    # Assign variables from properties, for convenience
    model_params = dict(module.params['model'])
    enc_spec = dict(module.params['encoder'])
    objective = module.params['objective']
    train_params = module.params['train']
    seed = module.params['seed']

    if model_params.get('seed') is None:
        model_params['seed'] = seed

    try:
        model = cfg_utils.model_from_params(model_params)
        cfg = training.TrainConfig(seed=seed, **train_params)
    except NclError as e:
        module.fail_config(msg=f"Error in configuration: {e}")

    kind = objective['kind']
    two_view = isinstance(model, TwoViewModel)
    if (kind == 'mmncl') != two_view:
        module.fail_config(msg=f"Objective {kind} does not apply to a "
                           f"{'two-view' if two_view else 'single-view'} "
                           "model.")
    if kind == 'mmncl' and enc_spec['transform'] == 'none':
        module.warn("Two-view features are constrained non-negative; "
                    "using encoder.transform=relu.")
        enc_spec['transform'] = 'relu'
    if enc_spec['k'] is None:
        enc_spec['k'] = model.m

    report = ExperimentReport('train', module.params)
    report.phase('train')
    try:
        trace, checkpoints, matrices, summary = TRAINERS[kind](
            module, model, enc_spec, objective, cfg, seed)
    except NclError as e:
        module.fail_json(msg=f"Error training {kind}: {e}")
    report.phase('write')

    summary.update(trace.summary())
    summary['objective'] = kind
    report.extra['train'] = summary

    files = []
    for name, enc in checkpoints.items():
        path = report.output(module, name)
        files.append(path)
        if not module.check_mode:
            encoders.save_checkpoint(enc, path)
    for name, matrix in matrices.items():
        path = report.output(module, name)
        files.append(path)
        if not module.check_mode:
            write_matrix(path, matrix)
    path = report.output(module, 'trace.csv')
    files.append(path)
    if not module.check_mode:
        trace.to_csv(path)
        result['changed'] = True
    files.extend(report.write(module, 'train'))

    result['train'] = summary
    result['files'] = files
    module.exit_json(**result)
