#!/usr/bin/python
__metaclass__ = type

# Paired CL vs. NCL runs.

DOCUMENTATION = '''
---
module: compare
short_description: Compare CL and NCL features over shared seeds.
description:
  - For each seed, trains the same encoder twice from the same seed:
    once without an output transform (CL) and once with
    C(encoder.transform) (NCL). Both arms share every other setting.
  - Reports, per seed and arm, the final loss, sparsity, the largest
    off-diagonal feature correlation, class consistency, dead
    dimensions, the alignment residual against the closed-form optimum
    and retrieval mAP. Writes compare.json and compare.csv.
  - The report body depends only on the config, so two runs with the
    same seed write identical compare.json files.
options:
  seed:
    description:
      - First seed. Runs use seed, seed+1, ...
    type: int
    required: true
  runs:
    description:
      - Number of seeds.
    type: int
    default: 5
  output_dir:
    type: path
  model:
    type: dict
    required: true
  encoder:
    description:
      - See M(train). C(transform) is the NCL arm's transform and may
        not be C(none).
    type: dict
  objective:
    description:
      - See M(train). Only C(spectral) and C(infonce) apply.
    type: dict
  train:
    type: dict
  labels:
    type: dict
  params:
    description:
      - Metric settings, see M(evaluate).
    type: dict
'''

EXAMPLES = '''
seed: 0
runs: 5
output_dir: out/compare
model:
  preset: overlap
  m: 4
  n_samples: 40
  epsilon: 0.01
train:
  learning_rate: 5.0
  steps: 2000
'''

RETURN = '''
---
summary:
  description:
    - Mean of each score over the seeds, per arm.
  type: dict
  returned: Success.
  sample:
    cl: {final_loss: -4.0, sparsity: 0.02, dead_dims: 0}
    ncl: {final_loss: -4.0, sparsity: 0.75, dead_dims: 0}
files:
  description: Files written (or, in check mode, that would be written).
  type: list
'''

import numpy as np

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils import encoders
from nonneg_cl.module_utils import metrics
from nonneg_cl.module_utils import training
from nonneg_cl.module_utils.errors import NclError
from nonneg_cl.module_utils.latent_model import TwoViewModel, ground_truth_phi
from nonneg_cl.module_utils.report import ExperimentReport, write_table

ARGUMENT_SPEC = cfg_utils.common_spec()
ARGUMENT_SPEC.update(
    runs=dict(type='int', default=5),
    encoder=cfg_utils.section(cfg_utils.ENCODER_OPTIONS),
    objective=cfg_utils.section(cfg_utils.OBJECTIVE_OPTIONS),
    train=cfg_utils.section(cfg_utils.TRAIN_OPTIONS),
    labels=cfg_utils.section(cfg_utils.LABEL_OPTIONS),
    params=cfg_utils.section(cfg_utils.METRIC_OPTIONS),
)

ARMS = ('cl', 'ncl')
SCORES = ('final_loss', 'sparsity', 'correlation', 'class_consistency',
          'dead_dims', 'alignment_residual', 'map')


def score_run(table, final_loss, model, labels, reference, params):
    """The per-run numbers of the comparison table."""
    _, mean_sparsity = metrics.sparsity(table, params['sparsity_threshold'])
    corr = metrics.correlation_matrix(
        table, model.marginal if params['weighted'] else None)
    consistency = metrics.class_consistency(table, labels,
                                            params['activation_threshold'])
    residual = None
    if reference is not None:
        residual = metrics.identifiability_align(table, reference).residual
    retrieval = metrics.retrieval_map(table, None, labels,
                                      k=params['map_k'], allow_zero=True)
    return dict(
        final_loss=final_loss,
        sparsity=mean_sparsity,
        correlation=corr.max_off_diagonal(),
        class_consistency=consistency.mean,
        dead_dims=training.dead_dimensions(table.values),
        alignment_residual=residual,
        map=retrieval.map,
    )


def _mean(values):
    values = [v for v in values if v is not None and np.isfinite(v)]
    return float(np.mean(values)) if values else None


def main(module):
    result = dict(
        changed=False,
        msg=''
    )

    # Assign variables from properties, for convenience
    seed = module.params['seed']
    runs = module.params['runs']
    model_params = dict(module.params['model'])
    enc_spec = dict(module.params['encoder'])
    objective = module.params['objective']
    train_params = module.params['train']
    params = module.params['params']

    if model_params.get('seed') is None:
        model_params['seed'] = seed
    if runs < 1:
        module.fail_config(msg="runs must be at least 1.")
    if enc_spec['transform'] == 'none':
        module.fail_config(msg="encoder.transform is the NCL arm's "
                           "transform and cannot be none.")
    if objective['kind'] not in training.OBJECTIVES:
        module.fail_config(msg=f"Objective {objective['kind']} cannot be "
                           "compared; use one of "
                           f"{', '.join(training.OBJECTIVES)}.")

    try:
        model = cfg_utils.model_from_params(model_params)
        if isinstance(model, TwoViewModel):
            module.fail_config(msg="compare needs a single-view model.")
        labels = cfg_utils.labels_from_params(module.params['labels'], model)
        spec = training.ObjectiveSpec(
            kind=objective['kind'],
            l1_lambda=objective['l1_lambda'] if objective['l1'] else 0.0,
            temperature=objective['temperature'],
            cosine=objective['cosine'])
        training.TrainConfig(seed=seed, **train_params)
    except NclError as e:
        module.fail_config(msg=f"Error in configuration: {e}")

    if enc_spec['k'] is None:
        enc_spec['k'] = model.m
    reference = None
    if enc_spec['k'] == model.m:
        reference = ground_truth_phi(model)
    else:
        module.warn("k differs from m; alignment residuals are not "
                    "reported.")
    sample_labels = labels.sample_labels(model)

    report = ExperimentReport('compare', module.params)
    rows = []
    per_arm = {arm: {score: [] for score in SCORES} for arm in ARMS}
    for run in range(runs):
        run_seed = seed + run
        cfg = training.TrainConfig(seed=run_seed, **train_params)
        for arm in ARMS:
            report.phase(f'{arm}_{run_seed}')
            arm_spec = dict(enc_spec)
            if arm == 'cl':
                arm_spec['transform'] = None
            try:
                enc = encoders.build_encoder(arm_spec, model.n_samples,
                                             embedding=model.embedding,
                                             seed=run_seed)
                trace, enc = training.train(enc, spec, model, cfg)
                table = enc.encode_all(model.n_samples, cache=False)
                scores = score_run(table, trace.final_loss, model,
                                   sample_labels, reference, params)
            except NclError as e:
                module.fail_json(msg=f"Error in {arm} run with seed "
                                 f"{run_seed}: {e}")
            for score in SCORES:
                per_arm[arm][score].append(scores[score])
            rows.append((run_seed, arm) +
                        tuple(scores[score] for score in SCORES))
    report.phase(None)

    summary = {arm: {score: _mean(per_arm[arm][score]) for score in SCORES}
               for arm in ARMS}
    for arm in ARMS:
        for score in SCORES:
            report.add_metric(metrics.MetricFragment(
                f'{score}_{arm}', summary[arm][score],
                per_item=per_arm[arm][score]))
    report.extra['seeds'] = [seed + run for run in range(runs)]
    report.extra['summary'] = summary

    csv_path = report.output(module, 'compare.csv')
    files = [csv_path]
    if not module.check_mode:
        write_table(csv_path, ('seed', 'arm') + SCORES, rows)
        result['changed'] = True
    files.extend(report.write(module, 'compare'))

    result['summary'] = summary
    result['files'] = files
    module.exit_json(**result)
