#!/usr/bin/python
__metaclass__ = type

# Compute named metrics on a feature table.

DOCUMENTATION = '''
---
module: evaluate
short_description: Compute metrics on a feature table.
description:
  - Loads a feature table (the closed-form optimum, a checkpoint or a
    CSV matrix), computes each requested metric once, and writes
    evaluate.json.
options:
  seed:
    description:
      - Seeds the random parts of metrics (SEPIN draws, random
        rotations).
    type: int
    required: true
  output_dir:
    type: path
  model:
    description:
      - The model the features belong to. See M(generate).
    type: dict
    required: true
  source:
    description:
      - Where the features come from.
    type: dict
    suboptions:
      kind:
        type: str
        choices: [ ground_truth, checkpoint, csv ]
        default: ground_truth
      path:
        description:
          - Checkpoint or CSV file, for those kinds.
        type: path
      k:
        description:
          - Width of the ground-truth table. Defaults to m.
        type: int
  reference:
    description:
      - Reference table for C(identifiability). Defaults to the
        ground-truth table of the same width.
    type: dict
  metrics:
    description:
      - Names of the metrics to compute. Each is reported once.
    type: list
    elements: str
    required: true
    choices: [ activated_dims, bayes_agreement, class_consistency,
               correlation, eigen_spectrum, expected_activation,
               identifiability, linear_probe, orthogonality_bound,
               retrieval_map, rotation_symmetry, sepin, sepin_normalized,
               sparsity ]
  labels:
    description:
      - Label groups. One label per latent class when omitted.
    type: dict
  params:
    description:
      - Metric settings, e.g. C(sparsity_threshold) (default 1e-5),
        C(map_k) (default 10) and the C(sepin_*) and C(probe_*) knobs.
    type: dict
'''

EXAMPLES = '''
seed: 0
output_dir: out/eval
model:
  preset: overlap
  m: 3
  n_samples: 30
  epsilon: 0.05
source:
  kind: checkpoint
  path: out/ncl/encoder.ckpt
metrics:
  - sparsity
  - correlation
  - class_consistency
  - orthogonality_bound
params:
  sparsity_threshold: 1.0e-5
'''

RETURN = '''
---
metrics:
  description:
    - Metric name to headline value.
  type: dict
  returned: Success.
  sample:
    sparsity: 0.8
    correlation: 0.0
files:
  description: Files written (or, in check mode, that would be written).
  type: list
'''

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils import encoders
from nonneg_cl.module_utils import metrics
from nonneg_cl.module_utils.errors import NclError
from nonneg_cl.module_utils.report import ExperimentReport
from nonneg_cl.module_utils.runner import load_inputs

ARGUMENT_SPEC = cfg_utils.common_spec()
ARGUMENT_SPEC.update(
    source=cfg_utils.section(cfg_utils.SOURCE_OPTIONS),
    reference=dict(type='dict', options=cfg_utils.SOURCE_OPTIONS),
    metrics=dict(type='list', elements='str', required=True,
                 choices=sorted(metrics.METRICS)),
    labels=cfg_utils.section(cfg_utils.LABEL_OPTIONS),
    params=cfg_utils.section(cfg_utils.METRIC_OPTIONS),
)


def main(module):
    result = dict(
        changed=False,
        msg=''
    )

    # Assign variables from properties, for convenience
    names = module.params['metrics']
    seed = module.params['seed']
    params = module.params['params']
    reference_source = module.params['reference']

    if len(set(names)) != len(names):
        module.warn("Duplicate metric names; each is computed once.")
        names = sorted(set(names), key=names.index)

    report = ExperimentReport('evaluate', module.params)
    report.phase('load')
    model, labels, table = load_inputs(module)

    reference = None
    if 'identifiability' in names:
        if reference_source is None:
            reference_source = dict(kind='ground_truth', path=None,
                                    k=table.dim)
        elif reference_source['kind'] != 'ground_truth':
            module.input_path(reference_source['path'], "reference")
        try:
            reference = encoders.load_feature_table(reference_source, model)
        except NclError as e:
            module.fail_json(msg=f"Error loading reference features: {e}")

    if table.nonneg:
        try:
            table.check_nonneg()
        except NclError as e:
            module.fail_json(msg=f"Error in feature table: {e}")

    ctx = metrics.EvalContext(table=table, model=model, labels=labels,
                              reference=reference, seed=seed)
    headline = {}
    for name in names:
        report.phase(name)
        try:
            fragment = metrics.compute(name, ctx, params)
        except NclError as e:
            module.fail_json(msg=f"Error computing {name}: {e}")
        report.add_metric(fragment)
        headline[name] = fragment.value

    report.phase(None)
    files = report.write(module, 'evaluate')
    if not module.check_mode:
        result['changed'] = True

    result['metrics'] = headline
    result['files'] = files
    module.exit_json(**result)
