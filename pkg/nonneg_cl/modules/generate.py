#!/usr/bin/python
__metaclass__ = type

# Build a latent-class model and write out its exact population
# quantities.

DOCUMENTATION = '''
---
module: generate
short_description: Build a latent-class model and write its matrices.
description:
  - Builds a latent-class model from a preset or from explicit arrays,
    and writes the co-occurrence matrix, its normalized form, the
    marginal and the closed-form optimal features as headerless CSV.
  - With C(model.two_view), builds a two-view model and writes the joint
    and normalized cross matrices plus the optimal features of both
    views.
options:
  seed:
    description:
      - Global seed. Random presets draw from it unless C(model.seed)
        is set.
    type: int
    required: true
  output_dir:
    description:
      - Directory for every file this run writes. Overridden by
        C(NONNEG_CL_OUTPUT_DIR) and C(--output-dir).
    type: path
  model:
    description:
      - The model specification.
    type: dict
    required: true
    suboptions:
      preset:
        description:
          - How to build the model. C(explicit) uses C(class_prior) and
            C(conditional) as given.
        type: str
        choices: [ explicit, one_hot, overlap, random ]
      m:
        description:
          - Number of latent classes.
        type: int
      n_samples:
        description:
          - Number of samples.
        type: int
      epsilon:
        description:
          - Target class overlap for the C(overlap) preset.
        type: float
      two_view:
        description:
          - Build a two-view model instead.
        type: bool
        default: false
  k:
    description:
      - Width of the written optimal features. Extra columns are zero.
        Defaults to m.
    type: int
'''

EXAMPLES = '''
# configs/one_hot.yml
seed: 0
output_dir: out/one_hot
model:
  preset: one_hot
  m: 5
  n_samples: 50

# Same thing from the command line, with an override:
#   nonneg-cl generate configs/one_hot.yml --set model.m=4
'''

RETURN = '''
---
model:
  description:
    - Summary of the generated model.
  type: dict
  returned: Success.
  sample:
    name: one_hot
    m: 5
    n_samples: 50
    class_overlap: 0.0
    equivalence_constant: 5.0
    spectral_radius: 1.0
files:
  description: Files written (or, in check mode, that would be written).
  type: list
'''

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils import objectives
from nonneg_cl.module_utils.errors import NclError
from nonneg_cl.module_utils.latent_model import (
    TwoViewModel,
    class_overlap,
    cooccurrence,
    ground_truth_phi,
    two_view_ground_truth,
)
from nonneg_cl.module_utils.report import ExperimentReport, write_matrix

ARGUMENT_SPEC = cfg_utils.common_spec()
ARGUMENT_SPEC.update(
    k=dict(type='int'),
)


def main(module):
    result = dict(
        changed=False,
        msg=''
    )

    # Assign variables from properties, for convenience
    model_params = dict(module.params['model'])
    seed = module.params['seed']
    k = module.params['k']

    if model_params.get('seed') is None:
        model_params['seed'] = seed

    try:
        model = cfg_utils.model_from_params(model_params)
    except NclError as e:
        module.fail_config(msg=f"Error building model: {e}")

    report = ExperimentReport('generate', module.params)
    matrices = {}
    if isinstance(model, TwoViewModel):
        phi_v, phi_l = two_view_ground_truth(model)
        matrices['joint.csv'] = model.joint
        matrices['normalized.csv'] = model.normalized
        matrices['marginal_visual.csv'] = model.marginal_visual
        matrices['marginal_language.csv'] = model.marginal_language
        matrices['phi_visual.csv'] = phi_v.values
        matrices['phi_language.csv'] = phi_l.values
        summary = dict(
            name=model.name, m=model.m, n_visual=model.n_visual,
            n_language=model.n_language,
            equivalence_constant=objectives.mm_equivalence_constant(model),
        )
    else:
        try:
            phi = ground_truth_phi(model, k=k)
        except NclError as e:
            module.fail_config(msg=f"Error computing optimal features: {e}")
        co = cooccurrence(model)
        matrices['cooccurrence.csv'] = co.raw
        matrices['normalized.csv'] = co.normalized
        matrices['marginal.csv'] = model.marginal
        matrices['class_prior.csv'] = model.class_prior
        matrices['conditional.csv'] = model.conditional
        matrices['phi.csv'] = phi.values
        summary = dict(
            name=model.name, m=model.m, n_samples=model.n_samples,
            equivalence_constant=objectives.equivalence_constant(model),
            spectral_radius=co.spectral_radius(),
        )
        if model.m >= 2:
            summary['class_overlap'] = class_overlap(model)
        else:
            module.warn("Single-class model: class overlap is undefined.")

    report.extra['model'] = summary
    files = []
    for name, matrix in matrices.items():
        path = report.output(module, name)
        files.append(path)
        if not module.check_mode:
            write_matrix(path, matrix)
            result['changed'] = True
    files.extend(report.write(module, 'generate'))

    result['model'] = summary
    result['files'] = files
    module.exit_json(**result)
