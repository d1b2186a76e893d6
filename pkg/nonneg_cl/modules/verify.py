#!/usr/bin/python
__metaclass__ = type

# Run the property-check suite and fail if anything does not hold.

DOCUMENTATION = '''
---
module: verify
short_description: Check the NCL/NMF equivalence and its consequences.
description:
  - Runs the verification suite on exactly-computable models and writes
    one row per check, with the measured value and the tolerance used,
    to verify.json and verify.csv.
  - The suite covers rotation symmetry of unconstrained features and its
    breaking under non-negativity, the NMF/NCL equivalence constant,
    optimality and one-hot structure of the closed-form features, Bayes
    agreement and linear probing, recovery and uniqueness over random
    restarts, and the feature-correlation bound on overlap models.
  - Fails (exit code 1) if any check fails. The reports are written
    either way.
options:
  seed:
    description:
      - Seeds the random models, feature draws and restarts.
    type: int
    required: true
  output_dir:
    type: path
  model:
    description:
      - Size of the one-hot model used by the recovery checks. Only
        C(m) and C(n_samples) are read.
    type: dict
  suite:
    description:
      - Suite settings.
    type: dict
    suboptions:
      skip:
        description:
          - Check groups to leave out.
        type: list
        elements: str
        choices: [ rotation, equivalence, optimality, one_hot, bayes,
                   uniqueness, orthogonality ]
      restarts:
        description:
          - Random restarts per trainer in the uniqueness checks.
        type: int
        default: 20
      exact_tolerance:
        type: float
        default: 1.0e-10
      alignment_tolerance:
        type: float
        default: 1.0e-3
'''

EXAMPLES = '''
seed: 0
output_dir: out/verify
model:
  m: 5
  n_samples: 50

# Quick run without the restart-heavy group:
#   nonneg-cl verify configs/verify.yml --set 'suite.skip=[uniqueness]'
'''

RETURN = '''
---
passed:
  description: Whether every check passed.
  type: bool
  returned: Always.
failed_checks:
  description: Names of the checks that failed.
  type: list
  returned: Always.
checks:
  description: Number of checks run.
  type: int
files:
  description: Files written (or, in check mode, that would be written).
  type: list
'''

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils import theorems
from nonneg_cl.module_utils.errors import NclError
from nonneg_cl.module_utils.report import ExperimentReport, write_table

SUITE_OPTIONS = dict(
    skip=dict(type='list', elements='str', default=[],
              choices=list(theorems.SUITE_NAMES)),
    random_models=dict(type='int', default=10),
    feature_draws=dict(type='int', default=10),
    restarts=dict(type='int', default=20),
    learning_rate=dict(type='float', default=5.0),
    nmf_learning_rate=dict(type='float', default=0.1),
    steps=dict(type='int', default=4000),
    convergence_tolerance=dict(type='float', default=1e-13),
    exact_tolerance=dict(type='float', default=1e-10),
    alignment_tolerance=dict(type='float', default=1e-3),
    epsilons=dict(type='list', elements='float', default=[0.0, 0.01, 0.05]),
)

ARGUMENT_SPEC = dict(
    seed=dict(type='int', required=True),
    output_dir=dict(type='path'),
    model=dict(type='dict', options=dict(
        m=dict(type='int', default=5),
        n_samples=dict(type='int', default=50),
    )),
    suite=cfg_utils.section(SUITE_OPTIONS),
)


def main(module):
    result = dict(
        changed=False,
        msg=''
    )

    # Assign variables from properties, for convenience
    seed = module.params['seed']
    model = module.params['model'] or {}
    suite = dict(module.params['suite'])

    suite['skip'] = tuple(suite['skip'])
    suite['epsilons'] = tuple(suite['epsilons'])
    cfg = theorems.SuiteConfig(seed=seed,
                               m=model.get('m') or 5,
                               n_samples=model.get('n_samples') or 50,
                               **suite)
    if cfg.n_samples < cfg.m:
        module.fail_config(msg=f"A one-hot model needs n_samples >= m, "
                           f"got {cfg.n_samples} < {cfg.m}.")
    if cfg.skip:
        module.warn(f"Skipping check groups: {', '.join(cfg.skip)}.")

    report = ExperimentReport('verify', module.params)
    report.phase('suite')
    try:
        checks = theorems.run_suite(cfg)
    except NclError as e:
        module.fail_json(msg=f"Error running verification suite: {e}")
    report.add_theorems(checks)
    report.phase(None)

    csv_path = report.output(module, 'verify.csv')
    files = [csv_path]
    if not module.check_mode:
        write_table(csv_path, ('name', 'measured', 'tolerance', 'passed'),
                    [(c.name, c.measured, c.tolerance, c.passed)
                     for c in checks])
        result['changed'] = True
    files.extend(report.write(module, 'verify'))

    failed = [c.name for c in checks if not c.passed]
    result['passed'] = not failed
    result['failed_checks'] = failed
    result['checks'] = len(checks)
    result['files'] = files
    if failed:
        result['msg'] = (f"{len(failed)} of {len(checks)} checks failed: "
                         f"{', '.join(failed)}")
        module.fail_json(**result)
    module.exit_json(**result)
