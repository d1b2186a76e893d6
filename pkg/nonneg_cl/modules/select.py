#!/usr/bin/python
__metaclass__ = type

# Rank feature dimensions by expected activation and check what the
# top-ranked ones are worth.

DOCUMENTATION = '''
---
module: select
short_description: Select feature dimensions by expected activation.
description:
  - Ranks the dimensions of a feature table by expected activation and
    compares three selections on retrieval mAP and linear-probe
    accuracy. The selections are every dimension, the top C(n) by
    expected activation, and C(n) dimensions drawn at random,
    averaged over C(random_trials) seeds.
  - Writes select.json and select.csv.
options:
  seed:
    type: int
    required: true
  output_dir:
    type: path
  model:
    type: dict
    required: true
  source:
    description:
      - Where the features come from. See M(evaluate).
    type: dict
  labels:
    type: dict
  n:
    description:
      - Number of dimensions to select. Defaults to the number of
        latent classes.
    type: int
  random_trials:
    description:
      - Number of random selections to average over.
    type: int
    default: 20
  require_beats_random:
    description:
      - Fail unless the expected-activation selection scores strictly
        higher than the mean random selection on both mAP and probe
        accuracy. Otherwise a shortfall is only a warning.
    type: bool
    default: false
  padding:
    description:
      - Append noise dimensions to the table before ranking.
    type: dict
    suboptions:
      dims:
        type: int
        default: 0
      scale:
        description:
          - Noise is uniform on [0, scale).
        type: float
        default: 1.0e-3
  params:
    description:
      - Metric settings. C(map_k), C(probe_learning_rate) and
        C(probe_steps) are read.
    type: dict
'''

EXAMPLES = '''
# k = 2m: five real dimensions and five noise dimensions.
seed: 0
output_dir: out/select
model:
  preset: one_hot
  m: 5
  n_samples: 50
source:
  kind: ground_truth
padding:
  dims: 5
'''

RETURN = '''
---
ranking:
  description: Dimensions in order of decreasing expected activation.
  type: list
  returned: Success.
selected:
  description: The top C(n) dimensions.
  type: list
  returned: Success.
comparison:
  description:
    - mAP and probe accuracy for each selection.
  type: dict
  returned: Success.
  sample:
    all: {map: 1.0, probe_accuracy: 1.0, dims: 10}
    expected_activation: {map: 1.0, probe_accuracy: 1.0, dims: 5}
    random: {map: 0.55, probe_accuracy: 0.62, dims: 5, trials: 20,
            map_wins: 20, probe_wins: 19}
files:
  description: Files written (or, in check mode, that would be written).
  type: list
'''

import numpy as np

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils import metrics
from nonneg_cl.module_utils.errors import NclError
from nonneg_cl.module_utils.report import ExperimentReport, write_table
from nonneg_cl.module_utils.runner import load_inputs

ARGUMENT_SPEC = cfg_utils.common_spec()
ARGUMENT_SPEC.update(
    source=cfg_utils.section(cfg_utils.SOURCE_OPTIONS),
    labels=cfg_utils.section(cfg_utils.LABEL_OPTIONS),
    n=dict(type='int'),
    random_trials=dict(type='int', default=20),
    require_beats_random=dict(type='bool', default=False),
    padding=cfg_utils.section(dict(
        dims=dict(type='int', default=0),
        scale=dict(type='float', default=1e-3),
    )),
    params=cfg_utils.section(cfg_utils.METRIC_OPTIONS),
)


def pad_with_noise(table, dims, scale, seed):
    """Append 'dims' columns of Uniform(0, scale) noise."""
    if dims == 0:
        return table
    rng = np.random.default_rng(seed)
    noise = rng.uniform(0.0, scale, size=(table.n_samples, dims))
    return table.with_values(np.hstack([table.values, noise]))


def score_selection(table, dims, labels, params):
    """(mAP, probe test accuracy) of the table restricted to 'dims'."""
    values = table.values[:, dims]
    retrieval = metrics.retrieval_map(values, None, labels,
                                      k=params['map_k'], allow_zero=True)
    train = np.arange(0, values.shape[0], 2)
    test = np.arange(1, values.shape[0], 2)
    probe = metrics.linear_probe(
        values[train], labels[train], values[test], labels[test],
        metrics.ProbeConfig(learning_rate=params['probe_learning_rate'],
                            steps=params['probe_steps']))
    return retrieval.map, probe.test_accuracy


def main(module):
    result = dict(
        changed=False,
        msg=''
    )

    # Assign variables from properties, for convenience
    seed = module.params['seed']
    n = module.params['n']
    trials = module.params['random_trials']
    strict = module.params['require_beats_random']
    padding = module.params['padding']
    params = module.params['params']

    report = ExperimentReport('select', module.params)
    report.phase('load')
    model, labels, table = load_inputs(module)
    if padding['dims'] < 0 or padding['scale'] < 0:
        module.fail_config(msg="padding.dims and padding.scale must be "
                           "non-negative.")
    table = pad_with_noise(table, padding['dims'], padding['scale'], seed)

    if n is None:
        n = model.m
    if not 1 <= n <= table.dim:
        module.fail_config(msg=f"Cannot select {n} of {table.dim} "
                           "dimensions.")
    if n == table.dim:
        module.warn("Selecting every dimension; the comparison is trivial.")
    if trials < 1:
        module.fail_config(msg="random_trials must be at least 1.")

    report.phase('rank')
    try:
        ea = metrics.expected_activation(table, model.marginal,
                                         absolute=not table.nonneg)
    except NclError as e:
        module.fail_json(msg=f"Error computing expected activation: {e}")
    ranking = metrics.select_top(ea, table.dim)
    selected = ranking[:n]
    report.add_metric(metrics.MetricFragment(
        'expected_activation', selected, per_item=ea.values.tolist(),
        config={'n': n, 'absolute': not table.nonneg,
                'skipped_rows': ea.skipped}))

    report.phase('score')
    sample_labels = labels.sample_labels(model)
    rows = []
    try:
        all_map, all_probe = score_selection(
            table, list(range(table.dim)), sample_labels, params)
        ea_map, ea_probe = score_selection(table, selected, sample_labels,
                                           params)
        random_scores = []
        for trial in range(trials):
            dims = metrics.random_selection(table.dim, n, [seed, trial])
            random_scores.append(score_selection(table, dims, sample_labels,
                                                 params))
            rows.append((f'random_{trial}', ' '.join(map(str, dims)))
                        + random_scores[-1])
    except NclError as e:
        module.fail_json(msg=f"Error scoring selections: {e}")
    random_map, random_probe = np.mean(random_scores, axis=0).tolist()
    map_wins = int(sum(ea_map > s[0] for s in random_scores))
    probe_wins = int(sum(ea_probe > s[1] for s in random_scores))

    comparison = {
        'all': dict(map=all_map, probe_accuracy=all_probe, dims=table.dim),
        'expected_activation': dict(map=ea_map, probe_accuracy=ea_probe,
                                    dims=n),
        'random': dict(map=random_map, probe_accuracy=random_probe, dims=n,
                       trials=trials, map_wins=map_wins,
                       probe_wins=probe_wins),
    }
    for name, scores in comparison.items():
        report.add_metric(metrics.MetricFragment(
            f'retrieval_map_{name}', scores['map'],
            config={'k': params['map_k']}))
        report.add_metric(metrics.MetricFragment(
            f'linear_probe_{name}', scores['probe_accuracy']))
    beats_random = ea_map > random_map and ea_probe > random_probe
    if not beats_random:
        module.warn("Expected-activation selection does not beat random "
                    "selection on every score.")
    report.extra['ranking'] = ranking
    report.extra['selected'] = selected
    report.extra['comparison'] = comparison
    report.phase(None)

    csv_path = report.output(module, 'select.csv')
    files = [csv_path]
    if not module.check_mode:
        write_table(csv_path, ('selection', 'dims', 'map', 'probe_accuracy'),
                    [('all', ' '.join(map(str, range(table.dim))),
                      all_map, all_probe),
                     ('expected_activation', ' '.join(map(str, selected)),
                      ea_map, ea_probe),
                     ('random_mean', '', random_map, random_probe)] + rows)
        result['changed'] = True
    files.extend(report.write(module, 'select'))

    result['ranking'] = ranking
    result['selected'] = selected
    result['comparison'] = comparison
    result['files'] = files
    if strict and not beats_random:
        result.pop('msg')
        module.fail_json(msg="Expected-activation selection does not beat "
                         f"random selection (mAP {ea_map:.4g} vs "
                         f"{random_map:.4g}, probe accuracy {ea_probe:.4g} "
                         f"vs {random_probe:.4g}).", **result)
    module.exit_json(**result)
