# Experiment configuration files.
#
# A config is a YAML document. Each subcommand declares an argument_spec
# in the same dict language AnsibleModule takes, and the runner checks
# the document against it with ansible-core's ArgumentSpecValidator.
# The fragments below are the pieces several subcommands share.
#
# Every constant with a cited default appears here as a named key:
#   sparsity_threshold / activation_threshold 1e-5, l1_lambda 0.01,
#   temperature 0.5 in cosine mode, map_k 10, convergence_window 50,
#   backtrack_factor 0.5, betas (0.9, 0.999), eps 1e-8.

__metaclass__ = type
"""
Loading, overriding, hashing and shared argument specs for configs.
"""

import copy
import hashlib
import json
import os

import yaml

from nonneg_cl.module_utils import metrics
from nonneg_cl.module_utils.errors import ConfigInvalid
from nonneg_cl.module_utils.latent_model import (
    LabelMap,
    build_model,
    build_two_view_model,
)
from nonneg_cl.module_utils.reparam import KINDS as TRANSFORM_KINDS
from nonneg_cl.module_utils.training import OPTIMIZERS, SCHEDULES

# The only environment variable read anywhere.
OUTPUT_DIR_ENV = 'NONNEG_CL_OUTPUT_DIR'


def load_config(path):
    """Read a YAML config. An empty file is an empty config."""
    try:
        with open(path) as f:
            data = yaml.safe_load(f)
    except OSError as e:
        raise ConfigInvalid(f"cannot read config file: {e}", str(path))
    except yaml.YAMLError as e:
        raise ConfigInvalid(f"config is not valid YAML: {e}", str(path))
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigInvalid("config must be a mapping at the top level",
                            type(data).__name__)
    return data


def apply_overrides(params, overrides):
    """Apply 'dotted.key=value' overrides. Values are parsed as YAML
    scalars, so '--set train.steps=10' sets an int."""

    params = copy.deepcopy(params)
    for item in overrides or ():
        key, sep, raw = item.partition('=')
        if not sep or not key:
            raise ConfigInvalid("override must look like key=value", item)
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigInvalid(f"cannot parse override value: {e}", item)

        node = params
        parts = key.split('.')
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            elif not isinstance(child, dict):
                raise ConfigInvalid(f"cannot override inside '{part}', "
                                    "which is not a mapping", item)
            node = child
        node[parts[-1]] = value
    return params


def resolve_output_dir(flag, params):
    """--output-dir, then $NONNEG_CL_OUTPUT_DIR, then the config."""
    if flag:
        return flag
    env = os.getenv(OUTPUT_DIR_ENV)
    if env:
        return env
    return params.get('output_dir')


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(',', ':'),
                      default=str)


def config_hash(params):
    """SHA-256 of the canonical JSON of a validated config."""
    return hashlib.sha256(canonical_json(params).encode('utf-8')).hexdigest()


#
# Shared argument-spec fragments
#

MODEL_OPTIONS = dict(
    preset=dict(type='str',
                choices=['explicit', 'one_hot', 'overlap', 'random']),
    m=dict(type='int'),
    n_samples=dict(type='int'),
    class_prior=dict(type='list', elements='float'),
    conditional=dict(type='raw'),
    embedding=dict(type='raw'),
    epsilon=dict(type='float'),
    n_bridge=dict(type='int'),
    concentration=dict(type='float'),
    seed=dict(type='int'),
    name=dict(type='str'),
    # Two-view models
    two_view=dict(type='bool', default=False),
    n_visual=dict(type='int'),
    n_language=dict(type='int'),
    conditional_visual=dict(type='raw'),
    conditional_language=dict(type='raw'),
)

LABEL_OPTIONS = dict(
    groups=dict(type='list', elements='list'),
)

ENCODER_OPTIONS = dict(
    kind=dict(type='str', default='tabular', choices=['tabular', 'mlp']),
    k=dict(type='int'),
    transform=dict(type='str', default='relu',
                   choices=['none'] + list(TRANSFORM_KINDS)),
    hidden=dict(type='list', elements='int', default=[]),
)

OBJECTIVE_OPTIONS = dict(
    kind=dict(type='str', default='spectral',
              choices=['spectral', 'infonce', 'nmf', 'mmncl', 'ce', 'nce']),
    l1=dict(type='bool', default=False),
    l1_lambda=dict(type='float', default=0.01),
    temperature=dict(type='float'),
    cosine=dict(type='bool', default=False),
)

TRAIN_OPTIONS = dict(
    optimizer=dict(type='str', default='gd', choices=list(OPTIMIZERS)),
    learning_rate=dict(type='float', default=0.1),
    schedule=dict(type='str', default='constant', choices=list(SCHEDULES)),
    steps=dict(type='int', default=1000),
    batch_size=dict(type='int', default=0),
    negatives=dict(type='int', default=16),
    tolerance=dict(type='float', default=0.0),
    convergence_window=dict(type='int', default=50),
    backtracking=dict(type='bool', default=False),
    backtrack_factor=dict(type='float', default=0.5),
    momentum=dict(type='float', default=0.9),
    betas=dict(type='list', elements='float', default=[0.9, 0.999]),
    eps=dict(type='float', default=1e-8),
    snapshot_every=dict(type='int', default=0),
)

METRIC_OPTIONS = dict(
    sparsity_threshold=dict(type='float',
                            default=metrics.SPARSITY_THRESHOLD),
    activation_threshold=dict(type='float',
                              default=metrics.SPARSITY_THRESHOLD),
    weighted=dict(type='bool', default=True),
    map_k=dict(type='int', default=10),
    sepin_k=dict(type='int', default=1),
    sepin_draws=dict(type='int', default=200),
    sepin_batch_size=dict(type='int', default=64),
    sepin_negatives=dict(type='int', default=16),
    sepin_critic=dict(type='str', default='plugin',
                      choices=list(metrics.SEPIN_CRITICS)),
    sepin_denominator=dict(type='str', default='mean',
                           choices=list(metrics.SEPIN_DENOMINATORS)),
    probe_learning_rate=dict(type='float', default=0.1),
    probe_steps=dict(type='int', default=3000),
)

SOURCE_OPTIONS = dict(
    kind=dict(type='str', default='ground_truth',
              choices=['ground_truth', 'checkpoint', 'csv']),
    path=dict(type='path'),
    k=dict(type='int'),
)


def common_spec():
    """Top-level keys every subcommand accepts."""
    return dict(
        seed=dict(type='int', required=True),
        output_dir=dict(type='path'),
        model=dict(type='dict', required=True, options=MODEL_OPTIONS),
    )


def section(options):
    """A nested section whose defaults apply even when it is omitted."""
    return dict(type='dict', apply_defaults=True, options=options)


def model_from_params(params):
    """Build the model a validated 'model' section describes."""
    spec = {k: v for k, v in params.items() if v is not None}
    if spec.pop('two_view', False):
        return build_two_view_model(spec)
    return build_model(spec)


def labels_from_params(params, model):
    """The LabelMap of a 'labels' section; one label per latent class
    when no groups are given."""
    groups = (params or {}).get('groups')
    if not groups:
        return LabelMap.identity(model.m)
    labels = LabelMap.from_groups([[int(c) for c in g] for g in groups])
    if labels.m != model.m:
        raise ConfigInvalid("label groups do not cover the model's classes",
                            (labels.m, model.m))
    return labels
