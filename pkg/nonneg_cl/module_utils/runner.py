# The object every subcommand's main() is handed.
#
# ExperimentModule plays the part AnsibleModule plays for a playbook
# module: it validates the parameters against the subcommand's
# argument_spec, exposes them as module.params, knows whether this is a
# check run, collects warnings, and ends the run with exit_json() or
# fail_json(). Those raise ModuleExit, which nonneg_cl.cli turns into a
# printed result and a process exit code.

__metaclass__ = type
"""
Parameter validation, output paths and exit handling for subcommands.
"""

import logging
import os

from ansible.module_utils.common.arg_spec import ArgumentSpecValidator

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils.encoders import load_feature_table
from nonneg_cl.module_utils.errors import ConfigInvalid, NclError
from nonneg_cl.module_utils.latent_model import TwoViewModel

log = logging.getLogger(__name__)

# Process exit codes
RC_OK = 0
RC_FAILED = 1
RC_CONFIG = 2


class ModuleExit(Exception):
    """Raised to end a subcommand run."""

    def __init__(self, rc, result):
        self.rc = rc
        self.result = result

    def __str__(self):
        return f'exit {self.rc}: {self.result.get("msg", "")}'


class ExperimentModule:
    def __init__(self, name, argument_spec, params, check_mode=False,
                 output_dir=None):
        self.name = name
        self.check_mode = check_mode
        self.warnings = []

        validator = ArgumentSpecValidator(argument_spec)
        result = validator.validate(params)
        if result.error_messages:
            raise ModuleExit(RC_CONFIG, dict(
                failed=True,
                msg="Invalid configuration: " +
                "; ".join(result.error_messages)))
        self.params = result.validated_parameters
        self.output_dir = output_dir
        if output_dir is not None:
            self.params['output_dir'] = output_dir

    def warn(self, msg):
        log.warning("%s", msg)
        self.warnings.append(msg)

    def _finish(self, result):
        if self.warnings:
            result['warnings'] = list(self.warnings)
        return result

    def exit_json(self, **kwargs):
        result = dict(changed=False, msg='')
        result.update(kwargs)
        raise ModuleExit(RC_OK, self._finish(result))

    def fail_json(self, msg, **kwargs):
        result = dict(failed=True, msg=msg)
        result.update(kwargs)
        raise ModuleExit(RC_FAILED, self._finish(result))

    def fail_config(self, msg, **kwargs):
        """Fail with the configuration-error exit code."""
        result = dict(failed=True, msg=msg)
        result.update(kwargs)
        raise ModuleExit(RC_CONFIG, self._finish(result))

    def output_path(self, name):
        """Absolute path of 'name' inside the output directory.

        Names may not climb out of the directory. Outside check mode the
        directory is created on first use.
        """
        if self.output_dir is None:
            self.fail_config("No output directory: set output_dir, "
                             "NONNEG_CL_OUTPUT_DIR, or --output-dir.")
        root = os.path.realpath(self.output_dir)
        path = os.path.realpath(os.path.join(root, name))
        if os.path.commonpath([root, path]) != root:
            raise ConfigInvalid("output name escapes the output directory",
                                name)
        if not self.check_mode:
            os.makedirs(os.path.dirname(path), exist_ok=True)
        return path

    def input_path(self, path, what):
        """Check that an input file named in the config exists."""
        if path is None:
            self.fail_config(f"No {what} given.")
        if not os.path.isfile(path):
            self.fail_config(f"{what} {path} does not exist.")
        return path


def load_inputs(module, source_key='source'):
    """Model, label map and feature table of a validated config with
    'model', 'labels' and a feature-source section."""

    model_params = dict(module.params['model'])
    if model_params.get('seed') is None:
        model_params['seed'] = module.params['seed']
    try:
        model = cfg_utils.model_from_params(model_params)
        if isinstance(model, TwoViewModel):
            raise ConfigInvalid("metrics need a single-view model")
        labels = cfg_utils.labels_from_params(module.params['labels'], model)
    except NclError as e:
        module.fail_config(msg=f"Error in configuration: {e}")

    source = module.params[source_key]
    if source['kind'] != 'ground_truth':
        module.input_path(source['path'], f"{source_key} {source['kind']}")
    try:
        table = load_feature_table(source, model)
    except ConfigInvalid as e:
        module.fail_config(msg=f"Error in {source_key}: {e}")
    except NclError as e:
        module.fail_json(msg=f"Error loading features: {e}")
    return model, labels, table
