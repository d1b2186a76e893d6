# Command-line entry point: nonneg-cl SUBCOMMAND CONFIG [options]
#
# Loads the YAML config, applies --set overrides, hands the result to
# the subcommand's main() through an ExperimentModule, and turns the
# ModuleExit that ends every run into printed JSON and an exit code.

__metaclass__ = type
"""
The nonneg-cl command.
"""

import argparse
import importlib
import json
import logging
import sys

from nonneg_cl import __version__
from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils.errors import NclError
from nonneg_cl.module_utils.runner import (
    RC_CONFIG,
    ExperimentModule,
    ModuleExit,
)

log = logging.getLogger(__name__)

SUBCOMMANDS = ('generate', 'train', 'evaluate', 'verify', 'select',
               'compare')


def _pick_subcommand(name):
    """Return the module implementing subcommand 'name'."""

    # We import here, rather than at the top of the code, so that a run
    # only loads what its subcommand needs.
    return importlib.import_module(f'nonneg_cl.modules.{name}')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='nonneg-cl',
        description="Non-negative contrastive learning on exact "
        "latent-class models.")
    parser.add_argument('--version', action='version',
                        version=f'%(prog)s {__version__}')
    parser.add_argument('subcommand', choices=SUBCOMMANDS)
    parser.add_argument('config', help="YAML experiment config")
    parser.add_argument('--set', dest='overrides', action='append',
                        default=[], metavar='KEY=VALUE',
                        help="override a config value, e.g. "
                        "--set train.steps=100")
    parser.add_argument('--output-dir', dest='output_dir',
                        help="write every output file here")
    parser.add_argument('--check', action='store_true',
                        help="validate and report what would be written, "
                        "without writing")
    parser.add_argument('-v', '--verbose', action='count', default=0,
                        help="-v for INFO, -vv for DEBUG logging")
    return parser


def _setup_logging(verbosity):
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, stream=sys.stderr,
        format='%(asctime)s %(levelname)s %(name)s: %(message)s')


def _emit(rc, result):
    print(json.dumps(result, sort_keys=True, indent=2, default=str))
    return rc


def run(argv=None):
    """Run one subcommand. Returns the process exit code."""

    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)

    try:
        params = cfg_utils.load_config(args.config)
        params = cfg_utils.apply_overrides(params, args.overrides)
    except NclError as e:
        return _emit(RC_CONFIG, dict(failed=True,
                                     msg=f"Error reading config: {e}"))

    output_dir = cfg_utils.resolve_output_dir(args.output_dir, params)
    subcommand = _pick_subcommand(args.subcommand)
    log.info("running %s on %s", args.subcommand, args.config)

    try:
        module = ExperimentModule(args.subcommand, subcommand.ARGUMENT_SPEC,
                                  params, check_mode=args.check,
                                  output_dir=output_dir)
        subcommand.main(module)
    except ModuleExit as e:
        return _emit(e.rc, e.result)

    # XXX - main() should always end in exit_json() or fail_json().
    log.error("%s returned without a result", args.subcommand)
    return _emit(1, dict(failed=True,
                         msg=f"{args.subcommand} returned without a result"))


def main():
    sys.exit(run())


if __name__ == '__main__':
    main()
