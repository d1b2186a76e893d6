# Run subcommands through the command-line entry point.

import json

import pytest
import yaml

from nonneg_cl import cli


@pytest.fixture
def run_cli(tmp_path, capsys, monkeypatch):
    """run_cli(subcommand, config_dict, *extra_args) -> (rc, result)

    Outputs go to tmp_path/out unless the config or the extra arguments
    say otherwise.
    """
    monkeypatch.delenv('NONNEG_CL_OUTPUT_DIR', raising=False)

    def run(subcommand, config, *args):
        config = dict(config)
        config.setdefault('output_dir', str(tmp_path / 'out'))
        path = tmp_path / f'{subcommand}.yml'
        path.write_text(yaml.safe_dump(config))
        capsys.readouterr()
        rc = cli.run([subcommand, str(path)] + list(args))
        return rc, json.loads(capsys.readouterr().out)

    return run


@pytest.fixture
def out_dir(tmp_path):
    return tmp_path / 'out'
