import json

import pytest

from nonneg_cl import __version__, cli


def test_missing_config_file(tmp_path, capsys):
    rc = cli.run(['generate', str(tmp_path / 'missing.yml')])
    assert rc == 2
    result = json.loads(capsys.readouterr().out)
    assert result['failed']
    assert 'config' in result['msg']


def test_unknown_subcommand(tmp_path):
    with pytest.raises(SystemExit) as e:
        cli.run(['frobnicate', str(tmp_path / 'x.yml')])
    assert e.value.code == 2


def test_version(capsys):
    with pytest.raises(SystemExit) as e:
        cli.run(['--version'])
    assert e.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_unknown_key_is_rejected(run_cli):
    rc, result = run_cli('generate', {'seed': 0, 'colour': 'blue',
                                      'model': {'preset': 'one_hot', 'm': 2,
                                                'n_samples': 4}})
    assert rc == 2
    assert 'colour' in result['msg']


def test_missing_seed_is_rejected(run_cli):
    rc, result = run_cli('generate', {'model': {'preset': 'one_hot',
                                                'm': 2, 'n_samples': 4}})
    assert rc == 2
    assert 'seed' in result['msg']


def test_bad_override(run_cli):
    rc, result = run_cli('generate', {'seed': 0}, '--set', 'nonsense')
    assert rc == 2
    assert 'override' in result['msg']


def test_no_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.delenv('NONNEG_CL_OUTPUT_DIR', raising=False)
    path = tmp_path / 'gen.yml'
    path.write_text("seed: 0\nmodel: {preset: one_hot, m: 2, n_samples: 4}\n")
    rc = cli.run(['generate', str(path)])
    assert rc == 2
    assert 'output' in json.loads(capsys.readouterr().out)['msg']
