import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

ONE_HOT = {'preset': 'one_hot', 'm': 2, 'n_samples': 4}


def test_generate_writes_model_files(run_cli, out_dir):
    rc, result = run_cli('generate', {'seed': 0, 'model': ONE_HOT})
    assert rc == 0
    assert result['changed']
    assert result['model']['equivalence_constant'] == pytest.approx(2.0)
    assert result['model']['class_overlap'] == 0.0

    phi = np.loadtxt(out_dir / 'phi.csv', delimiter=',')
    assert_allclose(phi[0], [np.sqrt(2), 0.0])
    normalized = np.loadtxt(out_dir / 'normalized.csv', delimiter=',')
    assert_allclose(normalized[:2, :2], 0.5 * np.ones((2, 2)))

    report = json.loads((out_dir / 'generate.json').read_text())
    assert report['subcommand'] == 'generate'
    assert 'phi.csv' in report['outputs']
    assert (out_dir / 'generate.timings.json').exists()


def test_generate_check_mode_writes_nothing(run_cli, out_dir):
    rc, result = run_cli('generate', {'seed': 0, 'model': ONE_HOT},
                         '--check')
    assert rc == 0
    assert not result['changed']
    assert any(f.endswith('phi.csv') for f in result['files'])
    assert not out_dir.exists()


def test_generate_same_seed_same_report(run_cli, out_dir):
    config = {'seed': 4, 'model': {'preset': 'random', 'm': 3,
                                   'n_samples': 9}}
    run_cli('generate', config)
    first = (out_dir / 'generate.json').read_text()
    first_phi = (out_dir / 'phi.csv').read_text()
    run_cli('generate', config)
    assert (out_dir / 'generate.json').read_text() == first
    assert (out_dir / 'phi.csv').read_text() == first_phi


def test_generate_two_view(run_cli, out_dir):
    rc, result = run_cli('generate', {
        'seed': 0, 'model': {'two_view': True, 'preset': 'one_hot', 'm': 2,
                             'n_visual': 4, 'n_language': 6}})
    assert rc == 0
    assert result['model']['n_language'] == 6
    joint = np.loadtxt(out_dir / 'joint.csv', delimiter=',')
    assert joint.shape == (4, 6)
    assert joint.sum() == pytest.approx(1.0)


def test_generate_bad_model_is_a_config_error(run_cli):
    rc, result = run_cli('generate', {'seed': 0,
                                      'model': {'preset': 'one_hot',
                                                'm': 2}})
    assert rc == 2
    assert result['failed']


def test_generate_set_override(run_cli, out_dir):
    rc, result = run_cli('generate', {'seed': 0, 'model': ONE_HOT},
                         '--set', 'model.m=4', '--set', 'model.n_samples=8')
    assert rc == 0
    assert result['model']['m'] == 4


def test_generate_output_dir_flag(run_cli, tmp_path):
    elsewhere = tmp_path / 'elsewhere'
    rc, _ = run_cli('generate', {'seed': 0, 'model': ONE_HOT},
                    '--output-dir', str(elsewhere))
    assert rc == 0
    assert (elsewhere / 'phi.csv').exists()
