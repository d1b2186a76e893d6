import json

import numpy as np
import pytest

ONE_HOT = {'preset': 'one_hot', 'm': 5, 'n_samples': 50}


def test_evaluate_ground_truth(run_cli, out_dir):
    rc, result = run_cli('evaluate', {
        'seed': 0, 'model': ONE_HOT,
        'metrics': ['sparsity', 'correlation', 'class_consistency',
                    'retrieval_map', 'identifiability', 'bayes_agreement',
                    'eigen_spectrum', 'activated_dims']})
    assert rc == 0
    metrics = result['metrics']
    assert metrics['sparsity'] == pytest.approx(0.8)
    assert metrics['correlation'] == pytest.approx(0.0, abs=1e-12)
    assert metrics['class_consistency'] == 1.0
    assert metrics['retrieval_map'] == 1.0
    assert metrics['identifiability'] == pytest.approx(0.0, abs=1e-12)
    assert metrics['bayes_agreement'] == 1.0
    assert metrics['eigen_spectrum'] == 5
    assert metrics['activated_dims'] == 1.0

    report = json.loads((out_dir / 'evaluate.json').read_text())
    assert [m['name'] for m in report['metrics']] == sorted(metrics)
    assert len(report['config_hash']) == 64


def test_unknown_metric_is_a_config_error(run_cli):
    rc, result = run_cli('evaluate', {'seed': 0, 'model': ONE_HOT,
                                      'metrics': ['sparsity', 'mig']})
    assert rc == 2
    assert 'mig' in result['msg']


def test_duplicate_metric_warns(run_cli):
    rc, result = run_cli('evaluate', {'seed': 0, 'model': ONE_HOT,
                                      'metrics': ['sparsity', 'sparsity']})
    assert rc == 0
    assert list(result['metrics']) == ['sparsity']
    assert result['warnings']


def test_evaluate_csv_source(run_cli, tmp_path):
    path = tmp_path / 'features.csv'
    np.savetxt(path, np.ones((50, 3)), delimiter=',')
    rc, result = run_cli('evaluate', {
        'seed': 0, 'model': ONE_HOT,
        'source': {'kind': 'csv', 'path': str(path)},
        'metrics': ['sparsity', 'correlation']})
    assert rc == 0
    assert result['metrics']['sparsity'] == 0.0
    assert result['metrics']['correlation'] == pytest.approx(1.0)


def test_evaluate_missing_source_file(run_cli, tmp_path):
    rc, result = run_cli('evaluate', {
        'seed': 0, 'model': ONE_HOT,
        'source': {'kind': 'csv', 'path': str(tmp_path / 'nope.csv')},
        'metrics': ['sparsity']})
    assert rc == 2
    assert 'does not exist' in result['msg']


def test_evaluate_sepin_of_one_hot_phi(run_cli):
    # A zero row still identifies its class, so no single dimension
    # carries information the others lack.
    rc, result = run_cli('evaluate', {
        'seed': 0, 'model': {'preset': 'one_hot', 'm': 4, 'n_samples': 8},
        'metrics': ['sepin', 'sepin_normalized'],
        'params': {'sepin_draws': 20, 'sepin_k': 2}})
    assert rc == 0
    assert result['metrics']['sepin'] == 0.0
    assert result['metrics']['sepin_normalized'] == 0.0


def test_evaluate_two_view_model_is_rejected(run_cli):
    rc, result = run_cli('evaluate', {
        'seed': 0, 'model': {'two_view': True, 'preset': 'one_hot', 'm': 2,
                             'n_visual': 2, 'n_language': 2},
        'metrics': ['sparsity']})
    assert rc == 2
