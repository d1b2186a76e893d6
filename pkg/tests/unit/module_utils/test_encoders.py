import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from nonneg_cl.module_utils import encoders
from nonneg_cl.module_utils.encoders import (
    CHECKPOINT_MAGIC,
    MlpEncoder,
    TabularEncoder,
    build_encoder,
    export_csv,
    load_checkpoint,
    load_feature_table,
    save_checkpoint,
)
from nonneg_cl.module_utils.errors import (
    CheckpointFormatError,
    ConfigInvalid,
    IndexOutOfRange,
    ShapeMismatch,
    StaleForwardState,
)
from nonneg_cl.module_utils.latent_model import ground_truth_phi
from nonneg_cl.module_utils.objectives import spectral_loss_population


def test_tabular_encoder_reproduces_its_table(two_class):
    phi = ground_truth_phi(two_class)
    enc = TabularEncoder(phi.values)
    out = enc.encode_all(4)
    assert_array_equal(out.values, phi.values)
    assert not out.nonneg


def test_relu_output_row():
    enc = TabularEncoder([[-1.0, 2.0]], transform='relu')
    out = enc.encode(np.array([0]))
    assert_array_equal(out.values, [[0.0, 2.0]])
    assert out.nonneg


def test_initialize_under_transform_is_non_negative():
    enc = TabularEncoder.initialize(20, 4, transform='relu', seed=0)
    assert np.all(enc.weights >= 0)
    assert enc.dim == 4 and enc.n_inputs == 20


def test_zero_mlp_with_relu_outputs_zeros():
    sizes = [3, 4, 2]
    params = {'W0': np.zeros((3, 4)), 'b0': np.zeros(4),
              'W1': np.zeros((4, 2)), 'b1': np.zeros(2)}
    enc = MlpEncoder(sizes, transform='relu', params=params)
    out = enc.encode(np.random.default_rng(0).normal(size=(5, 3)))
    assert_array_equal(out.values, np.zeros((5, 2)))


def test_tabular_index_errors():
    enc = TabularEncoder(np.ones((3, 2)))
    with pytest.raises(IndexOutOfRange):
        enc.encode(np.array([0, 3]))
    with pytest.raises(ShapeMismatch):
        enc.encode(np.array([0.5]))


def test_tabular_gradient_scatters_and_accumulates():
    enc = TabularEncoder(np.ones((3, 2)))
    enc.encode(np.array([0, 2, 0]))
    grad = enc.grad_params(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]))
    assert_array_equal(grad['weights'],
                       [[6.0, 8.0], [0.0, 0.0], [3.0, 4.0]])


def test_relu_blocks_gradient_of_negative_entry():
    enc = TabularEncoder([[-1.0, 2.0]], transform='relu')
    enc.encode(np.array([0]))
    grad = enc.grad_params(np.ones((1, 2)))['weights']
    assert_array_equal(grad, [[0.0, 1.0]])


def test_trick_passes_gradient_through_negative_entry():
    enc = TabularEncoder([[-1.0]], transform='relu_forward_gelu_backward')
    assert enc.encode(np.array([0])).values[0, 0] == 0.0
    grad = enc.grad_params(np.ones((1, 1)))['weights']
    assert grad[0, 0] == pytest.approx(-0.0833155, abs=1e-6)


def test_gradient_without_forward_pass():
    enc = TabularEncoder(np.ones((2, 2)))
    with pytest.raises(StaleForwardState):
        enc.grad_params(np.ones((2, 2)))


def test_gradient_after_set_params_is_stale():
    enc = TabularEncoder(np.ones((2, 2)))
    enc.encode()
    enc.set_params({'weights': np.zeros((2, 2))})
    with pytest.raises(StaleForwardState):
        enc.grad_params(np.ones((2, 2)))


def test_uncached_encode_leaves_no_state():
    enc = TabularEncoder(np.ones((2, 2)))
    enc.encode(cache=False)
    with pytest.raises(StaleForwardState):
        enc.grad_params(np.ones((2, 2)))


def test_set_params_rejects_shape_change():
    enc = TabularEncoder(np.ones((2, 2)))
    with pytest.raises(ShapeMismatch):
        enc.set_params({'weights': np.ones((3, 2))})
    with pytest.raises(ShapeMismatch):
        enc.set_params({'bias': np.ones(2)})


def _loss(enc, model):
    return spectral_loss_population(enc.encode_all(model.n_samples,
                                                   cache=False),
                                    model).loss


def _check_param_gradients(enc, model, rtol=1e-4, atol=1e-7, h=1e-6):
    table = enc.encode_all(model.n_samples, cache=True)
    report = spectral_loss_population(table, model, with_grad=True)
    analytic = enc.grad_params(report.grad)
    base = enc.params()
    for name, value in base.items():
        numeric = np.zeros_like(value)
        for idx in np.ndindex(value.shape):
            for sign in (1, -1):
                shifted = dict(base)
                bumped = value.copy()
                bumped[idx] += sign * h
                shifted[name] = bumped
                enc.set_params(shifted)
                numeric[idx] += sign * _loss(enc, model) / (2 * h)
        enc.set_params(base)
        assert_allclose(analytic[name], numeric, rtol=rtol, atol=atol,
                        err_msg=name)


def test_tabular_relu_gradient_matches_finite_differences(random_model):
    rng = np.random.default_rng(3)
    weights = rng.uniform(0.1, 1.0, size=(12, 3))
    weights *= rng.choice([-1.0, 1.0], size=weights.shape)
    enc = TabularEncoder(weights, transform='relu')
    _check_param_gradients(enc, random_model)


def test_mlp_gradient_matches_finite_differences(random_model):
    enc = MlpEncoder([12, 6, 3], transform='softplus', seed=5,
                     embedding=np.eye(12))
    _check_param_gradients(enc, random_model)


def test_mlp_without_transform_gradient(random_model):
    enc = MlpEncoder([12, 5, 4, 3], seed=6)
    _check_param_gradients(enc, random_model)


def test_mlp_pre_projector_tap():
    enc = MlpEncoder([8, 6, 3], seed=0)
    hidden = enc.encode(np.arange(8), tap='pre_projector')
    assert hidden.values.shape == (8, 6)
    with pytest.raises(ConfigInvalid):
        enc.encode(np.arange(8), tap='logits')


def test_mlp_coordinate_inputs():
    enc = MlpEncoder([2, 4, 3], seed=0)
    out = enc.encode(np.array([[0.1, 0.2], [0.3, 0.4]]))
    assert out.values.shape == (2, 3)
    with pytest.raises(ShapeMismatch):
        enc.encode(np.ones((2, 5)))


def test_mlp_rejects_bad_sizes():
    with pytest.raises(ConfigInvalid):
        MlpEncoder([4])
    with pytest.raises(ShapeMismatch):
        MlpEncoder([4, 2], embedding=np.eye(3))


def test_build_encoder():
    enc = build_encoder({'kind': 'mlp', 'k': 3, 'hidden': [5],
                         'transform': 'relu'}, 7, seed=1)
    assert enc.layer_sizes == [7, 5, 3]
    assert enc.transform.kind == 'relu'
    tab = build_encoder({'kind': 'tabular', 'k': 2, 'transform': 'none'}, 4,
                        seed=1)
    assert tab.transform is None
    with pytest.raises(ConfigInvalid):
        build_encoder({'kind': 'cnn', 'k': 2}, 4)


def test_tabular_checkpoint_round_trip(tmp_path):
    enc = TabularEncoder.initialize(6, 3, transform='softplus', seed=2)
    path = tmp_path / 'enc.ckpt'
    save_checkpoint(enc, path)
    loaded = load_checkpoint(path)
    assert loaded.kind == 'tabular'
    assert loaded.transform.kind == 'softplus'
    assert loaded.seed == 2
    assert_array_equal(loaded.encode_all(6).values, enc.encode_all(6).values)


def test_mlp_checkpoint_round_trip(tmp_path):
    embedding = np.random.default_rng(0).normal(size=(9, 4))
    enc = MlpEncoder([4, 5, 2], transform='relu', seed=3,
                     embedding=embedding)
    path = tmp_path / 'mlp.ckpt'
    save_checkpoint(enc, path)
    loaded = load_checkpoint(path)
    assert loaded.layer_sizes == [4, 5, 2]
    assert_array_equal(loaded.embedding, embedding)
    for name, value in enc.params().items():
        assert_array_equal(loaded.params()[name], value)
    assert_array_equal(loaded.encode_all(9).values, enc.encode_all(9).values)


def _raw_checkpoint(path, header, payload=b''):
    blob = json.dumps(header).encode('utf-8')
    with open(path, 'wb') as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack('<I', len(blob)))
        f.write(blob)
        f.write(payload)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / 'bad.ckpt'
    path.write_bytes(b'NOTACKPT' + b'\0' * 16)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_newer_major_version(tmp_path):
    path = tmp_path / 'v2.ckpt'
    header = {'kind': 'tabular', 'format_version': '2.0', 'transform': None,
              'seed': 0, 'params': [{'name': 'weights', 'shape': [1, 1]}]}
    _raw_checkpoint(path, header, np.zeros(1, dtype='<f8').tobytes())
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_checkpoint_minor_version_is_accepted(tmp_path):
    path = tmp_path / 'v1_3.ckpt'
    header = {'kind': 'tabular', 'format_version': '1.3', 'transform': None,
              'seed': 0, 'params': [{'name': 'weights', 'shape': [1, 2]}]}
    _raw_checkpoint(path, header,
                    np.array([1.5, -2.0], dtype='<f8').tobytes())
    assert_array_equal(load_checkpoint(path).weights, [[1.5, -2.0]])


def test_checkpoint_truncated(tmp_path):
    path = tmp_path / 'short.ckpt'
    header = {'kind': 'tabular', 'format_version': '1.0', 'transform': None,
              'seed': 0, 'params': [{'name': 'weights', 'shape': [2, 2]}]}
    _raw_checkpoint(path, header, np.zeros(3, dtype='<f8').tobytes())
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_export_csv_and_reload(tmp_path, two_class):
    enc = TabularEncoder(ground_truth_phi(two_class).values, transform='relu')
    path = tmp_path / 'features.csv'
    table = export_csv(enc, path)
    loaded = load_feature_table({'kind': 'csv', 'path': str(path)}, two_class)
    assert_array_equal(loaded.values, table.values)
    assert loaded.nonneg


def test_feature_table_sources(tmp_path, two_class):
    truth = load_feature_table({'kind': 'ground_truth', 'k': 3}, two_class)
    assert truth.dim == 3

    enc = TabularEncoder(truth.values)
    path = tmp_path / 'enc.ckpt'
    save_checkpoint(enc, path)
    from_ckpt = load_feature_table({'kind': 'checkpoint', 'path': str(path)},
                                   two_class)
    assert_array_equal(from_ckpt.values, truth.values)

    with pytest.raises(ConfigInvalid):
        load_feature_table({'kind': 'hdf5'}, two_class)


def test_feature_csv_row_count_is_checked(tmp_path, two_class):
    path = tmp_path / 'short.csv'
    np.savetxt(path, np.ones((3, 2)), delimiter=',')
    with pytest.raises(ShapeMismatch):
        load_feature_table({'kind': 'csv', 'path': str(path)}, two_class)


def test_encoder_kinds():
    assert encoders.KINDS == ('tabular', 'mlp')
