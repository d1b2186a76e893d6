import pytest

from nonneg_cl.module_utils import config as cfg_utils
from nonneg_cl.module_utils.errors import ConfigInvalid
from nonneg_cl.module_utils.latent_model import (
    LatentClassModel,
    TwoViewModel,
)


def test_load_config(tmp_path):
    path = tmp_path / 'exp.yml'
    path.write_text("seed: 3\nmodel:\n  preset: one_hot\n  m: 2\n")
    assert cfg_utils.load_config(path) == {
        'seed': 3, 'model': {'preset': 'one_hot', 'm': 2}}


def test_empty_config_is_empty(tmp_path):
    path = tmp_path / 'empty.yml'
    path.write_text("")
    assert cfg_utils.load_config(path) == {}


@pytest.mark.parametrize('text', ["- 1\n- 2\n", "seed: [1\n"])
def test_bad_config(tmp_path, text):
    path = tmp_path / 'bad.yml'
    path.write_text(text)
    with pytest.raises(ConfigInvalid):
        cfg_utils.load_config(path)


def test_missing_config(tmp_path):
    with pytest.raises(ConfigInvalid):
        cfg_utils.load_config(tmp_path / 'nope.yml')


def test_overrides_are_typed_and_nested():
    params = {'seed': 0, 'train': {'steps': 100}}
    new = cfg_utils.apply_overrides(params, [
        'train.steps=10', 'train.learning_rate=0.5', 'model.preset=random',
        'encoder.hidden=[4, 4]'])
    assert new['train'] == {'steps': 10, 'learning_rate': 0.5}
    assert new['model'] == {'preset': 'random'}
    assert new['encoder'] == {'hidden': [4, 4]}
    assert params['train'] == {'steps': 100}


@pytest.mark.parametrize('override', ['seed', '=3', 'seed.x=1'])
def test_bad_overrides(override):
    with pytest.raises(ConfigInvalid):
        cfg_utils.apply_overrides({'seed': 0}, [override])


def test_output_dir_precedence(monkeypatch):
    params = {'output_dir': 'from_config'}
    monkeypatch.delenv(cfg_utils.OUTPUT_DIR_ENV, raising=False)
    assert cfg_utils.resolve_output_dir(None, params) == 'from_config'
    monkeypatch.setenv(cfg_utils.OUTPUT_DIR_ENV, 'from_env')
    assert cfg_utils.resolve_output_dir(None, params) == 'from_env'
    assert cfg_utils.resolve_output_dir('from_flag', params) == 'from_flag'


def test_config_hash_ignores_key_order():
    a = {'seed': 1, 'model': {'m': 2, 'preset': 'one_hot'}}
    b = {'model': {'preset': 'one_hot', 'm': 2}, 'seed': 1}
    assert cfg_utils.config_hash(a) == cfg_utils.config_hash(b)
    assert len(cfg_utils.config_hash(a)) == 64
    assert cfg_utils.config_hash(a) != cfg_utils.config_hash({'seed': 2})


def test_model_from_params():
    model = cfg_utils.model_from_params({'preset': 'one_hot', 'm': 2,
                                         'n_samples': 4, 'epsilon': None})
    assert isinstance(model, LatentClassModel)
    two_view = cfg_utils.model_from_params({
        'two_view': True, 'preset': 'one_hot', 'm': 2, 'n_visual': 4,
        'n_language': 6})
    assert isinstance(two_view, TwoViewModel)


def test_labels_from_params(one_hot):
    assert cfg_utils.labels_from_params(None, one_hot).label_count == 5
    labels = cfg_utils.labels_from_params({'groups': [[0, 1], [2, 3, 4]]},
                                          one_hot)
    assert labels.label_count == 2
    with pytest.raises(ConfigInvalid):
        cfg_utils.labels_from_params({'groups': [[0, 1], [2]]}, one_hot)
