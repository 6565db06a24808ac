import os

import pytest

from conftest import CONFIGS
from lmj.polyp import config
from lmj.polyp.errors import ConfigurationError


def test_toy_config():
    run = config.load_config(os.path.join(CONFIGS, 'toy.yaml'))
    assert run.model.preset == 'TINY'
    assert run.model.image_size == 64
    assert run.train.epochs == 200 and run.train.batch_size == 4
    assert run.train.lr == 1e-4
    assert run.data.toy == {'n': 4, 'size': 64, 'seed': 7, 'test_n': None}


def test_polyp_config_follows_recipe():
    run = config.load_config(os.path.join(CONFIGS, 'polyp.yaml'))
    assert run.model.image_size == 352
    assert (run.train.lr, run.train.weight_decay, run.train.batch_size,
            run.train.epochs) == (1e-4, 1e-4, 8, 100)
    assert run.train.scales == (0.75, 1.0, 1.25)
    assert set(run.data.train) == {'CVC-ClinicDB', 'Kvasir'}
    assert len(run.data.test) == 5


def test_defaults():
    run = config.RunConfig.from_dict(None)
    assert run.model.preset == 'T' and run.train.epochs == 100
    assert run.data.toy is None


@pytest.mark.parametrize('text', [
    'colour: red\n',
    'model: {preset: T, size: 3}\n',
    'train: {learning_rate: 1}\n',
    'data: {toy: {n: 2, width: 3}}\n',
    'model: [1, 2]\n',
    'train: {epochs: [\n',
])
def test_bad_configs(tmp_path, text):
    path = tmp_path / 'bad.yaml'
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        config.load_config(str(path))


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError, match='nowhere.yaml'):
        config.load_config(str(tmp_path / 'nowhere.yaml'))


def test_round_trip(tmp_path):
    run = config.load_config(os.path.join(CONFIGS, 'toy.yaml'))
    path = config.save_config(run, str(tmp_path / 'copy.yaml'))
    assert config.load_config(path) == run


def test_gradient_clipping_setting(tmp_path):
    path = tmp_path / 'clip.yaml'
    path.write_text('train: {clip_grad_norm: 5}\n')
    assert config.load_config(str(path)).train.clip_grad_norm == 5.
    assert config.load_config(os.path.join(CONFIGS, 'polyp.yaml')).train.clip_grad_norm is None
