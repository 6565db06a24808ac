import os

import pytest
import torch

from lmj.polyp import backbone, data, model

CONFIGS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'configs')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long-running end-to-end training runs')


@pytest.fixture
def tiny_encoder():
    torch.manual_seed(0)
    return backbone.build_backbone('TINY')


@pytest.fixture
def toy_set():
    return data.make_toy_set(4, 64, seed=7)


@pytest.fixture
def tiny_config():
    return model.ModelConfig(preset='TINY', image_size=64)


@pytest.fixture
def toy_yaml(tmp_path):
    '''A quick toy run configuration written to a temporary file.'''
    path = tmp_path / 'toy.yaml'
    path.write_text('''\
model:
  preset: TINY
  variant: hfs+rta
  image_size: 64
train:
  batch_size: 2
  epochs: 2
  seed: 3
  deterministic: true
data:
  toy: {n: 2, size: 64, seed: 3}
''')
    return str(path)


def pyramid_like(batch=1, channels=32, size=64, seed=0):
    '''Random feature maps with the shapes of a pyramid for size x size images.'''
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(batch, channels, size // s, size // s, generator=g)
            for s in backbone.STRIDES]


@pytest.fixture
def make_pyramid():
    return pyramid_like
