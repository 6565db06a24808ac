# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Run configuration files.

A run configuration is a YAML file with up to three sections:

  model:
    preset: T
    variant: hfs+rta
  train:
    lr: 1.0e-4
    epochs: 100
  data:
    root: /data/polyp
    train: [CVC-ClinicDB, Kvasir]
    test: [CVC-ClinicDB, CVC-ColonDB, CVC-300, ETIS-LaribPolypDB, Kvasir]

Missing sections and keys take their defaults, which follow the published
training recipe. A data section with a toy entry ({n, size, seed, test_n})
trains and tests on synthetic samples instead of files on disk.
'''

import dataclasses
import os

import yaml

from . import data
from .errors import ConfigurationError
from .model import ModelConfig
from .training import TrainConfig

TOY_KEYS = ('n', 'size', 'seed', 'test_n')


@dataclasses.dataclass(frozen=True)
class DataConfig(object):
    '''Where samples come from.

    root: Directory holding one subdirectory per dataset.
    train: Names of the datasets whose training split is merged for training.
    test: Names of the datasets evaluated after training.
    train_split: Name of the manifest listing training ids, or None for all.
    test_split: Name of the manifest listing test ids, or None for all.
    toy: If given, a dict with keys n, size, seed and test_n describing a
      synthetic training set (and a test set of test_n samples).
    '''

    root: str = None
    train: tuple = data.TRAIN_DATASETS
    test: tuple = data.DATASETS
    train_split: str = 'train'
    test_split: str = 'test'
    toy: dict = None

    def __post_init__(self):
        object.__setattr__(self, 'train', tuple(self.train))
        object.__setattr__(self, 'test', tuple(self.test))
        if self.toy is not None:
            unknown = sorted(set(self.toy) - set(TOY_KEYS))
            if unknown:
                raise ConfigurationError('unknown toy settings: %s' % ', '.join(unknown))
            toy = dict(n=4, size=64, seed=0, test_n=None)
            toy.update(self.toy)
            object.__setattr__(self, 'toy', toy)

    def to_dict(self):
        values = dataclasses.asdict(self)
        values['train'] = list(values['train'])
        values['test'] = list(values['test'])
        return values

    @classmethod
    def from_dict(cls, values):
        names = set(f.name for f in dataclasses.fields(cls))
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigurationError('unknown data settings: %s' % ', '.join(unknown))
        return cls(**values)


@dataclasses.dataclass(frozen=True)
class RunConfig(object):
    '''Model, training and data settings of one run.'''

    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    def to_dict(self):
        return dict(model=self.model.to_dict(),
                    train=self.train.to_dict(),
                    data=self.data.to_dict())

    @classmethod
    def from_dict(cls, values):
        values = values or {}
        if not isinstance(values, dict):
            raise ConfigurationError('a run configuration must be a mapping')
        unknown = sorted(set(values) - set(('model', 'train', 'data')))
        if unknown:
            raise ConfigurationError('unknown configuration sections: %s' % ', '.join(unknown))
        return cls(model=ModelConfig.from_dict(values.get('model') or {}),
                   train=TrainConfig.from_dict(values.get('train') or {}),
                   data=DataConfig.from_dict(values.get('data') or {}))


def load_config(path):
    '''Read a RunConfig from a YAML file.'''
    if not os.path.isfile(path):
        raise ConfigurationError('%s: no such configuration file' % path)
    with open(path) as handle:
        try:
            values = yaml.safe_load(handle)
        except yaml.YAMLError as err:
            raise ConfigurationError('%s: cannot parse configuration (%s)' % (path, err))
    try:
        return RunConfig.from_dict(values)
    except TypeError as err:
        raise ConfigurationError('%s: %s' % (path, err))


def save_config(config, path):
    '''Write a RunConfig as YAML.'''
    with open(path, 'w') as handle:
        yaml.safe_dump(config.to_dict(), handle, default_flow_style=False)
    return path
