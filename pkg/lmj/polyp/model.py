# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''The full segmentation model: encoder, synthesizer and decoder.'''

import dataclasses
import logging

import torch
import torch.nn as nn

from . import data
from .backbone import build_backbone, load_weights, save_weights
from .decoder import Decoder, DecoderConfig
from .errors import ConfigurationError, IngestionError
from .hfs import HfsConfig, Synthesizer

# size presets and the backbone each one uses.
SIZE_PRESETS = {'T': 'B0', 'S': 'B2', 'M': 'B4', 'L': 'B5', 'TINY': 'TINY'}

# published parameter totals of the four sizes.
PUBLISHED_PARAMETERS = {'T': 8.4e6, 'S': 56.2e6, 'M': 192.6e6, 'L': 250.8e6}

# block counts of the transformer stages inside the three reverse blocks.
RTA_DEPTHS = {
    'T': (2, 2, 3),
    'S': (4, 8, 4),
    'M': (16, 54, 6),
    'L': (12, 80, 6),
    'TINY': (1, 1, 1),
}

# ablation variants and the synthesizer mechanism each one uses.
VARIANTS = {'base': None, 'hfs': 'none', 'hfs+ra': 'ra', 'hfs+rta': 'rta'}

# (HFS, RA, RTA) component flags of each variant.
COMPONENTS = {
    'base': (False, False, False),
    'hfs': (True, False, False),
    'hfs+ra': (True, True, False),
    'hfs+rta': (True, False, True),
}


@dataclasses.dataclass(frozen=True)
class ModelConfig(object):
    '''Everything needed to rebuild a model.

    preset: Size preset, one of T, S, M, L or TINY.
    variant: Ablation variant, one of base, hfs, hfs+ra or hfs+rta.
    channels: Common pyramid width; None means 32 for TINY, else 128.
    image_size: Side length of training and inference images.
    share_stage_weights: Reuse encoder stages inside the RTA blocks.
    freeze_backbone: Do not train the encoder stages.
    reduction: Bottleneck reduction ratio.
    rta_depths: Block counts of the three reverse stages; None uses the
      preset's table.
    drop_path_rate: Stochastic depth rate of the deepest encoder block.
    '''

    preset: str = 'T'
    variant: str = 'hfs+rta'
    channels: int = None
    image_size: int = 352
    share_stage_weights: bool = False
    freeze_backbone: bool = False
    reduction: int = 4
    rta_depths: tuple = None
    drop_path_rate: float = 0.

    def __post_init__(self):
        preset = str(self.preset).upper()
        if preset not in SIZE_PRESETS:
            raise ConfigurationError('unknown size preset %r (known: %s)' % (
                self.preset, ', '.join(SIZE_PRESETS)))
        object.__setattr__(self, 'preset', preset)
        if self.variant not in VARIANTS:
            raise ConfigurationError('unknown variant %r (known: %s)' % (
                self.variant, ', '.join(VARIANTS)))
        if self.channels is not None and self.channels < 4:
            raise ConfigurationError('channels %r is too small' % (self.channels, ))
        if self.image_size < 32 or self.image_size % 32:
            raise ConfigurationError(
                'image_size %r is not a positive multiple of 32' % (self.image_size, ))
        if self.rta_depths is not None:
            object.__setattr__(self, 'rta_depths', tuple(self.rta_depths))

    @property
    def backbone(self):
        return SIZE_PRESETS[self.preset]

    @property
    def width(self):
        if self.channels is not None:
            return self.channels
        return 32 if self.preset == 'TINY' else 128

    @property
    def depths(self):
        return self.rta_depths or RTA_DEPTHS[self.preset]

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    def to_dict(self):
        values = dataclasses.asdict(self)
        if values['rta_depths'] is not None:
            values['rta_depths'] = list(values['rta_depths'])
        return values

    @classmethod
    def from_dict(cls, values):
        names = set(f.name for f in dataclasses.fields(cls))
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigurationError('unknown model settings: %s' % ', '.join(unknown))
        return cls(**values)


class RTAFormer(nn.Module):
    '''Encoder, hierarchical feature synthesizer and decoder.'''

    def __init__(self, config):
        super().__init__()
        self.config = config
        C = config.width
        self.encoder = build_backbone(config.backbone, C, config.drop_path_rate)
        mechanism = VARIANTS[config.variant]
        self.hfs = None
        if mechanism is not None:
            self.hfs = Synthesizer(HfsConfig(
                mechanism=mechanism,
                channels=C,
                share_stage_weights=config.share_stage_weights,
                reduction=config.reduction,
                depths=config.depths), self.encoder)
        self.decoder = Decoder(DecoderConfig(channels=C))
        if config.freeze_backbone:
            for p in self.encoder.stages.parameters():
                p.requires_grad_(False)

    def forward(self, images):
        pyramid = self.encoder(images)
        # without a synthesizer each level is fused with itself.
        refined = pyramid if self.hfs is None else self.hfs(pyramid)
        return self.decoder(pyramid, refined, images.shape[-2:])


def build(config, seed=None, device=None):
    '''Build a model from a ModelConfig.

    config: A ModelConfig.
    seed: If given, seed torch before initializing so builds are repeatable.
    device: Device to build on. 'meta' builds without allocating storage,
      which is enough for counting parameters.
    '''
    if seed is not None:
        torch.manual_seed(seed)
    if device is None:
        model = RTAFormer(config)
    else:
        with torch.device(device):
            model = RTAFormer(config)
    logging.info('built %s/%s with %d parameters',
                 config.preset, config.variant, count_parameters(model, trainable=False))
    return model


def forward(model, images):
    '''Return (batch, 1, H, W) logits for (batch, 3, H, W) images.'''
    return model(images)


def count_parameters(model, trainable=True):
    '''Count the scalars in a model's (trainable) parameters.'''
    return sum(p.numel() for p in model.parameters()
               if p.requires_grad or not trainable)


def save_checkpoint(model, path, **extra):
    '''Write a self-describing checkpoint for a model.'''
    manifest = dict(extra)
    manifest.update(
        preset=model.config.preset,
        channels=model.config.width,
        config=model.config.to_dict(),
        mean=list(data.MEAN),
        std=list(data.STD))
    save_weights(model, path, manifest)
    return path


def load_checkpoint(path, device='cpu'):
    '''Rebuild a model from a checkpoint written by save_checkpoint.'''
    manifest, tensors = load_weights(path, map_location=device)
    if 'config' not in manifest:
        raise IngestionError('%s: archive has no model configuration' % path)
    model = RTAFormer(ModelConfig.from_dict(manifest['config']))
    model.load_state_dict(tensors)
    logging.info('%s: loaded %s/%s', path, model.config.preset, model.config.variant)
    return model.to(device)
