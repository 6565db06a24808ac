# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Reverse attention blocks.

A reverse attention block looks at a pair of adjacent pyramid levels. The
deeper level is aligned to the input width of a transformer stage, run through
that stage, resized to the shallower level and squashed into an attention map
in [0, 1] by a sigmoid bottleneck. Subtracting the map from one gives the
reverse map, which highlights what the deep features do not cover -- mostly
object boundaries. The shallower level is multiplied by the reverse map,
refined by a second bottleneck and added back to itself.

The convolutional variant replaces the transformer stage with plain 3x3
convolutions, as in the reverse attention of CaraNet and PraNet.
'''

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import Attention, Stage, init_weights
from .errors import ConfigurationError, ShapeError


def group_norm(channels):
    '''A GroupNorm with at least four channels per group where possible.'''
    for groups in (8, 4, 2):
        if channels % groups == 0 and channels // groups >= 4:
            return nn.GroupNorm(groups, channels)
    return nn.GroupNorm(1, channels)


class Bottleneck(nn.Module):
    '''Three convolutions: 1x1 reduce, 3x3, 1x1 expand.

    The first two convolutions are followed by group normalization and a relu;
    the last one by final_activation, either 'sigmoid' or 'identity'.

    in_channels: Channels of the input map.
    out_channels: Channels of the output map; defaults to in_channels.
    reduction: The hidden width is out_channels // reduction.
    final_activation: 'sigmoid' or 'identity'.
    zero_init: If True, the last convolution starts at exactly zero.
    '''

    def __init__(self, in_channels, out_channels=None, reduction=4,
                 final_activation='identity', zero_init=False):
        super().__init__()
        if final_activation not in ('sigmoid', 'identity'):
            raise ConfigurationError(
                'unknown bottleneck activation %r' % final_activation)
        out_channels = out_channels or in_channels
        mid = max(1, out_channels // reduction)
        self.final_activation = final_activation
        self.conv0 = nn.Conv2d(in_channels, mid, 1, bias=False)
        self.norm0 = group_norm(mid)
        self.conv1 = nn.Conv2d(mid, mid, 3, padding=1, bias=False)
        self.norm1 = group_norm(mid)
        self.conv2 = nn.Conv2d(mid, out_channels, 1)
        self.apply(init_weights)
        if zero_init:
            nn.init.zeros_(self.conv2.weight)
            nn.init.zeros_(self.conv2.bias)

    @property
    def convs(self):
        return [self.conv0, self.conv1, self.conv2]

    def logits(self, x):
        '''Return the output of the last convolution, before activation.'''
        x = F.relu(self.norm0(self.conv0(x)))
        x = F.relu(self.norm1(self.conv1(x)))
        return self.conv2(x)

    def forward(self, x):
        x = self.logits(x)
        if self.final_activation == 'sigmoid':
            x = torch.sigmoid(x)
        return x


class ReverseBlock(nn.Module):
    '''Shared plumbing for reverse attention over a (shallow, deep) pair.

    Subclasses define transform(), which maps the aligned deep feature to the
    map that bottleneck 1 turns into attention.
    '''

    def __init__(self, channels, in_width, out_width, reduction=4):
        super().__init__()
        self.channels = channels
        self.align = nn.Conv2d(channels, in_width, 1)
        self.bottleneck1 = Bottleneck(out_width, channels, reduction, 'sigmoid')
        self.bottleneck2 = Bottleneck(channels, channels, reduction, 'identity',
                                      zero_init=True)
        self.align.apply(init_weights)

    def transform(self, x):
        raise NotImplementedError

    def attention_map(self, x_deep, size):
        '''Return the attention map for x_deep, resized to size, in [0, 1].'''
        if x_deep.dim() != 4 or x_deep.shape[1] != self.channels:
            raise ShapeError('deep feature should have %d channels, got shape %s' % (
                self.channels, tuple(x_deep.shape)))
        x = self.transform(self.align(x_deep))
        x = F.interpolate(x, size=tuple(size), mode='bilinear', align_corners=False)
        return self.bottleneck1(x)

    def reverse_map(self, x_deep, size):
        '''Return 1 minus the attention map of x_deep at the given size.'''
        return 1 - self.attention_map(x_deep, size)

    def modulate(self, x_shallow, reverse):
        '''Refine x_shallow under a reverse map, keeping a residual path.'''
        return self.bottleneck2(x_shallow * reverse) + x_shallow

    def forward(self, x_shallow, x_deep):
        if x_shallow.dim() != 4 or x_shallow.shape[1] != self.channels:
            raise ShapeError('shallow feature should have %d channels, got shape %s' % (
                self.channels, tuple(x_shallow.shape)))
        if x_deep.shape[0] != x_shallow.shape[0]:
            raise ShapeError('batch sizes differ: %d shallow vs %d deep' % (
                x_shallow.shape[0], x_deep.shape[0]))
        return self.modulate(
            x_shallow, self.reverse_map(x_deep, x_shallow.shape[-2:]))


class RtaBlock(ReverseBlock):
    '''Reverse attention whose deep branch is a transformer stage.

    channels: Common channel width of the pyramid.
    stage_config: StageConfig of the encoder stage the branch imitates.
    in_width: Input width of that stage (the previous stage's embed_dim).
    reduction: Bottleneck reduction ratio.
    stage: If given, an existing Stage to use (and share) as the branch.
    '''

    def __init__(self, channels, stage_config, in_width, reduction=4, stage=None):
        super().__init__(channels, in_width, stage_config.embed_dim, reduction)
        if stage is None:
            stage = Stage(in_width, stage_config)
            stage.apply(init_weights)
        self.stage = stage

    def transform(self, x):
        return self.stage(x)


class RaBlock(ReverseBlock):
    '''Reverse attention whose deep branch is a stack of 3x3 convolutions.

    The first convolution downsamples by two like a stage's patch embedding;
    depth more follow, one for each block of the matching transformer stage.
    '''

    def __init__(self, channels, stage_config, in_width, reduction=4):
        super().__init__(channels, in_width, stage_config.embed_dim, reduction)
        width = stage_config.embed_dim
        layers = [nn.Conv2d(in_width, width, 3, 2, 1, bias=False),
                  group_norm(width), nn.ReLU(inplace=True)]
        for _ in range(stage_config.depth):
            layers.extend([nn.Conv2d(width, width, 3, 1, 1, bias=False),
                           group_norm(width), nn.ReLU(inplace=True)])
        self.convs = nn.Sequential(*layers)
        self.convs.apply(init_weights)

    def transform(self, x):
        return self.convs(x)


class ResidualBlock(nn.Module):
    '''Refinement without reverse attention: bottleneck 2 plus a residual.

    Used for the deepest level, which has no deeper neighbor, and for every
    level when the synthesizer runs without a reverse mechanism.
    '''

    def __init__(self, channels, reduction=4):
        super().__init__()
        self.channels = channels
        self.bottleneck2 = Bottleneck(channels, channels, reduction, 'identity',
                                      zero_init=True)

    def forward(self, x_shallow, x_deep=None):
        return self.bottleneck2(x_shallow) + x_shallow


def count_attention_layers(module):
    '''Count the attention sublayers inside a module.'''
    return sum(isinstance(m, Attention) for m in module.modules())


def reverse_map(block, x_deep, size):
    '''Return the reverse attention map of block for x_deep at size.'''
    return block.reverse_map(x_deep, size)


def apply(block, x_shallow, x_deep):
    '''Refine x_shallow with the reverse attention of x_deep.'''
    return block(x_shallow, x_deep)


def apply_ra_baseline(block, x_shallow, x_deep):
    '''Same as apply, for a convolutional RaBlock.'''
    if not isinstance(block, RaBlock):
        raise ConfigurationError('expected an RaBlock, got %s' % type(block).__name__)
    return block(x_shallow, x_deep)
