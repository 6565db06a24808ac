# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''The hierarchical feature synthesizer.

The synthesizer refines each pyramid level Xi with the reverse attention of
its deeper neighbor X(i+1). The deepest level has no neighbor and is refined
by a bottleneck alone. Blocks are independent of one another: output i only
ever sees Xi and X(i+1).
'''

import dataclasses

import torch.nn as nn

from .backbone import FeaturePyramid
from .errors import ConfigurationError, ShapeError
from .rta import RaBlock, ResidualBlock, RtaBlock

MECHANISMS = ('none', 'ra', 'rta')


@dataclasses.dataclass(frozen=True)
class HfsConfig(object):
    '''Configuration of the synthesizer.

    mechanism: 'none' (bottleneck refinement only), 'ra' (convolutional
      reverse attention) or 'rta' (reverse transformer attention).
    channels: Common channel width of the pyramid.
    share_stage_weights: Reuse the encoder's stages inside the RTA blocks.
    reduction: Bottleneck reduction ratio.
    depths: Block counts of the stages inside the three reverse blocks, for
      the pairs (X1, X2), (X2, X3), (X3, X4). None uses the encoder's.
    '''

    mechanism: str = 'rta'
    channels: int = 128
    share_stage_weights: bool = False
    reduction: int = 4
    depths: tuple = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ConfigurationError('unknown mechanism %r (known: %s)' % (
                self.mechanism, ', '.join(MECHANISMS)))
        if self.depths is not None and len(self.depths) != 3:
            raise ConfigurationError(
                'need 3 reverse stage depths, got %r' % (self.depths, ))


class Synthesizer(nn.Module):
    '''Four refinement blocks, one per pyramid level.

    config: An HfsConfig.
    encoder: The Encoder whose stage architectures the reverse blocks copy.
    '''

    def __init__(self, config, encoder):
        super().__init__()
        self.config = config
        C, r = config.channels, config.reduction
        blocks = []
        for i in range(3):
            deep = encoder.stages[i + 1]
            stage_config = deep.config
            if config.depths is not None and not config.share_stage_weights:
                stage_config = stage_config.with_depth(config.depths[i])
            if config.mechanism == 'rta':
                shared = deep if config.share_stage_weights else None
                blocks.append(RtaBlock(C, stage_config, deep.in_channels, r, shared))
            elif config.mechanism == 'ra':
                blocks.append(RaBlock(C, stage_config, deep.in_channels, r))
            else:
                blocks.append(ResidualBlock(C, r))
        blocks.append(ResidualBlock(C, r))
        self.blocks = nn.ModuleList(blocks)

    def forward(self, pyramid):
        levels = FeaturePyramid(pyramid)
        if levels.channels != self.config.channels:
            raise ShapeError('pyramid has %d channels, synthesizer expects %d' % (
                levels.channels, self.config.channels))
        deeper = list(levels[1:]) + [None]
        return [block(x, deep) for block, x, deep in zip(self.blocks, levels, deeper)]


def synthesize(hfs, pyramid):
    '''Return the four refined feature maps X1,output .. X4,output.'''
    return hfs(pyramid)
