# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Decode fused pyramid features into a single-channel logit map.'''

import dataclasses

import torch
import torch.nn as nn
import torch.nn.functional as F

from .backbone import FeaturePyramid
from .errors import ShapeError
from .fusion import FusionWeights


@dataclasses.dataclass(frozen=True)
class DecoderConfig(object):
    '''Configuration of the decoder.

    channels: Common channel width of the pyramid; the head sees 4 * channels.
    fuse_level: Pyramid level whose resolution the fused maps are resized to.
      Level 1 (stride 4) keeps the most boundary detail.
    '''

    channels: int = 128
    fuse_level: int = 1

    @property
    def head_channels(self):
        return 4 * self.channels


class Decoder(nn.Module):
    '''Per level fusion of (Xi, Xi,output), concatenation, conv and upsample.'''

    def __init__(self, config):
        super().__init__()
        self.config = config
        self.fusions = nn.ModuleList(FusionWeights(2) for _ in range(4))
        self.head = nn.Conv2d(config.head_channels, 1, 3, padding=1)

    def forward(self, pyramid, refined, size=None):
        pyramid = FeaturePyramid(pyramid)
        refined = FeaturePyramid(refined)
        for i, (x, y) in enumerate(zip(pyramid, refined)):
            if x.shape != y.shape:
                raise ShapeError('level %d: pyramid %s and refined %s differ' % (
                    i + 1, tuple(x.shape), tuple(y.shape)))
        target = pyramid.sizes[self.config.fuse_level - 1]
        fused = []
        for fusion, x, y in zip(self.fusions, pyramid, refined):
            z = fusion([x, y])
            if tuple(z.shape[-2:]) != target:
                z = F.interpolate(z, size=target, mode='bilinear', align_corners=False)
            fused.append(z)
        logits = self.head(torch.cat(fused, dim=1))
        if size is None:
            size = tuple(s * 4 for s in pyramid.sizes[0])
        return F.interpolate(logits, size=tuple(size), mode='bilinear', align_corners=False)


def decode(decoder, pyramid, hfs_outputs):
    '''Return the (batch, 1, H, W) logit map for a pyramid and its refinement.'''
    return decoder(pyramid, hfs_outputs)
