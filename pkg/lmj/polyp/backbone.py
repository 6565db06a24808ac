# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''A pyramid transformer encoder in the PVTv2 layout.

The encoder runs four stages. Each stage embeds its input with an overlapping
strided convolution, applies a stack of transformer blocks whose attention
works on a spatially reduced copy of the tokens, and normalizes the result.
Stage outputs are projected to a common channel width by their own 3x3
convolution, giving a four-level feature pyramid at strides 4, 8, 16 and 32.

References:
  "PVT v2: Improved Baselines with Pyramid Vision Transformer"
    W. Wang et al., 2022.
'''

import dataclasses
import logging
import math
import pickle

import torch
import torch.nn as nn
from timm.layers import DropPath, trunc_normal_

from .errors import ConfigurationError, IngestionError, ShapeError

WEIGHTS_FORMAT = 'rtaformer-weights-v1'

# cumulative downsampling of the four pyramid levels.
STRIDES = (4, 8, 16, 32)


@dataclasses.dataclass(frozen=True)
class StageConfig(object):
    '''Hyperparameters for one encoder stage.

    embed_dim: Number of channels produced by the stage.
    num_heads: Number of attention heads; must divide embed_dim.
    depth: Number of transformer blocks.
    sr_ratio: Spatial reduction factor applied to keys and values.
    patch_stride: Downsampling factor of the patch embedding (4 or 2).
    mlp_ratio: Expansion factor of the feed-forward layers.
    '''

    embed_dim: int
    num_heads: int
    depth: int
    sr_ratio: int
    patch_stride: int
    mlp_ratio: float

    def __post_init__(self):
        if self.embed_dim < 1 or self.num_heads < 1:
            raise ConfigurationError(
                'stage needs positive width and heads, got %d/%d' % (
                    self.embed_dim, self.num_heads))
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                'embed_dim %d is not divisible by num_heads %d' % (
                    self.embed_dim, self.num_heads))
        if self.depth < 1:
            raise ConfigurationError('stage depth %d < 1' % self.depth)
        if self.sr_ratio < 1:
            raise ConfigurationError('sr_ratio %d < 1' % self.sr_ratio)
        if self.patch_stride not in (2, 4):
            raise ConfigurationError(
                'patch_stride %d is not 2 or 4' % self.patch_stride)

    @property
    def patch_size(self):
        return 7 if self.patch_stride == 4 else 3

    def with_depth(self, depth):
        '''Return a copy of this config with a different block count.'''
        return dataclasses.replace(self, depth=depth)


@dataclasses.dataclass(frozen=True)
class BackbonePreset(object):
    '''A named set of four stage configurations.'''

    name: str
    stages: tuple

    def __post_init__(self):
        if len(self.stages) != 4:
            raise ConfigurationError(
                '%s: need exactly 4 stages, got %d' % (self.name, len(self.stages)))
        if self.strides != STRIDES:
            raise ConfigurationError(
                '%s: stage strides compose to %s, not %s' % (
                    self.name, self.strides, STRIDES))

    @property
    def strides(self):
        strides, total = [], 1
        for stage in self.stages:
            total *= stage.patch_stride
            strides.append(total)
        return tuple(strides)

    @property
    def embed_dims(self):
        return tuple(s.embed_dim for s in self.stages)

    @property
    def depths(self):
        return tuple(s.depth for s in self.stages)


def _preset(name, dims, heads, depths, mlp_ratios, sr_ratios=(8, 4, 2, 1)):
    return BackbonePreset(name, tuple(
        StageConfig(embed_dim=d, num_heads=h, depth=n, sr_ratio=s,
                    patch_stride=4 if i == 0 else 2, mlp_ratio=m)
        for i, (d, h, n, m, s) in enumerate(
            zip(dims, heads, depths, mlp_ratios, sr_ratios))))


PRESETS = {
    'B0': _preset('B0', (32, 64, 160, 256), (1, 2, 5, 8), (2, 2, 2, 2), (8, 8, 4, 4)),
    'B2': _preset('B2', (64, 128, 320, 512), (1, 2, 5, 8), (3, 4, 6, 3), (8, 8, 4, 4)),
    'B4': _preset('B4', (64, 128, 320, 512), (1, 2, 5, 8), (3, 8, 27, 3), (8, 8, 4, 4)),
    'B5': _preset('B5', (64, 128, 320, 512), (1, 2, 5, 8), (3, 6, 40, 3), (4, 4, 4, 4)),
    'TINY': _preset('TINY', (16, 32, 64, 128), (1, 2, 4, 8), (1, 1, 1, 1), (4, 4, 4, 4)),
}


def get_preset(preset):
    '''Look up a backbone preset by name, or pass a BackbonePreset through.'''
    if isinstance(preset, BackbonePreset):
        return preset
    key = str(preset).upper()
    if key not in PRESETS:
        raise ConfigurationError('unknown backbone preset %r (known: %s)' % (
            preset, ', '.join(sorted(PRESETS))))
    return PRESETS[key]


def init_weights(m):
    '''Initialize a module the way PVTv2 does.'''
    if isinstance(m, nn.Linear):
        trunc_normal_(m.weight, std=.02)
        if m.bias is not None:
            nn.init.zeros_(m.bias)
    elif isinstance(m, nn.LayerNorm):
        nn.init.ones_(m.weight)
        nn.init.zeros_(m.bias)
    elif isinstance(m, nn.Conv2d):
        fan_out = m.kernel_size[0] * m.kernel_size[1] * m.out_channels // m.groups
        nn.init.normal_(m.weight, 0, math.sqrt(2. / fan_out))
        if m.bias is not None:
            nn.init.zeros_(m.bias)


class OverlapPatchEmbed(nn.Module):
    '''Embed a feature map into tokens with an overlapping strided conv.'''

    def __init__(self, in_channels, embed_dim, patch_size, stride):
        super().__init__()
        self.proj = nn.Conv2d(in_channels, embed_dim, patch_size, stride,
                              padding=patch_size // 2)
        self.norm = nn.LayerNorm(embed_dim)

    def forward(self, x):
        x = self.proj(x)
        _, _, H, W = x.shape
        return self.norm(x.flatten(2).transpose(1, 2)), H, W


class Attention(nn.Module):
    '''Multi-head attention whose keys and values come from a reduced grid.'''

    def __init__(self, dim, num_heads, sr_ratio=1):
        super().__init__()
        self.num_heads = num_heads
        self.scale = (dim // num_heads) ** -0.5
        self.sr_ratio = sr_ratio
        self.q = nn.Linear(dim, dim)
        self.kv = nn.Linear(dim, 2 * dim)
        self.proj = nn.Linear(dim, dim)
        if sr_ratio > 1:
            self.sr = nn.Conv2d(dim, dim, sr_ratio, sr_ratio)
            self.norm = nn.LayerNorm(dim)

    def forward(self, x, H, W):
        B, N, C = x.shape
        h = self.num_heads
        q = self.q(x).reshape(B, N, h, C // h).permute(0, 2, 1, 3)

        # grids already smaller than the reduction window are attended in full.
        kv = x
        if self.sr_ratio > 1 and H >= self.sr_ratio and W >= self.sr_ratio:
            kv = self.sr(x.transpose(1, 2).reshape(B, C, H, W))
            kv = self.norm(kv.flatten(2).transpose(1, 2))
        kv = self.kv(kv).reshape(B, -1, 2, h, C // h).permute(2, 0, 3, 1, 4)
        k, v = kv[0], kv[1]

        attn = (q @ k.transpose(-2, -1)) * self.scale
        attn = attn.softmax(dim=-1)
        return self.proj((attn @ v).transpose(1, 2).reshape(B, N, C))


class Mlp(nn.Module):
    '''Feed-forward layers with a depthwise conv between them.

    The depthwise conv is what carries positional information, so no explicit
    position embeddings are needed and any input size works.
    '''

    def __init__(self, dim, hidden):
        super().__init__()
        self.fc1 = nn.Linear(dim, hidden)
        self.dwconv = nn.Conv2d(hidden, hidden, 3, 1, 1, groups=hidden)
        self.act = nn.GELU()
        self.fc2 = nn.Linear(hidden, dim)

    def forward(self, x, H, W):
        x = self.fc1(x)
        B, N, C = x.shape
        x = self.dwconv(x.transpose(1, 2).reshape(B, C, H, W))
        return self.fc2(self.act(x.flatten(2).transpose(1, 2)))


class Block(nn.Module):
    '''A pre-norm transformer block.'''

    def __init__(self, dim, num_heads, mlp_ratio, sr_ratio, drop_path=0.):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim, eps=1e-6)
        self.attn = Attention(dim, num_heads, sr_ratio)
        self.drop_path = DropPath(drop_path) if drop_path > 0 else nn.Identity()
        self.norm2 = nn.LayerNorm(dim, eps=1e-6)
        self.mlp = Mlp(dim, int(dim * mlp_ratio))

    def forward(self, x, H, W):
        x = x + self.drop_path(self.attn(self.norm1(x), H, W))
        return x + self.drop_path(self.mlp(self.norm2(x), H, W))


class Stage(nn.Module):
    '''One encoder stage, mapping (B, in, H, W) to (B, embed, H/s, W/s).'''

    def __init__(self, in_channels, config, drop_path=None):
        super().__init__()
        self.config = config
        self.in_channels = in_channels
        drop_path = drop_path or [0.] * config.depth
        self.patch_embed = OverlapPatchEmbed(
            in_channels, config.embed_dim, config.patch_size, config.patch_stride)
        self.blocks = nn.ModuleList(
            Block(config.embed_dim, config.num_heads, config.mlp_ratio,
                  config.sr_ratio, drop_path[i])
            for i in range(config.depth))
        self.norm = nn.LayerNorm(config.embed_dim, eps=1e-6)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != self.in_channels:
            raise ShapeError('stage expects (batch, %d, H, W) input, got %s' % (
                self.in_channels, tuple(x.shape)))
        tokens, H, W = self.patch_embed(x)
        for block in self.blocks:
            tokens = block(tokens, H, W)
        tokens = self.norm(tokens)
        return tokens.transpose(1, 2).reshape(x.shape[0], -1, H, W)


class FeaturePyramid(tuple):
    '''Four feature maps X1..X4, finest first, sharing batch and channels.'''

    def __new__(cls, levels):
        levels = tuple(levels)
        if len(levels) != 4:
            raise ConfigurationError(
                'a feature pyramid has 4 levels, got %d' % len(levels))
        batch, channels = levels[0].shape[:2]
        for i, level in enumerate(levels):
            if level.dim() != 4 or tuple(level.shape[:2]) != (batch, channels):
                raise ShapeError('level %d has shape %s, expected (%d, %d, H, W)' % (
                    i + 1, tuple(level.shape), batch, channels))
        return super().__new__(cls, levels)

    @property
    def channels(self):
        return self[0].shape[1]

    @property
    def sizes(self):
        return [tuple(level.shape[-2:]) for level in self]


class Encoder(nn.Module):
    '''The four encoder stages plus their channel projections.'''

    def __init__(self, preset, channels, drop_path_rate=0.):
        super().__init__()
        self.preset = preset = get_preset(preset)
        self.channels = channels
        total = sum(preset.depths)
        rates = [drop_path_rate * i / max(total - 1, 1) for i in range(total)]
        stages, in_channels, offset = [], 3, 0
        for config in preset.stages:
            stages.append(Stage(in_channels, config, rates[offset:offset + config.depth]))
            in_channels = config.embed_dim
            offset += config.depth
        self.stages = nn.ModuleList(stages)
        self.projections = nn.ModuleList(
            nn.Conv2d(config.embed_dim, channels, 3, 1, 1) for config in preset.stages)
        self.apply(init_weights)

    @property
    def stage_channels(self):
        '''A list of (input channels, output channels) for each stage.'''
        return [(s.in_channels, s.config.embed_dim) for s in self.stages]

    def run_stage(self, index, x):
        '''Run stage index (1..4) on a feature map.'''
        if not 1 <= index <= 4:
            raise ConfigurationError('stage index %r is not in 1..4' % (index, ))
        return self.stages[index - 1](x)

    def forward(self, images):
        if images.dim() != 4 or images.shape[1] != 3:
            raise ShapeError('expected (batch, 3, H, W) images, got %s' % (
                tuple(images.shape), ))
        for name, size in zip(('height', 'width'), images.shape[-2:]):
            if size % STRIDES[-1]:
                raise ShapeError('image %s %d is not divisible by %d' % (
                    name, size, STRIDES[-1]))
        levels, x = [], images
        for stage, projection in zip(self.stages, self.projections):
            x = stage(x)
            levels.append(projection(x))
        return FeaturePyramid(levels)


def build_backbone(preset, channels=None, drop_path_rate=0.):
    '''Build an encoder for a preset.

    preset: A preset name (B0, B2, B4, B5, TINY) or a BackbonePreset.
    channels: Common channel width of the pyramid. Defaults to 32 for TINY and
      128 otherwise.
    drop_path_rate: Stochastic depth rate of the deepest block.
    '''
    preset = get_preset(preset)
    if channels is None:
        channels = 32 if preset.name == 'TINY' else 128
    return Encoder(preset, channels, drop_path_rate)


def encode(encoder, images):
    '''Return the FeaturePyramid of a (batch, 3, H, W) image tensor.'''
    return encoder(images)


def run_stage(encoder, stage_index, x):
    '''Run a single encoder stage (1..4) on a feature map.'''
    return encoder.run_stage(stage_index, x)


def save_weights(module, path, manifest=None):
    '''Write the parameters of a module to a weight archive.

    module: A torch module whose state dict is saved under dotted names.
    path: Name of the archive file to write.
    manifest: A dictionary describing the weights. For an Encoder the preset
      name and pyramid channels are filled in unless given.
    '''
    manifest = dict(manifest or {})
    if isinstance(module, Encoder):
        manifest.setdefault('preset', module.preset.name)
        manifest.setdefault('channels', module.channels)
    torch.save({'format': WEIGHTS_FORMAT,
                'manifest': manifest,
                'tensors': {k: v.detach().cpu() for k, v in module.state_dict().items()}},
               path)
    logging.info('%s: wrote %d tensors', path, len(module.state_dict()))


def load_weights(path, map_location='cpu'):
    '''Read a weight archive, returning (manifest, name -> tensor dict).'''
    try:
        archive = torch.load(path, map_location=map_location, weights_only=True)
    except (IOError, EOFError, RuntimeError, pickle.UnpicklingError) as err:
        raise IngestionError('%s: cannot read weight archive (%s)' % (path, err))
    if not isinstance(archive, dict) or archive.get('format') != WEIGHTS_FORMAT:
        raise IngestionError('%s: not a %s archive' % (path, WEIGHTS_FORMAT))
    return archive['manifest'], archive['tensors']


def load_backbone_weights(encoder, path):
    '''Load externally supplied weights into an encoder.

    Returns the lists of missing and unexpected parameter names.
    '''
    manifest, tensors = load_weights(path)
    name = manifest.get('preset')
    if name is not None and name != encoder.preset.name:
        logging.warning('%s: weights are for preset %s, encoder is %s',
                        path, name, encoder.preset.name)
    own = encoder.state_dict()
    for key, value in tensors.items():
        if key in own and own[key].shape != value.shape:
            raise ShapeError('%s: %s has shape %s, encoder expects %s' % (
                path, key, tuple(value.shape), tuple(own[key].shape)))
    missing, unexpected = encoder.load_state_dict(tensors, strict=False)
    if missing:
        logging.warning('%s: %d encoder tensors missing', path, len(missing))
    if unexpected:
        logging.warning('%s: %d unexpected tensors ignored', path, len(unexpected))
    return list(missing), list(unexpected)
