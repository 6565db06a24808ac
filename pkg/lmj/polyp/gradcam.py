# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Gradient-weighted activation maps of the reverse attention bottlenecks.

Layers are named after the bottleneck and convolution they belong to: '1.0',
'1.1' and '1.2' are the three convolutions of the bottleneck that produces the
attention map, '2.0', '2.1' and '2.2' those of the bottleneck that refines the
modulated feature.
'''

import collections
import logging

import numpy as np
import scipy.ndimage
import torch
import torch.nn.functional as F

from .errors import ConfigurationError, ShapeError

LAYERS = ('1.0', '1.1', '1.2', '2.0', '2.1', '2.2')


def block_layers(block):
    '''Map layer names to the convolutions of a synthesizer block.'''
    layers = collections.OrderedDict()
    for b in (1, 2):
        bottleneck = getattr(block, 'bottleneck%d' % b, None)
        if bottleneck is None:
            continue
        for i, conv in enumerate(bottleneck.convs):
            layers['%d.%d' % (b, i)] = conv
    return layers


def available_layers(model, level):
    '''List the layer names Grad-CAM can target at a pyramid level.'''
    return list(block_layers(_block(model, level)))


def _block(model, level):
    if model.hfs is None:
        raise ConfigurationError(
            'the %s variant has no synthesizer blocks to visualize' % model.config.variant)
    if not 1 <= level <= len(model.hfs.blocks):
        raise ConfigurationError('level %r is not in 1..%d' % (level, len(model.hfs.blocks)))
    return model.hfs.blocks[level - 1]


def normalize_map(cam):
    '''Rescale a map to [0, 1]; a flat map becomes all zeros.'''
    cam = np.asarray(cam, dtype=np.float64)
    lo, hi = cam.min(), cam.max()
    if hi - lo <= 1e-12:
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


class GradCam(object):
    '''Grad-CAM over some convolutions of one synthesizer block.

    model: An RTAFormer with a synthesizer.
    level: Pyramid level (1..4) of the block to inspect.
    layers: Names of the layers to inspect; defaults to all the block has.
    '''

    def __init__(self, model, level=1, layers=None):
        self.model = model
        known = block_layers(_block(model, level))
        layers = list(layers or known)
        unknown = [name for name in layers if name not in known]
        if unknown:
            raise ConfigurationError('unknown layer %s at level %d (available: %s)' % (
                unknown[0], level, ', '.join(known)))
        self.level = level
        self.layers = collections.OrderedDict((name, known[name]) for name in layers)
        self._activations = {}
        self._gradients = {}

    def _hook(self, name):
        def save(module, inputs, output):
            self._activations[name] = output
            output.register_hook(lambda grad: self._gradients.__setitem__(name, grad))
        return save

    def __call__(self, image):
        '''Compute heatmaps for one normalized (3, H, W) image.

        Returns a (heatmaps, prediction) pair: a dict from layer name to an
        (h, w) array in [0, 1] at the layer's own resolution, and the model's
        (H, W) probability map.
        '''
        if image.dim() != 3 or image.shape[0] != 3:
            raise ShapeError('expected a (3, H, W) image, got %s' % (tuple(image.shape), ))
        was_training = self.model.training
        self.model.eval()
        self._activations.clear()
        self._gradients.clear()
        handles = [layer.register_forward_hook(self._hook(name))
                   for name, layer in self.layers.items()]
        try:
            device = next(self.model.parameters()).device
            x = image[None].to(device).requires_grad_(True)
            with torch.enable_grad():
                logits = self.model(x)
                prob = torch.sigmoid(logits)
                # score the predicted polyp; fall back to the whole map if empty.
                region = (prob > 0.5).float()
                if region.sum() == 0:
                    region = torch.ones_like(region)
                self.model.zero_grad()
                (logits * region).sum().backward()
        finally:
            for handle in handles:
                handle.remove()
            self.model.train(was_training)

        heatmaps = collections.OrderedDict()
        for name in self.layers:
            act = self._activations[name].detach()[0]
            grad = self._gradients.get(name)
            if grad is None:
                grad = torch.zeros_like(act)
            else:
                grad = grad.detach()[0]
            weights = grad.mean(dim=(1, 2), keepdim=True)
            cam = F.relu((weights * act).sum(dim=0))
            heatmaps[name] = normalize_map(cam.cpu().numpy())
        logging.debug('level %d: computed %d heatmaps', self.level, len(heatmaps))
        return heatmaps, prob.detach()[0, 0].cpu().numpy()


def _fit(mask, shape):
    mask = np.asarray(mask, dtype=np.float32)
    if mask.shape == tuple(shape):
        return mask > 0.5
    t = torch.from_numpy(mask)[None, None]
    return F.interpolate(t, size=tuple(shape), mode='nearest')[0, 0].numpy() > 0.5


def region_statistics(heatmap, mask, width=1):
    '''Measure where a heatmap puts its mass relative to a binary mask.

    heatmap: An (h, w) array of nonnegative values.
    mask: A binary array of any size; it is resized to the heatmap's.
    width: Half-width in pixels of the boundary band.

    Returns a dict with the fractions of heatmap mass inside the mask interior
    and inside the boundary band (dilation minus erosion), and the distance
    between the heatmap's centroid and the mask's, relative to the diagonal.
    '''
    heatmap = np.asarray(heatmap, dtype=np.float64)
    mask = _fit(mask, heatmap.shape)
    square = scipy.ndimage.generate_binary_structure(2, 2)
    dilated = scipy.ndimage.binary_dilation(mask, structure=square, iterations=width)
    eroded = scipy.ndimage.binary_erosion(mask, structure=square, iterations=width)
    band = dilated & ~eroded
    total = heatmap.sum()
    if total <= 0 or not mask.any():
        return dict(interior=0., boundary=0., centroid_offset=float('nan'))
    here = np.array(scipy.ndimage.center_of_mass(heatmap))
    there = np.array(scipy.ndimage.center_of_mass(mask.astype(np.float64)))
    return dict(
        interior=float(heatmap[eroded].sum() / total),
        boundary=float(heatmap[band].sum() / total),
        centroid_offset=float(np.linalg.norm(here - there) / np.hypot(*heatmap.shape)))
