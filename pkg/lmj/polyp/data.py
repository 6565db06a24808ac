# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Loading, resizing and synthesizing polyp segmentation samples.

Datasets live on disk as <root>/<dataset>/images/<id>.png next to
<root>/<dataset>/masks/<id>.png, with optional split manifests
<root>/<dataset>/train.txt and test.txt listing one id per line.
'''

import dataclasses
import logging
import os

import numpy as np
import scipy.ndimage
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import IngestionError, ValidationError

# per-channel statistics of natural images, used to normalize inputs.
MEAN = (0.485, 0.456, 0.406)
STD = (0.229, 0.224, 0.225)

DATASETS = ('CVC-ClinicDB', 'CVC-ColonDB', 'CVC-300', 'ETIS-LaribPolypDB', 'Kvasir')
TRAIN_DATASETS = ('CVC-ClinicDB', 'Kvasir')
TRAIN_SIZE = 1450

IMAGE_SUFFIXES = ('.png', '.jpg', '.jpeg', '.tif', '.tiff', '.bmp')


@dataclasses.dataclass
class SegSample(object):
    '''An image, its binary mask and an identifier.

    image: A (3, H, W) float tensor, normalized with MEAN and STD.
    mask: A (1, H, W) float tensor holding only 0 and 1.
    id: A string naming the sample.
    '''

    image: torch.Tensor
    mask: torch.Tensor
    id: str

    @property
    def size(self):
        return tuple(self.image.shape[-2:])


def normalize(pixels):
    '''Turn an (H, W, 3) array of values in [0, 1] into a normalized tensor.'''
    image = torch.from_numpy(np.ascontiguousarray(pixels, dtype=np.float32))
    image = image.permute(2, 0, 1)
    mean = torch.tensor(MEAN).view(3, 1, 1)
    std = torch.tensor(STD).view(3, 1, 1)
    return (image - mean) / std


def denormalize(image):
    '''Turn a normalized (3, H, W) tensor back into an (H, W, 3) array in [0, 1].'''
    mean = torch.tensor(MEAN).view(3, 1, 1)
    std = torch.tensor(STD).view(3, 1, 1)
    pixels = (image.detach().cpu().float() * std + mean).clamp(0, 1)
    return pixels.permute(1, 2, 0).numpy()


def binarize(values):
    '''Threshold 8-bit mask values at 128.'''
    return (np.asarray(values) > 128).astype(np.float32)


def read_image(path):
    '''Read an RGB image file into a normalized (3, H, W) tensor.'''
    try:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert('RGB'), dtype=np.float32) / 255.
    except (IOError, OSError) as err:
        raise IngestionError('%s: cannot read image (%s)' % (path, err))
    return normalize(pixels)


def read_mask(path):
    '''Read an 8-bit mask file into a binary (1, H, W) tensor.'''
    try:
        with Image.open(path) as img:
            values = np.asarray(img.convert('L'))
    except (IOError, OSError) as err:
        raise IngestionError('%s: cannot read mask (%s)' % (path, err))
    return torch.from_numpy(binarize(values))[None]


def index_images(directory):
    '''Map file stems to paths for the image files in a directory.'''
    found = {}
    for name in os.listdir(directory):
        stem, ext = os.path.splitext(name)
        if ext.lower() in IMAGE_SUFFIXES:
            found[stem] = os.path.join(directory, name)
    return found


def load_split(root_dir, dataset_name, split):
    '''Read the ids listed in <root>/<dataset>/<split>.txt.'''
    path = os.path.join(root_dir, dataset_name, '%s.txt' % split)
    if not os.path.isfile(path):
        raise IngestionError('%s: no such split manifest' % path)
    with open(path) as handle:
        ids = [line.strip() for line in handle if line.strip()]
    return [os.path.splitext(i)[0] for i in ids]


def load_dataset(root_dir, dataset_name, split=None, ids=None):
    '''Load the image/mask pairs of one dataset, sorted by id.

    root_dir: Directory holding one subdirectory per dataset.
    dataset_name: Name of the dataset subdirectory, e.g. 'Kvasir'.
    split: If given, only load the ids listed in the <split>.txt manifest.
    ids: If given, only load these ids.
    '''
    base = os.path.join(root_dir, dataset_name)
    image_dir = os.path.join(base, 'images')
    mask_dir = os.path.join(base, 'masks')
    for directory in (image_dir, mask_dir):
        if not os.path.isdir(directory):
            raise IngestionError('%s: no such directory' % directory)
    images, masks = index_images(image_dir), index_images(mask_dir)
    if split is not None:
        ids = load_split(root_dir, dataset_name, split)
    if ids is not None:
        wanted = set(ids)
        absent = sorted(wanted - set(images))
        if absent:
            raise IngestionError('%s: no image for id %s' % (base, absent[0]))
        images = dict((k, v) for k, v in images.items() if k in wanted)
    if not images:
        raise IngestionError('%s: no images found' % image_dir)

    samples = []
    for sample_id in sorted(images):
        if sample_id not in masks:
            raise IngestionError('%s: no mask for image %s' % (base, sample_id))
        image = read_image(images[sample_id])
        mask = read_mask(masks[sample_id])
        if image.shape[-2:] != mask.shape[-2:]:
            raise IngestionError('%s: image %s is %s but its mask is %s' % (
                base, sample_id, tuple(image.shape[-2:]), tuple(mask.shape[-2:])))
        samples.append(SegSample(image=image, mask=mask, id=sample_id))
    logging.info('%s: loaded %d samples', dataset_name, len(samples))
    return samples


@dataclasses.dataclass
class SplitSpec(object):
    '''Training ids per dataset, and held-out test ids per dataset.'''

    train: dict
    test: dict

    @classmethod
    def from_root(cls, root_dir, train_datasets=TRAIN_DATASETS, test_datasets=DATASETS):
        '''Read the train.txt and test.txt manifests under root_dir.'''
        train = dict((name, load_split(root_dir, name, 'train')) for name in train_datasets)
        test = dict((name, load_split(root_dir, name, 'test')) for name in test_datasets)
        return cls(train=train, test=test)

    @property
    def train_size(self):
        return sum(len(ids) for ids in self.train.values())

    def check(self, expected_train=TRAIN_SIZE):
        '''Raise ValidationError unless the split is disjoint and sized right.'''
        for name, ids in self.train.items():
            overlap = set(ids) & set(self.test.get(name, ()))
            if overlap:
                raise ValidationError('%s: id %s is in both train and test' % (
                    name, sorted(overlap)[0]))
        if expected_train is not None and self.train_size != expected_train:
            raise ValidationError('training split has %d ids, expected %d' % (
                self.train_size, expected_train))
        return self


def _check_size(size):
    sizes = (size, size) if isinstance(size, int) else tuple(size)
    if len(sizes) != 2 or any(s < 32 or s % 32 for s in sizes):
        raise ValidationError('size %r is not a positive multiple of 32' % (size, ))
    return sizes


def resize_pair(sample, target):
    '''Resize a sample: bilinear for the image, nearest for the mask.

    sample: A SegSample.
    target: Side length, or (height, width); must be multiples of 32.
    '''
    size = _check_size(target)
    if sample.size == size:
        return SegSample(image=sample.image, mask=sample.mask, id=sample.id)
    image = F.interpolate(sample.image[None], size=size, mode='bilinear',
                          align_corners=False)[0]
    mask = F.interpolate(sample.mask[None], size=size, mode='nearest')[0]
    return SegSample(image=image, mask=mask, id=sample.id)


def _ellipse(rng, size):
    # area fraction and aspect are drawn first; the axes follow from them and
    # are clamped so the ellipse stays inside the frame.
    fraction = rng.uniform(0.08, 0.4)
    aspect = rng.uniform(0.6, 1.0)
    a = np.sqrt(fraction * size * size / (np.pi * aspect))
    a = min(a, 0.48 * size)
    b = max(aspect * a, 0.1 * size)
    cy, cx = rng.uniform(a, size - a, size=2)
    theta = rng.uniform(0, np.pi)
    y, x = np.mgrid[:size, :size] + 0.5
    u = (x - cx) * np.cos(theta) + (y - cy) * np.sin(theta)
    v = -(x - cx) * np.sin(theta) + (y - cy) * np.cos(theta)
    return ((u / a) ** 2 + (v / b) ** 2 <= 1).astype(np.float32)


def make_toy_set(n, size, seed):
    '''Generate n synthetic samples: a filled ellipse on a textured background.

    n: Number of samples.
    size: Side length in pixels; must be a multiple of 32.
    seed: Seed for the random number generator. Equal seeds give identical
      samples.
    '''
    if n < 1:
        raise ValidationError('cannot make %d toy samples' % n)
    if not isinstance(size, int) or size < 32 or size % 32:
        raise ValidationError('toy size %r is not a positive multiple of 32' % (size, ))
    rng = np.random.RandomState(seed)
    samples = []
    for i in range(n):
        mask = _ellipse(rng, size)
        texture = scipy.ndimage.gaussian_filter(
            rng.randn(size, size, 3), sigma=(size / 16., size / 16., 0))
        texture /= np.abs(texture).max() + 1e-8
        tissue = np.array([0.55, 0.32, 0.30]) + 0.08 * texture
        polyp = np.array([0.90, 0.62, 0.48]) + 0.04 * texture
        alpha = scipy.ndimage.gaussian_filter(mask, sigma=1.)[..., None]
        pixels = (1 - alpha) * tissue + alpha * polyp
        pixels += 0.02 * rng.randn(size, size, 3)
        samples.append(SegSample(
            image=normalize(np.clip(pixels, 0, 1)),
            mask=torch.from_numpy(mask)[None],
            id='toy-%d-%04d' % (seed, i)))
    return samples


def collate(samples):
    '''Stack samples into (images, masks, ids).'''
    images = torch.stack([s.image for s in samples])
    masks = torch.stack([s.mask for s in samples])
    return images, masks, [s.id for s in samples]
