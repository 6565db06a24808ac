# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Losses, metrics and the optimization loop.'''

import dataclasses
import json
import logging
import math
import os
import random

import numpy as np
import torch
import torch.nn.functional as F

from . import data
from .errors import ConfigurationError, ShapeError, TrainingError, ValidationError
from .model import save_checkpoint

LOSS_HISTORY = 'loss_history.jsonl'
CHECKPOINT = 'model.pt'


@dataclasses.dataclass(frozen=True)
class TrainConfig(object):
    '''Optimizer and schedule settings.

    lr: Adam learning rate.
    weight_decay: Adam weight decay.
    batch_size: Number of samples per batch.
    epochs: Number of passes over the training set.
    scales: Each batch is resized by one of these factors, chosen uniformly.
    seed: Seed for parameter noise, shuffling and scale choice.
    device: Torch device to train on.
    deterministic: Also ask torch for deterministic kernels.
    clip_grad_norm: If given, clip the total gradient norm to this value before
      each step; usually 5 when guarding against divergence.
    max_steps: If given, stop after this many optimizer steps.
    '''

    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch_size: int = 8
    epochs: int = 100
    scales: tuple = (0.75, 1.0, 1.25)
    seed: int = 0
    device: str = 'cpu'
    deterministic: bool = False
    clip_grad_norm: float = None
    max_steps: int = None

    def __post_init__(self):
        # yaml reads 1e-4 (no dot) as a string.
        try:
            for name in ('lr', 'weight_decay'):
                object.__setattr__(self, name, float(getattr(self, name)))
            object.__setattr__(self, 'scales', tuple(float(s) for s in self.scales))
        except (TypeError, ValueError):
            raise ConfigurationError('optimizer rates and scales must be numbers')
        if not self.scales or min(self.scales) <= 0:
            raise ConfigurationError('scales must be positive, got %r' % (self.scales, ))
        if self.lr <= 0:
            raise ConfigurationError('lr must be positive, got %r' % (self.lr, ))
        if self.weight_decay < 0:
            raise ConfigurationError('weight_decay %r < 0' % (self.weight_decay, ))
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError('need batch_size and epochs >= 1, got %r/%r' % (
                self.batch_size, self.epochs))
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError('max_steps %r < 1' % (self.max_steps, ))
        if self.clip_grad_norm is not None:
            try:
                object.__setattr__(self, 'clip_grad_norm', float(self.clip_grad_norm))
            except (TypeError, ValueError):
                raise ConfigurationError(
                    'clip_grad_norm must be a number, got %r' % (self.clip_grad_norm, ))
            if self.clip_grad_norm <= 0:
                raise ConfigurationError(
                    'clip_grad_norm %r is not positive' % (self.clip_grad_norm, ))

    def replace(self, **kwargs):
        return dataclasses.replace(self, **kwargs)

    def to_dict(self):
        values = dataclasses.asdict(self)
        values['scales'] = list(values['scales'])
        return values

    @classmethod
    def from_dict(cls, values):
        names = set(f.name for f in dataclasses.fields(cls))
        unknown = sorted(set(values) - names)
        if unknown:
            raise ConfigurationError('unknown train settings: %s' % ', '.join(unknown))
        return cls(**values)


@dataclasses.dataclass
class MetricReport(object):
    '''Mean per-image Dice and IoU over a dataset.'''

    dataset: str
    dice: float
    miou: float
    n_images: int

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class TrainResult(object):
    '''Per-epoch loss records and the checkpoint written, if any.'''

    history: list
    checkpoint: str = None
    steps: int = 0


def seed_everything(seed, deterministic=False):
    '''Seed python, numpy and torch; optionally request deterministic kernels.'''
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.cuda.manual_seed_all(seed)
    if deterministic:
        torch.backends.cudnn.deterministic = True
        torch.backends.cudnn.benchmark = False
        torch.use_deterministic_algorithms(True, warn_only=True)


def scaled_size(size, scale):
    '''Scale a side length, rounding half up to a multiple of 32 (at least 32).'''
    if scale <= 0:
        raise ValidationError('scale %r is not positive' % (scale, ))
    return max(32, int(math.floor(size * scale / 32. + 0.5)) * 32)


def _check_masks(logits, gt):
    if logits.shape != gt.shape:
        raise ShapeError('logits %s and mask %s differ in shape' % (
            tuple(logits.shape), tuple(gt.shape)))
    if logits.dim() != 4:
        raise ShapeError('expected (batch, 1, H, W) maps, got %s' % (tuple(logits.shape), ))
    if not ((gt == 0) | (gt == 1)).all():
        raise ValidationError('mask has values other than 0 and 1')


def boundary_weights(gt):
    '''Pixel weights 1 + 5 |avgpool31(gt) - gt|, largest near mask boundaries.'''
    pooled = F.avg_pool2d(gt, kernel_size=31, stride=1, padding=15)
    return 1 + 5 * torch.abs(pooled - gt)


def structure_loss(logits, gt):
    '''Boundary-weighted binary cross entropy plus boundary-weighted IoU.

    logits: A (batch, 1, H, W) tensor of raw predictions.
    gt: A (batch, 1, H, W) tensor of 0s and 1s.

    Returns the mean over the batch, a nonnegative scalar.
    '''
    _check_masks(logits, gt)
    weit = boundary_weights(gt)

    wbce = F.binary_cross_entropy_with_logits(logits, gt, reduction='none')
    wbce = (weit * wbce).sum(dim=(2, 3)) / weit.sum(dim=(2, 3))

    pred = torch.sigmoid(logits)
    inter = ((pred * gt) * weit).sum(dim=(2, 3))
    union = ((pred + gt) * weit).sum(dim=(2, 3))
    wiou = 1 - (inter + 1) / (union - inter + 1)

    return (wbce + wiou).mean()


def _binary(mask, name):
    if isinstance(mask, torch.Tensor):
        mask = mask.detach().cpu().numpy()
    mask = np.asarray(mask)
    if not np.isin(mask, (0, 1)).all():
        raise ValidationError('%s mask has values other than 0 and 1' % name)
    return mask.astype(bool)


def _counts(pred_mask, gt_mask):
    pred = _binary(pred_mask, 'predicted')
    gt = _binary(gt_mask, 'ground truth')
    if pred.shape != gt.shape:
        raise ShapeError('predicted mask %s and ground truth %s differ in shape' % (
            pred.shape, gt.shape))
    inter = int(np.count_nonzero(pred & gt))
    return inter, int(np.count_nonzero(pred)), int(np.count_nonzero(gt))


def dice(pred_mask, gt_mask):
    '''2 |A & B| / (|A| + |B|), with 1 for two empty masks.'''
    inter, a, b = _counts(pred_mask, gt_mask)
    if a + b == 0:
        return 1.
    return 2. * inter / (a + b)


def iou(pred_mask, gt_mask):
    '''|A & B| / |A | B|, with 1 for two empty masks.'''
    inter, a, b = _counts(pred_mask, gt_mask)
    union = a + b - inter
    if union == 0:
        return 1.
    return float(inter) / union


def _device(model):
    try:
        return next(model.parameters()).device
    except StopIteration:
        return torch.device('cpu')


def predict(model, image, threshold=0.5, image_size=None):
    '''Return the binary (1, H, W) prediction for one normalized image.

    The image is resized to image_size for the forward pass (defaulting to the
    model's configured size) and the logits are resized back to the image's
    own size before thresholding.
    '''
    if image_size is None:
        config = getattr(model, 'config', None)
        image_size = getattr(config, 'image_size', None)
    size = tuple(image.shape[-2:])
    x = image[None].to(_device(model))
    if image_size is not None and size != (image_size, image_size):
        x = F.interpolate(x, size=(image_size, image_size), mode='bilinear',
                          align_corners=False)
    with torch.no_grad():
        logits = model(x)
    if tuple(logits.shape[-2:]) != size:
        logits = F.interpolate(logits, size=size, mode='bilinear', align_corners=False)
    return (torch.sigmoid(logits[0]) > threshold).float().cpu()


def evaluate(model, dataset, threshold=0.5, image_size=None, name=''):
    '''Compute mean per-image Dice and IoU of a model over a dataset.

    model: A module mapping (batch, 3, H, W) images to logits.
    dataset: A list of SegSample.
    threshold: Probability above which a pixel counts as polyp.
    image_size: Side length images are resized to for the forward pass.
    name: Dataset name recorded in the report.
    '''
    if not dataset:
        raise ValidationError('cannot evaluate on an empty dataset')
    was_training = model.training
    model.eval()
    dices, ious = [], []
    try:
        for sample in dataset:
            pred = predict(model, sample.image, threshold, image_size)
            dices.append(dice(pred, sample.mask))
            ious.append(iou(pred, sample.mask))
    finally:
        model.train(was_training)
    report = MetricReport(dataset=name, dice=float(np.mean(dices)),
                          miou=float(np.mean(ious)), n_images=len(dices))
    logging.info('%s: dice %.4f, miou %.4f over %d images',
                 name or 'dataset', report.dice, report.miou, report.n_images)
    return report


def _first_nonfinite(model):
    for name, param in model.named_parameters():
        if not torch.isfinite(param).all():
            return name
        if param.grad is not None and not torch.isfinite(param.grad).all():
            return name + '.grad'
    return None


def _resize_batch(images, masks, size):
    if tuple(images.shape[-2:]) == (size, size):
        return images, masks
    images = F.interpolate(images, size=(size, size), mode='bilinear', align_corners=False)
    masks = F.interpolate(masks, size=(size, size), mode='nearest')
    return images, masks


def train(model, train_set, config, out_dir=None):
    '''Optimize a model on a list of samples.

    model: An RTAFormer.
    train_set: A list of SegSample; each is resized to the model's image size.
    config: A TrainConfig.
    out_dir: If given, the loss history and a checkpoint are written here.

    Returns a TrainResult.
    '''
    if not train_set:
        raise ValidationError('cannot train on an empty dataset')
    seed_everything(config.seed, config.deterministic)
    device = torch.device(config.device)
    model.to(device).train()

    image_size = model.config.image_size
    samples = [data.resize_pair(s, image_size) for s in train_set]
    loader = torch.utils.data.DataLoader(
        samples,
        batch_size=config.batch_size,
        shuffle=True,
        collate_fn=data.collate,
        generator=torch.Generator().manual_seed(config.seed))
    rng = np.random.RandomState(config.seed)

    params = [p for p in model.parameters() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.lr, weight_decay=config.weight_decay)

    history_file = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        history_file = open(os.path.join(out_dir, LOSS_HISTORY), 'w')

    history, steps = [], 0
    try:
        for epoch in range(1, config.epochs + 1):
            losses = []
            for images, masks, ids in loader:
                size = scaled_size(image_size, config.scales[rng.randint(len(config.scales))])
                images, masks = _resize_batch(images.to(device), masks.to(device), size)

                optimizer.zero_grad()
                loss = structure_loss(model(images), masks)
                if not torch.isfinite(loss):
                    raise TrainingError(
                        'non-finite loss at epoch %d, batch %s; first non-finite '
                        'parameter: %s' % (epoch, ', '.join(ids), _first_nonfinite(model)))
                loss.backward()
                if config.clip_grad_norm is not None:
                    torch.nn.utils.clip_grad_norm_(params, config.clip_grad_norm)
                optimizer.step()

                steps += 1
                losses.append(loss.item())
                logging.debug('epoch %d step %d: size %d, loss %.5f',
                              epoch, steps, size, losses[-1])
                if config.max_steps is not None and steps >= config.max_steps:
                    break

            record = dict(epoch=epoch, mean_loss=float(np.mean(losses)), lr=config.lr)
            history.append(record)
            if history_file is not None:
                history_file.write(json.dumps(record) + '\n')
                history_file.flush()
            logging.info('epoch %d: mean loss %.5f', epoch, record['mean_loss'])
            if config.max_steps is not None and steps >= config.max_steps:
                break
    finally:
        if history_file is not None:
            history_file.close()

    checkpoint = None
    if out_dir is not None:
        checkpoint = save_checkpoint(
            model, os.path.join(out_dir, CHECKPOINT),
            train=config.to_dict(), steps=steps)
    return TrainResult(history=history, checkpoint=checkpoint, steps=steps)
