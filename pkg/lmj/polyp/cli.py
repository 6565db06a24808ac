# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Command-line entry points for training, evaluating and inspecting models.

  rta-former.py train --config configs/toy.yaml --out-dir runs/toy
  rta-former.py evaluate runs/toy/model.pt --config configs/polyp.yaml
  rta-former.py ablate --config configs/toy.yaml --out-dir runs/ablate
  rta-former.py gradcam runs/toy/model.pt image.png --out-dir runs/cam
  rta-former.py predict runs/toy/model.pt a.png b.png --mask-dir masks --out-dir runs/pred
  rta-former.py params
'''

import functools
import io
import json
import logging
import optparse
import os
import sys

import matplotlib
matplotlib.use('Agg')
import matplotlib.image
import matplotlib.pyplot as plt
import numpy as np
import scipy.ndimage
import torch.nn.functional as F
from PIL import Image

from . import data
from .config import DataConfig, RunConfig, load_config, save_config
from .errors import ConfigurationError, IngestionError, PolypError
from .gradcam import GradCam, region_statistics
from .model import (COMPONENTS, PUBLISHED_PARAMETERS, SIZE_PRESETS, VARIANTS,
                    ModelConfig, build, count_parameters, load_checkpoint)
from .training import dice, evaluate, iou, predict, train

METRICS = 'metrics.json'
ABLATION = 'ablation'
GRADCAM = 'gradcam.json'
PREDICTIONS = 'predictions.json'
LOSS_PLOT = 'loss.png'

# acceptable deviation from the published parameter totals.
PARAM_TOLERANCE = 0.10

FLAGS = optparse.OptionParser(usage='''%prog COMMAND [options] [ARGS]

Commands:
  train                     train a model and evaluate it on the test sets
  evaluate CHECKPOINT       evaluate a checkpoint on the test sets
  ablate                    train and compare the four ablation variants
  gradcam CHECKPOINT IMAGE  write Grad-CAM heatmaps of the reverse bottlenecks
  predict CHECKPOINT IMAGE...  write predicted masks and comparison panels
  params                    compare parameter counts with the published ones''')
FLAGS.add_option('-c', '--config', metavar='FILE',
                 help='read run settings from FILE (YAML)')
FLAGS.add_option('-d', '--data-root', metavar='DIR',
                 help='load datasets from subdirectories of DIR')
FLAGS.add_option('-o', '--out-dir', default='.', metavar='DIR',
                 help='write all outputs under DIR (.)')
FLAGS.add_option('-s', '--seed', type=int, metavar='N',
                 help='seed all random number generators with N')
FLAGS.add_option('', '--deterministic', action='store_true', default=None,
                 help='request deterministic kernels from torch')
FLAGS.add_option('-p', '--preset', metavar='NAME',
                 help='use size preset NAME (T, S, M, L, TINY)')
FLAGS.add_option('', '--variant', metavar='NAME',
                 help='use ablation variant NAME (base, hfs, hfs+ra, hfs+rta)')
FLAGS.add_option('', '--device', metavar='DEV',
                 help='run on torch device DEV (cpu)')
FLAGS.add_option('', '--level', default='1', metavar='N',
                 help='draw Grad-CAM for the block at pyramid level N, or "all" (1)')
FLAGS.add_option('', '--layers', metavar='L,L',
                 help='draw Grad-CAM for these layers only (1.0,...,2.2)')
FLAGS.add_option('', '--mask', metavar='FILE',
                 help='measure Grad-CAM mass against the mask in FILE')
FLAGS.add_option('', '--mask-dir', metavar='DIR',
                 help='compare predictions with same-named masks in DIR')
FLAGS.add_option('-t', '--threshold', type=float, default=0.5, metavar='P',
                 help='count pixels above probability P as polyp (0.5)')
FLAGS.add_option('-v', '--verbose', action='store_true',
                 help='log debugging output')


def command(f):
    '''Turn library errors raised by a command into a nonzero exit code.'''
    @functools.wraps(f)
    def wrapper(*args, **kwargs):
        try:
            return f(*args, **kwargs)
        except (PolypError, IOError) as err:
            logging.error('%s: %s', f.__name__, err)
            return 1
    return wrapper


def run_config(config_path=None, data_root=None, seed=None, deterministic=None,
               preset=None, variant=None, device=None):
    '''Read a RunConfig and apply command-line overrides to it.'''
    run = RunConfig() if config_path is None else load_config(config_path)
    model = dict((k, v) for k, v in (('preset', preset), ('variant', variant))
                 if v is not None)
    train_ = dict((k, v) for k, v in (('seed', seed), ('deterministic', deterministic),
                                      ('device', device)) if v is not None)
    run = run.replace(model=run.model.replace(**model), train=run.train.replace(**train_))
    if data_root is not None:
        run = run.replace(data=DataConfig.from_dict(
            dict(run.data.to_dict(), root=data_root)))
    return run


def load_datasets(config):
    '''Return the training samples and a dict of test samples for a DataConfig.'''
    if config.toy is not None:
        toy = config.toy
        samples = data.make_toy_set(toy['n'], toy['size'], toy['seed'])
        tests = {'toy': samples}
        if toy['test_n']:
            tests = {'toy': data.make_toy_set(toy['test_n'], toy['size'], toy['seed'] + 1)}
        return samples, tests
    if config.root is None:
        raise ConfigurationError('no data root given (use --data-root)')
    if not os.path.isdir(config.root):
        raise IngestionError('%s: no such data directory' % config.root)
    samples = []
    for name in config.train:
        samples.extend(data.load_dataset(config.root, name, split=config.train_split))
    tests = dict((name, data.load_dataset(config.root, name, split=config.test_split))
                 for name in config.test)
    return samples, tests


def _write_json(path, value):
    with open(path, 'w') as handle:
        json.dump(value, handle, indent=2, sort_keys=True)
    logging.info('%s: wrote', path)
    return path


def plot_loss(history, path):
    '''Render the per-epoch mean loss to an image file.'''
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot([r['epoch'] for r in history], [r['mean_loss'] for r in history], 'k-')
    ax.set_xlabel('epoch')
    ax.set_ylabel('mean structure loss')
    ax.set_yscale('log')
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def _train_and_evaluate(run, train_set, tests, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    model = build(run.model, seed=run.train.seed)
    result = train(model, train_set, run.train, out_dir)
    reports = [evaluate(model, tests[name], name=name) for name in sorted(tests)]
    return result, reports


@command
def cmd_train(config_path, data_root, out_dir, **overrides):
    '''Train a model, then write its checkpoint, loss history and metrics.'''
    run = run_config(config_path, data_root, **overrides)
    train_set, tests = load_datasets(run.data)
    os.makedirs(out_dir, exist_ok=True)
    save_config(run, os.path.join(out_dir, 'config.yaml'))
    result, reports = _train_and_evaluate(run, train_set, tests, out_dir)
    plot_loss(result.history, os.path.join(out_dir, LOSS_PLOT))
    _write_json(os.path.join(out_dir, METRICS), [r.to_dict() for r in reports])
    return 0


@command
def cmd_evaluate(checkpoint, data_root, out_dir, config_path=None, **overrides):
    '''Evaluate a checkpoint on every configured test set.'''
    run = run_config(config_path, data_root, **overrides)
    model = load_checkpoint(checkpoint, run.train.device)
    _, tests = load_datasets(run.data)
    reports = [evaluate(model, tests[name], name=name) for name in sorted(tests)]
    os.makedirs(out_dir, exist_ok=True)
    _write_json(os.path.join(out_dir, METRICS), [r.to_dict() for r in reports])
    return 0


def format_ablation(rows):
    '''Lay out ablation rows as a text table, one line per variant.'''
    names = [r['dataset'] for r in rows[0]['reports']]
    out = io.StringIO()
    out.write('%-8s %-3s %-3s %-3s' % ('variant', 'HFS', 'RA', 'RTA'))
    for name in names:
        out.write('  %17s' % name[:17])
    out.write('\n%-8s %-3s %-3s %-3s' % ('', '', '', ''))
    for _ in names:
        out.write('  %8s %8s' % ('DICE', 'mIoU'))
    out.write('\n')
    for row in rows:
        marks = ['x' if row[k] else '' for k in ('hfs', 'ra', 'rta')]
        out.write('%-8s %-3s %-3s %-3s' % tuple([row['variant']] + marks))
        for report in row['reports']:
            out.write('  %8.4f %8.4f' % (report['dice'], report['miou']))
        out.write('\n')
    return out.getvalue()


@command
def cmd_ablate(config_path, data_root, out_dir, **overrides):
    '''Train and evaluate every ablation variant under one seed.'''
    run = run_config(config_path, data_root, **overrides)
    train_set, tests = load_datasets(run.data)
    rows = []
    for variant in VARIANTS:
        config = run.replace(model=run.model.replace(variant=variant))
        _, reports = _train_and_evaluate(
            config, train_set, tests, os.path.join(out_dir, variant))
        hfs, ra, rta = COMPONENTS[variant]
        rows.append(dict(variant=variant, hfs=hfs, ra=ra, rta=rta,
                         reports=[r.to_dict() for r in reports]))
    _write_json(os.path.join(out_dir, ABLATION + '.json'), rows)
    table = format_ablation(rows)
    with open(os.path.join(out_dir, ABLATION + '.txt'), 'w') as handle:
        handle.write(table)
    print(table)
    return 0


def overlay(heatmap, image, alpha=0.5, cmap='jet'):
    '''Blend a color-mapped heatmap over an image resized to the heatmap.

    heatmap: An (h, w) array in [0, 1].
    image: A normalized (3, H, W) tensor.

    Returns an (h, w, 3) array in [0, 1].
    '''
    h, w = heatmap.shape
    base = Image.fromarray((data.denormalize(image) * 255).astype(np.uint8))
    base = np.asarray(base.resize((w, h), Image.BILINEAR), dtype=np.float64) / 255.
    colors = matplotlib.colormaps[cmap](heatmap)[..., :3]
    return np.clip((1 - alpha) * base + alpha * colors, 0, 1)


def _levels(level):
    if str(level) == 'all':
        return [1, 2, 3]
    try:
        return [int(level)]
    except ValueError:
        raise ConfigurationError('level %r is not a number or "all"' % (level, ))


@command
def cmd_gradcam(checkpoint, image_path, out_dir, level=1, layers=None,
                mask_path=None, device='cpu'):
    '''Write one Grad-CAM overlay per bottleneck convolution of a block.'''
    model = load_checkpoint(checkpoint, device)
    if model.hfs is None:
        raise ConfigurationError(
            'the %s variant has no synthesizer blocks to visualize' % model.config.variant)
    image = data.read_image(image_path)
    size = model.config.image_size
    if tuple(image.shape[-2:]) != (size, size):
        image = F.interpolate(image[None], size=(size, size), mode='bilinear',
                              align_corners=False)[0]
    mask = None
    if mask_path is not None:
        mask = data.read_mask(mask_path)[0].numpy()

    os.makedirs(out_dir, exist_ok=True)
    report = {}
    levels = _levels(level)
    for lvl in levels:
        heatmaps, prob = GradCam(model, lvl, layers)(image)
        region = mask if mask is not None else (prob > 0.5)
        for name, heatmap in heatmaps.items():
            path = os.path.join(out_dir, 'level%d_bottleneck%s.png' % (lvl, name))
            matplotlib.image.imsave(path, overlay(heatmap, image))
            stats = region_statistics(heatmap, region)
            report['%d/%s' % (lvl, name)] = dict(stats, path=path, shape=list(heatmap.shape))
            logging.info('level %d bottleneck %s: interior %.3f, boundary %.3f',
                         lvl, name, stats['interior'], stats['boundary'])
    _write_json(os.path.join(out_dir, GRADCAM), report)
    return 0


def tint(image, mask, color=(1., .2, .2), alpha=0.45):
    '''Blend a solid color over the masked pixels of a normalized image.

    Returns an (H, W, 3) array in [0, 1].
    '''
    base = data.denormalize(image).astype(np.float64)
    where = np.asarray(mask, dtype=bool)[..., None]
    return np.where(where, (1 - alpha) * base + alpha * np.array(color), base)


def outline(mask):
    '''The pixels of a binary mask that touch its background.'''
    mask = np.asarray(mask, dtype=bool)
    square = scipy.ndimage.generate_binary_structure(2, 2)
    return mask & ~scipy.ndimage.binary_erosion(mask, structure=square)


def plot_prediction(image, pred, path, truth=None):
    '''Draw the image, the ground truth if given, and the tinted prediction.'''
    panels = 2 if truth is None else 3
    fig, axes = plt.subplots(1, panels, figsize=(3 * panels, 3.2))
    axes[0].imshow(data.denormalize(image))
    axes[0].set_title('image')
    if truth is not None:
        axes[1].imshow(truth, cmap='gray', vmin=0, vmax=1)
        axes[1].set_title('ground truth')
    shown = tint(image, pred)
    if truth is not None:
        shown[outline(truth)] = (0., 1., 0.)
    axes[-1].imshow(shown)
    axes[-1].set_title('prediction')
    for ax in axes:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


@command
def cmd_predict(checkpoint, image_paths, out_dir, mask_dir=None, threshold=0.5,
                device='cpu'):
    '''Write the predicted mask and a comparison panel for each image.'''
    model = load_checkpoint(checkpoint, device)
    model.eval()
    masks = {}
    if mask_dir is not None:
        if not os.path.isdir(mask_dir):
            raise IngestionError('%s: no such mask directory' % mask_dir)
        masks = data.index_images(mask_dir)

    os.makedirs(out_dir, exist_ok=True)
    report = {}
    for image_path in image_paths:
        name = os.path.splitext(os.path.basename(image_path))[0]
        image = data.read_image(image_path)
        pred = predict(model, image, threshold)[0].numpy()
        truth = None
        if mask_dir is not None:
            if name not in masks:
                raise IngestionError('%s: no mask for image %s' % (mask_dir, name))
            truth = data.read_mask(masks[name])[0].numpy()
            if truth.shape != pred.shape:
                raise IngestionError('%s: image is %s but its mask is %s' % (
                    name, pred.shape, truth.shape))
        pred_path = os.path.join(out_dir, '%s_pred.png' % name)
        Image.fromarray((pred * 255).astype(np.uint8)).save(pred_path)
        panel_path = plot_prediction(
            image, pred, os.path.join(out_dir, '%s_panel.png' % name), truth)
        entry = dict(pred=pred_path, panel=panel_path, foreground=float(pred.mean()))
        if truth is not None:
            entry.update(dice=dice(pred, truth), iou=iou(pred, truth))
            logging.info('%s: dice %.4f, iou %.4f', name, entry['dice'], entry['iou'])
        report[name] = entry
    _write_json(os.path.join(out_dir, PREDICTIONS), report)
    return 0


def parameter_table():
    '''Count parameters of every size preset without allocating storage.'''
    rows = []
    for preset in ('T', 'S', 'M', 'L', 'TINY'):
        model = build(ModelConfig(preset=preset), device='meta')
        count = count_parameters(model)
        published = PUBLISHED_PARAMETERS.get(preset)
        deviation = None if published is None else (count - published) / published
        rows.append(dict(preset=preset, backbone=SIZE_PRESETS[preset], count=count,
                         published=published, deviation=deviation))
    return rows


@command
def cmd_params():
    '''Print counted parameters next to the published totals.'''
    print('%-5s %-5s %12s %10s %10s' % ('size', 'pvt', 'count (M)', 'published', 'dev'))
    for row in parameter_table():
        if row['published'] is None:
            print('%-5s %-5s %12.3f %10s %10s' % (
                row['preset'], row['backbone'], row['count'] / 1e6, '-', '-'))
            continue
        flag = '' if abs(row['deviation']) <= PARAM_TOLERANCE else '  OUTSIDE 10%'
        print('%-5s %-5s %12.3f %10.1f %+9.2f%%%s' % (
            row['preset'], row['backbone'], row['count'] / 1e6,
            row['published'] / 1e6, 100 * row['deviation'], flag))
    return 0


def main(argv=None):
    opts, args = FLAGS.parse_args(argv)

    logging.basicConfig(
        stream=sys.stdout,
        level=logging.DEBUG if opts.verbose else logging.INFO,
        format='%(levelname).1s %(asctime)s [%(module)s:%(lineno)d] %(message)s')

    if not args:
        FLAGS.print_usage()
        return 2
    name, args = args[0], args[1:]
    overrides = dict(seed=opts.seed, deterministic=opts.deterministic,
                     preset=opts.preset, variant=opts.variant, device=opts.device)

    if name == 'train' and not args:
        return cmd_train(opts.config, opts.data_root, opts.out_dir, **overrides)
    if name == 'ablate' and not args:
        return cmd_ablate(opts.config, opts.data_root, opts.out_dir, **overrides)
    if name == 'evaluate' and len(args) == 1:
        return cmd_evaluate(args[0], opts.data_root, opts.out_dir,
                            config_path=opts.config, **overrides)
    if name == 'gradcam' and len(args) == 2:
        layers = opts.layers.split(',') if opts.layers else None
        return cmd_gradcam(args[0], args[1], opts.out_dir, level=opts.level,
                           layers=layers, mask_path=opts.mask,
                           device=opts.device or 'cpu')
    if name == 'predict' and len(args) >= 2:
        return cmd_predict(args[0], args[1:], opts.out_dir, mask_dir=opts.mask_dir,
                           threshold=opts.threshold, device=opts.device or 'cpu')
    if name == 'params' and not args:
        return cmd_params()

    logging.error('bad command line: %s', ' '.join([name] + args))
    FLAGS.print_usage()
    return 2
