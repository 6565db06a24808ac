import json
import math
import os

import numpy as np
import pytest
import torch
import torch.nn as nn

from lmj.polyp import data, model, training
from lmj.polyp.errors import ConfigurationError, ShapeError, TrainingError, ValidationError


class ConstantLogits(nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, images):
        b, _, h, w = images.shape
        return torch.full((b, 1, h, w), self.value)


def samples(mask_value, n=3, size=32):
    return [data.SegSample(image=torch.randn(3, size, size),
                           mask=torch.full((1, size, size), float(mask_value)),
                           id='s%d' % i) for i in range(n)]


def quick_config(**kwargs):
    values = dict(batch_size=2, epochs=2, seed=11, deterministic=True)
    values.update(kwargs)
    return training.TrainConfig(**values)


def test_default_recipe():
    c = training.TrainConfig()
    assert (c.lr, c.weight_decay, c.batch_size, c.epochs) == (1e-4, 1e-4, 8, 100)
    assert c.scales == (0.75, 1.0, 1.25)
    assert c.clip_grad_norm is None


def test_config_validation():
    with pytest.raises(ConfigurationError):
        training.TrainConfig(scales=(0.5, -1.))
    with pytest.raises(ConfigurationError):
        training.TrainConfig(lr=0)
    with pytest.raises(ConfigurationError):
        training.TrainConfig.from_dict({'learning_rate': 1.})
    assert training.TrainConfig(lr='1e-4').lr == 1e-4
    assert training.TrainConfig(clip_grad_norm='5').clip_grad_norm == 5.
    for bad in (0, -1., 'five'):
        with pytest.raises(ConfigurationError):
            training.TrainConfig(clip_grad_norm=bad)


def test_scaled_size():
    assert [training.scaled_size(352, s) for s in (0.75, 1.0, 1.25)] == [256, 352, 448]
    assert [training.scaled_size(64, s) for s in (0.75, 1.0, 1.25)] == [64, 64, 96]
    assert training.scaled_size(32, 0.1) == 32
    for size in (64, 288, 352):
        for scale in (0.5, 0.75, 1.0, 1.25, 1.5):
            assert training.scaled_size(size, scale) % 32 == 0
    with pytest.raises(ValidationError):
        training.scaled_size(352, 0)


def test_boundary_weights_interior():
    weights = training.boundary_weights(torch.ones(1, 1, 64, 64))
    assert torch.allclose(weights[..., 16:48, 16:48], torch.ones(1, 1, 32, 32))
    gt = torch.zeros(1, 1, 64, 64)
    gt[..., 16:48, 16:48] = 1
    weights = training.boundary_weights(gt)
    assert weights[0, 0, 16, 32] > weights[0, 0, 32, 32]


def test_loss_ordering_on_empty_mask():
    gt = torch.zeros(1, 1, 16, 16)
    low = training.structure_loss(torch.full_like(gt, -20.), gt)
    assert low < training.structure_loss(torch.zeros_like(gt), gt)


def test_loss_is_finite_and_nonnegative():
    torch.manual_seed(0)
    for _ in range(20):
        gt = (torch.rand(2, 1, 16, 16) > 0.5).float()
        loss = training.structure_loss(torch.randn(2, 1, 16, 16) * 5, gt)
        assert torch.isfinite(loss) and loss >= 0


def test_aligned_beats_inverted():
    g = torch.Generator().manual_seed(1)
    for _ in range(100):
        gt = (torch.rand(1, 1, 12, 12, generator=g) > 0.5).float()
        aligned = 4 * (2 * gt - 1)
        assert training.structure_loss(aligned, gt) < training.structure_loss(-aligned, gt)


def test_loss_gradient():
    g = torch.Generator().manual_seed(2)
    gt = (torch.rand(1, 1, 6, 6, generator=g) > 0.5).double()
    logits = torch.randn(1, 1, 6, 6, generator=g, dtype=torch.float64, requires_grad=True)
    assert torch.autograd.gradcheck(
        lambda x: training.structure_loss(x, gt), (logits, ), eps=1e-4, atol=1e-6, rtol=1e-3)


def test_loss_errors():
    with pytest.raises(ShapeError):
        training.structure_loss(torch.zeros(1, 1, 8, 8), torch.zeros(1, 1, 4, 4))
    with pytest.raises(ValidationError):
        training.structure_loss(torch.zeros(1, 1, 8, 8), torch.full((1, 1, 8, 8), 0.5))


def test_dice_iou_examples():
    a = np.zeros((8, 8))
    a[2:6, 2:6] = 1
    assert training.dice(a, a) == 1. and training.iou(a, a) == 1.
    b = np.zeros((8, 8))
    b[6:, 6:] = 1
    assert training.dice(a, b) == 0. and training.iou(a, b) == 0.
    half = np.zeros((8, 8))
    half[2:4, 2:6] = 1
    assert training.dice(half, a) == pytest.approx(2 / 3)
    assert training.iou(half, a) == pytest.approx(0.5)
    empty = np.zeros((8, 8))
    assert training.dice(empty, empty) == 1. and training.iou(empty, empty) == 1.


def test_non_binary_masks():
    with pytest.raises(ValidationError):
        training.dice(np.full((4, 4), 0.5), np.ones((4, 4)))
    with pytest.raises(ValidationError):
        training.iou(np.ones((4, 4)), np.full((4, 4), 2))


def test_metrics_match_pixel_counting():
    rng = np.random.RandomState(3)
    for _ in range(1000):
        a = rng.rand(8, 8) < rng.rand()
        b = rng.rand(8, 8) < rng.rand()
        inter = union = na = nb = 0
        for x, y in zip(a.flat, b.flat):
            inter += x and y
            union += x or y
            na += x
            nb += y
        d, i = training.dice(a, b), training.iou(a, b)
        if union:
            assert d == 2. * inter / (na + nb)
            assert i == float(inter) / union
        assert abs(d - 2 * i / (1 + i)) <= 1e-12
        assert 0 <= i <= d <= 1


def test_evaluate_constant_models():
    report = training.evaluate(ConstantLogits(20.), samples(1), name='ones')
    assert report.dice == 1. and report.miou == 1. and report.n_images == 3
    assert report.dataset == 'ones'
    assert training.evaluate(ConstantLogits(20.), samples(0)).dice == 0.
    assert training.evaluate(ConstantLogits(-20.), samples(0)).dice == 1.


def test_evaluate_native_resolution():
    sample = data.SegSample(image=torch.randn(3, 40, 50), mask=torch.ones(1, 40, 50), id='x')
    report = training.evaluate(ConstantLogits(20.), [sample], image_size=64)
    assert report.dice == 1.


def test_evaluate_empty():
    with pytest.raises(ValidationError):
        training.evaluate(ConstantLogits(0.), [])


def test_report_ordering(tiny_config, toy_set):
    m = model.build(tiny_config, seed=0)
    report = training.evaluate(m, toy_set)
    assert 0 <= report.miou <= report.dice <= 1
    assert m.training


def test_train_writes_history_and_checkpoint(tmp_path, tiny_config, toy_set):
    m = model.build(tiny_config, seed=0)
    result = training.train(m, toy_set, quick_config(), out_dir=str(tmp_path))
    assert len(result.history) == 2
    assert result.steps == 4
    assert all(math.isfinite(r['mean_loss']) for r in result.history)
    with open(str(tmp_path / training.LOSS_HISTORY)) as handle:
        lines = [json.loads(line) for line in handle]
    assert lines == result.history
    assert set(lines[0]) == {'epoch', 'mean_loss', 'lr'}
    assert os.path.exists(result.checkpoint)
    loaded = model.load_checkpoint(result.checkpoint)
    assert loaded.config == tiny_config


def test_train_is_deterministic(tiny_config, toy_set):
    histories = []
    for _ in range(2):
        m = model.build(tiny_config, seed=0)
        histories.append(training.train(m, toy_set, quick_config()).history)
    assert histories[0] == histories[1]


def test_max_steps(tiny_config, toy_set):
    m = model.build(tiny_config, seed=0)
    result = training.train(m, toy_set, quick_config(epochs=5, max_steps=3))
    assert result.steps == 3
    assert len(result.history) == 2


def test_clipped_step_bounds_gradient(tiny_config, toy_set):
    m = model.build(tiny_config, seed=0)
    training.train(m, toy_set, quick_config(max_steps=1, clip_grad_norm=1e-3))
    grads = [p.grad for p in m.parameters() if p.grad is not None]
    assert grads
    norm = torch.norm(torch.stack([g.norm() for g in grads])).item()
    assert norm <= 1e-3 * (1 + 1e-4)


def test_loose_clip_leaves_history_unchanged(tiny_config, toy_set):
    histories = []
    for clip in (None, 1e9):
        m = model.build(tiny_config, seed=0)
        histories.append(training.train(m, toy_set, quick_config(clip_grad_norm=clip)).history)
    assert histories[0] == histories[1]


def test_nan_aborts(tiny_config, toy_set):
    m = model.build(tiny_config, seed=0)
    with torch.no_grad():
        m.encoder.projections[0].bias.fill_(float('nan'))
    with pytest.raises(TrainingError, match='encoder.projections.0.bias'):
        training.train(m, toy_set, quick_config())


def test_empty_training_set(tiny_config):
    with pytest.raises(ValidationError):
        training.train(model.build(tiny_config, seed=0), [], quick_config())


@pytest.mark.slow
def test_overfits_toy_set(toy_set):
    config = model.ModelConfig(preset='TINY', variant='hfs+rta', image_size=64)
    m = model.build(config, seed=7)
    train_config = training.TrainConfig(batch_size=4, epochs=200, seed=7, deterministic=True)
    result = training.train(m, toy_set, train_config)
    assert result.steps == 200
    assert result.history[-1]['mean_loss'] < result.history[0]['mean_loss']
    assert training.evaluate(m, toy_set).dice > 0.95
