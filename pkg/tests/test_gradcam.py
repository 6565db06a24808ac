import numpy as np
import pytest
import torch

from lmj.polyp import gradcam, model
from lmj.polyp.errors import ConfigurationError, ShapeError


@pytest.fixture
def net(tiny_config):
    m = model.build(tiny_config, seed=0)
    with torch.no_grad():
        for block in m.hfs.blocks:
            block.bottleneck2.conv2.weight.normal_(0, 0.1)
    return m


def test_six_layers_per_reverse_block(net):
    for level in (1, 2, 3):
        assert gradcam.available_layers(net, level) == list(gradcam.LAYERS)
    assert gradcam.available_layers(net, 4) == ['2.0', '2.1', '2.2']


def test_heatmaps(net, toy_set):
    heatmaps, prob = gradcam.GradCam(net, level=1)(toy_set[0].image)
    assert list(heatmaps) == list(gradcam.LAYERS)
    for name, heatmap in heatmaps.items():
        assert heatmap.shape == (16, 16), name
        assert heatmap.min() >= 0 and heatmap.max() <= 1, name
    assert prob.shape == (64, 64)
    assert net.training


def test_deeper_level_sizes(net, toy_set):
    heatmaps, _ = gradcam.GradCam(net, level=3, layers=['1.2', '2.2'])(toy_set[0].image)
    assert list(heatmaps) == ['1.2', '2.2']
    assert all(h.shape == (4, 4) for h in heatmaps.values())


def test_hooks_are_removed(net, toy_set):
    gradcam.GradCam(net, level=1)(toy_set[0].image)
    for conv in gradcam.block_layers(net.hfs.blocks[0]).values():
        assert not conv._forward_hooks


def test_unknown_layer(net):
    with pytest.raises(ConfigurationError, match='1.0'):
        gradcam.GradCam(net, level=1, layers=['3.0'])
    with pytest.raises(ConfigurationError):
        gradcam.GradCam(net, level=5)


def test_base_variant_has_no_blocks():
    base = model.build(model.ModelConfig(preset='TINY', variant='base'), seed=0)
    with pytest.raises(ConfigurationError):
        gradcam.GradCam(base)


def test_bad_image(net):
    with pytest.raises(ShapeError):
        gradcam.GradCam(net)(torch.zeros(1, 3, 64, 64))


def test_normalize_map():
    assert np.array_equal(gradcam.normalize_map(np.full((3, 3), 2.)), np.zeros((3, 3)))
    m = gradcam.normalize_map(np.array([[1., 3.], [2., 5.]]))
    assert m.min() == 0 and m.max() == 1


def test_region_statistics():
    mask = np.zeros((32, 32))
    mask[8:24, 8:24] = 1
    inside = np.zeros((32, 32))
    inside[12:20, 12:20] = 1
    stats = gradcam.region_statistics(inside, mask)
    assert stats['interior'] == pytest.approx(1.)
    assert stats['boundary'] == 0
    assert stats['centroid_offset'] == pytest.approx(0., abs=1e-9)

    ring = np.zeros((32, 32))
    ring[7:25, 7:25] = 1
    ring[9:23, 9:23] = 0
    stats = gradcam.region_statistics(ring, mask)
    assert stats['boundary'] == pytest.approx(1.)
    assert stats['interior'] == 0


def test_region_statistics_resizes_mask():
    mask = np.zeros((64, 64))
    mask[16:48, 16:48] = 1
    stats = gradcam.region_statistics(np.ones((16, 16)), mask)
    assert 0 < stats['interior'] < 1 and 0 < stats['boundary'] < 1


def test_region_statistics_counts_corners():
    mask = np.zeros((32, 32))
    mask[8:24, 8:24] = 1
    for y, x in ((7, 7), (7, 24), (24, 7), (24, 24)):
        corner = np.zeros((32, 32))
        corner[y, x] = 1
        stats = gradcam.region_statistics(corner, mask)
        assert stats['boundary'] == 1. and stats['interior'] == 0., (y, x)
