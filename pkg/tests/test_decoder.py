import pytest
import torch

from lmj.polyp import decoder
from lmj.polyp.errors import ShapeError


@pytest.fixture
def dec():
    torch.manual_seed(0)
    return decoder.Decoder(decoder.DecoderConfig(channels=32))


def test_output_resolution(dec, make_pyramid):
    levels = make_pyramid(size=352)
    assert tuple(dec(levels, levels, (352, 352)).shape) == (1, 1, 352, 352)
    assert tuple(decoder.decode(dec, levels, levels).shape) == (1, 1, 352, 352)


@pytest.mark.parametrize('size', [(64, 64), (96, 128)])
def test_any_divisible_size(dec, size):
    g = torch.Generator().manual_seed(1)
    levels = [torch.randn(2, 32, size[0] // s, size[1] // s, generator=g)
              for s in (4, 8, 16, 32)]
    assert tuple(dec(levels, levels, size).shape) == (2, 1) + size


def test_zero_head(dec, make_pyramid):
    with torch.no_grad():
        dec.head.weight.zero_()
        dec.head.bias.zero_()
    levels = make_pyramid()
    m = dec(levels, levels)
    assert torch.equal(m, torch.zeros_like(m))
    assert torch.equal(torch.sigmoid(m), torch.full_like(m, 0.5))


def test_every_fusion_weight_gets_gradient(dec, make_pyramid):
    dec(make_pyramid(seed=1), make_pyramid(seed=2)).sum().backward()
    raws = [f.raw.grad for f in dec.fusions]
    assert len(raws) == 4
    for grad in raws:
        assert (grad != 0).all()


def test_concatenation_order(dec, make_pyramid):
    seen = []
    dec.head.register_forward_hook(lambda module, inputs, output: seen.append(inputs[0]))
    levels = make_pyramid()
    levels[3] = torch.zeros_like(levels[3])
    dec(levels, levels)
    x = seen[0]
    assert x.shape[1] == 4 * 32
    assert torch.equal(x[:, -32:], torch.zeros_like(x[:, -32:]))
    assert x[:, :32].abs().sum() > 0


def test_mismatched_levels(dec, make_pyramid):
    with pytest.raises(ShapeError):
        dec(make_pyramid(), make_pyramid(size=128))
