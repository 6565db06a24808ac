import pytest
import torch

from lmj.polyp import hfs
from lmj.polyp.errors import ConfigurationError, ShapeError
from lmj.polyp.rta import count_attention_layers


def synthesizer(encoder, mechanism='rta', **kwargs):
    config = hfs.HfsConfig(mechanism=mechanism, channels=32, depths=(1, 1, 1), **kwargs)
    return hfs.Synthesizer(config, encoder)


def perturb_refinement(synth, seed=0):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for block in synth.blocks:
            w = block.bottleneck2.conv2.weight
            w.copy_(torch.randn(w.shape, generator=g) * 0.1)


def test_output_shapes(tiny_encoder, make_pyramid):
    levels = make_pyramid(size=352)
    outputs = hfs.synthesize(synthesizer(tiny_encoder), levels)
    assert [o.shape for o in outputs] == [x.shape for x in levels]


def test_none_is_identity_at_init(tiny_encoder, make_pyramid):
    levels = make_pyramid()
    for x, y in zip(levels, synthesizer(tiny_encoder, 'none')(levels)):
        assert torch.equal(x, y)


def test_rta_and_ra_differ(tiny_encoder, make_pyramid):
    levels = make_pyramid()
    torch.manual_seed(1)
    rta = synthesizer(tiny_encoder, 'rta')
    ra = synthesizer(tiny_encoder, 'ra')
    perturb_refinement(rta)
    perturb_refinement(ra)
    diff = max((a - b).abs().max().item() for a, b in zip(rta(levels), ra(levels)))
    assert diff > 0


def test_level_independence(tiny_encoder, make_pyramid):
    synth = synthesizer(tiny_encoder)
    perturb_refinement(synth)
    levels = make_pyramid()
    before = synth(levels)
    levels[2] = levels[2] + torch.randn_like(levels[2])
    after = synth(levels)
    assert torch.equal(before[0], after[0])
    assert not torch.equal(before[1], after[1])


def test_outputs_finite(tiny_encoder, make_pyramid):
    synth = synthesizer(tiny_encoder)
    with torch.no_grad():
        for p in synth.parameters():
            p.normal_(0, 1)
    for y in synth(make_pyramid()):
        assert torch.isfinite(y).all()


def test_mechanism_blocks(tiny_encoder):
    assert count_attention_layers(synthesizer(tiny_encoder, 'ra')) == 0
    assert count_attention_layers(synthesizer(tiny_encoder, 'none')) == 0
    assert count_attention_layers(synthesizer(tiny_encoder, 'rta')) == 3


def test_depths_override(tiny_encoder):
    synth = hfs.Synthesizer(hfs.HfsConfig(channels=32, depths=(2, 3, 1)), tiny_encoder)
    assert [len(b.stage.blocks) for b in synth.blocks[:3]] == [2, 3, 1]


def test_shared_stages(tiny_encoder):
    synth = synthesizer(tiny_encoder, share_stage_weights=True)
    for i, block in enumerate(synth.blocks[:3]):
        assert block.stage is tiny_encoder.stages[i + 1]


def test_errors(tiny_encoder, make_pyramid):
    synth = synthesizer(tiny_encoder)
    with pytest.raises(ConfigurationError):
        synth(make_pyramid()[:3])
    with pytest.raises(ShapeError):
        synth(make_pyramid(channels=16))
    with pytest.raises(ConfigurationError):
        hfs.HfsConfig(mechanism='dense')
    with pytest.raises(ConfigurationError):
        hfs.HfsConfig(depths=(1, 1))
