# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Polyp segmentation with a pyramid transformer and reverse attention.'''

from .errors import (PolypError, ConfigurationError, ShapeError, ValidationError,
                     IngestionError, TrainingError)
from .backbone import Encoder, FeaturePyramid, build_backbone
from .fusion import FusionWeights, fuse
from .rta import RtaBlock, RaBlock
from .hfs import Synthesizer
from .decoder import Decoder
from .model import ModelConfig, RTAFormer, build, count_parameters, load_checkpoint
from .data import SegSample, SplitSpec, load_dataset, make_toy_set, resize_pair
from .training import TrainConfig, MetricReport, evaluate, structure_loss, train


def load_model(path, device='cpu'):
    '''Return the model stored in a checkpoint, ready for inference.'''
    model = load_checkpoint(path, device)
    model.eval()
    return model
