# Copyright (c) 2026 The lmj.polyp contributors
#
# Released under the MIT License; see the README for the full text.

'''Fast feature fusion: a normalized, learnable weighted sum plus Swish.

Each fused input gets one raw scalar weight. Raw weights are passed through a
relu and divided by their sum plus a small epsilon, which keeps the effective
weights nonnegative and bounded by 1 without the cost of a softmax.

References:
  "EfficientDet: Scalable and Efficient Object Detection"
    M. Tan, R. Pang and Q. V. Le, 2020.
'''

import torch
import torch.nn as nn

from .errors import ConfigurationError, ShapeError


def swish(x):
    '''Return x * sigmoid(x).'''
    return x * torch.sigmoid(x)


class FusionWeights(nn.Module):
    '''Learnable weights for fusing n same-shape feature maps.

    n: Number of inputs that will be fused.
    epsilon: Stabilizer added to the normalizing sum.
    '''

    def __init__(self, n, epsilon=1e-4):
        super().__init__()
        if n < 1:
            raise ConfigurationError('cannot fuse %d inputs' % n)
        self.n = n
        self.epsilon = epsilon
        self.raw = nn.Parameter(torch.ones(n))

    def extra_repr(self):
        return 'n=%d, epsilon=%g' % (self.n, self.epsilon)

    def effective(self):
        '''Return the normalized weights as a tensor of length n.'''
        w = torch.relu(self.raw)
        return w / (w.sum() + self.epsilon)

    def forward(self, inputs):
        inputs = list(inputs)
        if len(inputs) != self.n:
            raise ConfigurationError('fusion expects %d inputs, got %d' % (
                self.n, len(inputs)))
        shape = inputs[0].shape
        for i, x in enumerate(inputs[1:], 1):
            if x.shape != shape:
                raise ShapeError('fusion input %d has shape %s, input 0 has %s' % (
                    i, tuple(x.shape), tuple(shape)))
        w = self.effective()
        total = w[0] * inputs[0]
        for i in range(1, self.n):
            total = total + w[i] * inputs[i]
        return swish(total)


def fuse(weights, inputs):
    '''Fuse a list of same-shape feature maps with the given FusionWeights.'''
    return weights(inputs)


def effective_weights(weights):
    '''Return the normalized weights as a list of floats.'''
    with torch.no_grad():
        return [float(w) for w in weights.effective()]
