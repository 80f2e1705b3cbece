"""Learnable building blocks: convolutions and linear maps over `Tensor`s.

Parameters are registered in a shared ordered dict under dotted keys
(`decoder.s2.fuse.0.weight`), which is what checkpoints and the optimizer
iterate over.
"""

import math
from dataclasses import dataclass

import numpy as np

import tensor as T
from constants import LEAKY_SLOPE


class Initializer:
    """Centered uniform fan-in initialisation, U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""

    def __init__(self, seed):
        self.rng = np.random.default_rng(seed)

    def uniform(self, shape, fan_in, zero=False):
        if zero:
            return np.zeros(shape)
        bound = 1.0 / math.sqrt(fan_in)
        return self.rng.uniform(-bound, bound, size=shape)


def register(params, key, array):
    t = T.Tensor.parameter(array)
    params[key] = t
    return t


@dataclass
class Conv:
    weight: T.Tensor
    bias: T.Tensor
    stride: int = 1
    padding: int = 0

    @classmethod
    def create(cls, params, key, init, c_in, c_out, k=3, stride=1, zero=False):
        fan_in = c_in * k * k
        weight = register(params, f"{key}.weight", init.uniform((c_out, c_in, k, k), fan_in, zero))
        bias = register(params, f"{key}.bias", init.uniform((c_out,), fan_in, zero))
        return cls(weight, bias, stride, k // 2)

    @property
    def out_channels(self):
        return self.weight.shape[0]

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


@dataclass
class Linear:
    weight: T.Tensor
    bias: T.Tensor = None

    @classmethod
    def create(cls, params, key, init, c_in, c_out, bias=True):
        weight = register(params, f"{key}.weight", init.uniform((c_in, c_out), c_in))
        b = register(params, f"{key}.bias", init.uniform((c_out,), c_in)) if bias else None
        return cls(weight, b)

    def __call__(self, x):
        y = T.matmul(x, self.weight)
        if self.bias is None:
            return y
        return y + T.expand(self.bias, y.shape)


def conv_stack(layers, x, slope=LEAKY_SLOPE):
    """Apply convolutions with a leaky gate between them (none after the last)."""
    for i, layer in enumerate(layers):
        x = layer(x)
        if i < len(layers) - 1:
            x = T.leaky_relu(x, slope)
    return x


def make_conv_stack(params, key, init, channels, k=3, zero_last=False):
    """Convs mapping channels[0] -> channels[1] -> ... -> channels[-1]."""
    layers = []
    for i in range(len(channels) - 1):
        last = i == len(channels) - 2
        layers.append(Conv.create(params, f"{key}.{i}", init, channels[i], channels[i + 1], k,
                                  zero=zero_last and last))
    return layers


def tokens(x):
    """(C, H, W) feature map -> (H*W, C) token matrix."""
    c, h, w = x.shape
    return T.transpose(T.reshape(x, (c, h * w)), (1, 0))


def untokens(x, h, w):
    """(H*W, C) token matrix -> (C, H, W) feature map."""
    c = x.shape[1]
    return T.reshape(T.transpose(x, (1, 0)), (c, h, w))
