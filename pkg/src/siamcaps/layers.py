"""Convolution, batch normalization, dense layers, and initialization.

Layers are parameter containers plus pure forward functions on the autodiff
tape.  Convolution is a single tape node with a hand-written vjp built on
strided views and tensordot; the naive nested-loop reference it must match
(within 1e-10) lives in the test suite.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .rng import SplitMix64, derive_seed


def glorot_uniform(shape, fan_in: int, fan_out: int, seed: int,
                   name: str = "") -> Tensor:
    bound = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return ad.uniform(shape, -bound, bound, seed, requires_grad=True,
                      name=name)


class Conv2dParams:
    """Square-kernel 2-d convolution parameters (cross-correlation)."""

    def __init__(self, kernel: Tensor, bias: Tensor, stride: int = 1,
                 padding: int = 0):
        if kernel.data.ndim != 4:
            raise ShapeError(f"conv kernel must be rank 4, got "
                             f"{list(kernel.shape)}")
        if kernel.shape[2] != kernel.shape[3]:
            raise ShapeError(f"conv kernels must be square, got "
                             f"{kernel.shape[2]}x{kernel.shape[3]}")
        if stride < 1 or padding < 0:
            raise ValueError(f"bad stride/padding ({stride}, {padding})")
        self.kernel = kernel
        self.bias = bias
        self.stride = stride
        self.padding = padding

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]

    def parameter_count(self) -> int:
        return self.kernel.size + self.bias.size

    def named_parameters(self, prefix: str) -> list:
        return [(prefix + "/kernel", self.kernel), (prefix + "/bias", self.bias)]


def conv2d_init(in_ch: int, out_ch: int, ksize: int, stride: int = 1,
                padding: int = 0, seed: int = 0, name: str = "conv") -> Conv2dParams:
    fan_in = in_ch * ksize * ksize
    fan_out = out_ch * ksize * ksize
    kernel = glorot_uniform([out_ch, in_ch, ksize, ksize], fan_in, fan_out,
                            derive_seed(seed, 1), name=name + "/kernel")
    bias = ad.zeros([out_ch], requires_grad=True, name=name + "/bias")
    return Conv2dParams(kernel, bias, stride, padding)


def _conv_cols(xp: np.ndarray, kh: int, kw: int, stride: int,
               ho: int, wo: int) -> np.ndarray:
    """6-d view (N, C, kh, kw, Ho, Wo) over the padded input; no copy."""
    sn, sc, sh, sw = xp.strides
    shape = (xp.shape[0], xp.shape[1], kh, kw, ho, wo)
    strides = (sn, sc, sh, sw, sh * stride, sw * stride)
    return np.lib.stride_tricks.as_strided(xp, shape, strides, writeable=False)


def conv2d_forward(x: Tensor, p: Conv2dParams) -> Tensor:
    if x.data.ndim != 4:
        raise ShapeError(f"conv2d input must be rank 4 [N,C,H,W], got "
                         f"{list(x.shape)}")
    n, c, h, w = x.shape
    o, ck, kh, kw = p.kernel.shape
    if c != ck:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {ck}")
    s, pad = p.stride, p.padding
    ho = (h + 2 * pad - kh) // s + 1
    wo = (w + 2 * pad - kw) // s + 1
    if ho < 1 or wo < 1 or kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit input "
                         f"{h}x{w} with padding {pad}")

    xp = x.data if pad == 0 else np.pad(
        x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _conv_cols(xp, kh, kw, s, ho, wo)
    out = np.tensordot(p.kernel.data, cols, axes=([1, 2, 3], [1, 2, 3]))
    out = out.transpose(1, 0, 2, 3) + p.bias.data[None, :, None, None]

    kdata = p.kernel.data

    def vjp(g):
        gk = np.tensordot(g, cols, axes=([0, 2, 3], [0, 4, 5]))
        gb = g.sum(axis=(0, 2, 3))
        gxp = np.zeros_like(xp)
        # scatter: for a fixed kernel offset the strided targets are disjoint
        for ki in range(kh):
            for kj in range(kw):
                contrib = np.tensordot(g, kdata[:, :, ki, kj],
                                       axes=([1], [0]))
                gxp[:, :, ki:ki + s * ho:s, kj:kj + s * wo:s] += \
                    contrib.transpose(0, 3, 1, 2)
        gx = gxp if pad == 0 else gxp[:, :, pad:pad + h, pad:pad + w]
        return (gx, gk, gb)

    return ad._emit("conv2d", out, [x, p.kernel, p.bias], vjp)


class BatchNormParams:
    """Per-channel affine normalization with running statistics.

    Running stats live outside the graph (plain arrays) and use the biased
    batch variance, matching the normalization itself.
    """

    def __init__(self, ch: int, momentum: float = 0.1, eps: float = 1e-5,
                 name: str = "bn"):
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        self.gamma = ad.ones([ch], requires_grad=True, name=name + "/gamma")
        self.beta = ad.zeros([ch], requires_grad=True, name=name + "/beta")
        self.running_mean = np.zeros(ch)
        self.running_var = np.ones(ch)
        self.momentum = momentum
        self.eps = eps

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    def parameter_count(self) -> int:
        return self.gamma.size + self.beta.size

    def named_parameters(self, prefix: str) -> list:
        return [(prefix + "/gamma", self.gamma), (prefix + "/beta", self.beta)]

    def named_buffers(self, prefix: str) -> list:
        return [(prefix + "/running_mean", self.running_mean),
                (prefix + "/running_var", self.running_var)]


def batchnorm_forward(x: Tensor, p: BatchNormParams, training: bool) -> Tensor:
    if x.data.ndim < 2:
        raise ShapeError(f"batchnorm input must be rank >= 2, got "
                         f"{list(x.shape)}")
    if x.shape[1] != p.channels:
        raise ShapeError(f"batchnorm: input has {x.shape[1]} channels, "
                         f"params have {p.channels}")
    stat_shape = (1, p.channels) + (1,) * (x.data.ndim - 2)
    axes = (0,) + tuple(range(2, x.data.ndim))
    if training:
        if x.shape[0] < 2:
            raise ValueError("batch too small")
        mu = ad.mean(x, axis=axes, keepdims=True)
        centered = ad.sub(x, mu)
        var = ad.mean(ad.square(centered), axis=axes, keepdims=True)
        xhat = ad.div(centered, ad.sqrt(ad.add_scalar(var, p.eps)))
        m = p.momentum
        p.running_mean = (1 - m) * p.running_mean + m * mu.data.reshape(-1)
        p.running_var = (1 - m) * p.running_var + m * var.data.reshape(-1)
    else:
        rm = Tensor(p.running_mean.reshape(stat_shape))
        rv = Tensor(p.running_var.reshape(stat_shape))
        xhat = ad.div(ad.sub(x, rm), ad.sqrt(ad.add_scalar(rv, p.eps)))
    gamma = ad.reshape(p.gamma, stat_shape)
    beta = ad.reshape(p.beta, stat_shape)
    return ad.add(ad.mul(xhat, gamma), beta)


class DenseParams:
    def __init__(self, weight: Tensor, bias: Tensor):
        self.weight = weight
        self.bias = bias

    def parameter_count(self) -> int:
        return self.weight.size + self.bias.size

    def named_parameters(self, prefix: str) -> list:
        return [(prefix + "/weight", self.weight), (prefix + "/bias", self.bias)]


def dense_init(d_in: int, d_out: int, seed: int = 0,
               name: str = "dense") -> DenseParams:
    weight = glorot_uniform([d_in, d_out], d_in, d_out,
                            derive_seed(seed, 1), name=name + "/weight")
    bias = ad.zeros([d_out], requires_grad=True, name=name + "/bias")
    return DenseParams(weight, bias)


def dense_forward(x: Tensor, p: DenseParams) -> Tensor:
    if x.data.ndim != 2 or x.shape[1] != p.weight.shape[0]:
        raise ShapeError(f"dense: input {list(x.shape)} does not match weight "
                         f"{list(p.weight.shape)}")
    out = ad.matmul(x, p.weight)
    return ad.add(out, ad.reshape(p.bias, (1, p.bias.shape[0])))


def dropout_mask(shape, rate: float, rng: SplitMix64) -> Tensor:
    """Inverted-dropout mask: keep with probability 1-rate, scale kept units."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return ad.ones(shape)
    n = int(np.prod(shape))
    keep = (rng.uniform(n) >= rate).astype(np.float64).reshape(shape)
    return Tensor(keep / (1.0 - rate))
