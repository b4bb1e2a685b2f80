"""Hybrid convolutional pyramid encoder.

A six-conv, three-stage backbone downsamples the input to strides 4/8/16;
the coarsest map is projected to the shared feature width and refined by one
multi-head self-attention block; top-down and bottom-up fusion passes mix
the scales; 1x1 projections bring every level to the same channel dim.

All layers are plain parameter containers over the tensor engine. Every
class exposes ``params()`` as a flat name -> Tensor dict so the trainer and
checkpoint code never need to know the architecture.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


@dataclass
class EncoderConfig:
    input_size: int = 64
    channels: tuple = (32, 64, 128)
    dim: int = 32
    attention_heads: int = 4

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.input_size % 16 != 0:
            raise ConfigError(f"input_size must be divisible by 16, got {self.input_size}")
        if len(self.channels) != 3:
            raise ConfigError(f"exactly three stage widths required, got {self.channels}")
        if self.dim % self.attention_heads != 0:
            raise ConfigError(
                f"dim {self.dim} not divisible by attention_heads {self.attention_heads}"
            )


@dataclass
class FeaturePyramid:
    """Aligned feature maps at strides 4, 8, 16, all with equal channel dim."""

    f1: Tensor
    f2: Tensor
    f3: Tensor

    @property
    def levels(self):
        return (self.f1, self.f2, self.f3)


# -- layers ------------------------------------------------------------------


class Conv:
    """3x3 (or 1x1) convolution with bias and optional ReLU."""

    def __init__(self, rng, c_in, c_out, kernel=3, stride=1, relu=True, gain=1.0):
        std = gain * np.sqrt(2.0 / (c_in * kernel * kernel))
        self.weight = Tensor(
            rng.standard_normal((c_out, c_in, kernel, kernel)) * std, requires_grad=True
        )
        self.bias = Tensor(np.zeros(c_out), requires_grad=True)
        self.stride = stride
        self.padding = kernel // 2
        self.relu = relu

    def __call__(self, x):
        out = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        out = out + self.bias.reshape(-1, 1, 1)
        return out.relu() if self.relu else out

    def params(self):
        return {"w": self.weight, "b": self.bias}


class Linear:
    def __init__(self, rng, d_in, d_out):
        self.weight = Tensor(
            rng.standard_normal((d_in, d_out)) * np.sqrt(1.0 / d_in), requires_grad=True
        )
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x):
        return x @ self.weight + self.bias

    def params(self):
        return {"w": self.weight, "b": self.bias}


class LayerNorm:
    """Per-token normalization over the last axis with learned scale/shift."""

    def __init__(self, d, eps=1e-6):
        self.gamma = Tensor(np.ones(d), requires_grad=True)
        self.beta = Tensor(np.zeros(d), requires_grad=True)
        self.eps = eps

    def __call__(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        return centered / (var + self.eps).sqrt() * self.gamma + self.beta

    def params(self):
        return {"g": self.gamma, "b": self.beta}


class SelfAttentionBlock:
    """Pre-norm multi-head self-attention + feedforward over a token grid.

    Tokens are the h*w cells of a coarse feature map; a learned embedding
    per grid cell carries position. Residual connections around both halves.
    """

    def __init__(self, rng, dim, heads, grid):
        if dim % heads != 0:
            raise ConfigError(f"dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.grid = grid
        self.pos = Tensor(
            rng.standard_normal((grid * grid, dim)) * 0.02, requires_grad=True
        )
        self.norm1 = LayerNorm(dim)
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.proj = Linear(rng, dim, dim)
        self.norm2 = LayerNorm(dim)
        self.ffn1 = Linear(rng, dim, 2 * dim)
        self.ffn2 = Linear(rng, 2 * dim, dim)

    def _split_heads(self, x, n_tokens):
        head_dim = self.dim // self.heads
        return x.reshape(n_tokens, self.heads, head_dim).transpose((1, 0, 2))

    def _attention(self, tokens):
        """Attention weights and values for pre-normalized tokens."""
        n_tokens = tokens.shape[0]
        head_dim = self.dim // self.heads
        q = self._split_heads(self.q(tokens), n_tokens)
        k = self._split_heads(self.k(tokens), n_tokens)
        v = self._split_heads(self.v(tokens), n_tokens)
        scores = (q @ k.transpose((0, 2, 1))) * (1.0 / np.sqrt(head_dim))
        weights = T.softmax(scores, axis=-1)
        mixed = (weights @ v).transpose((1, 0, 2)).reshape(n_tokens, self.dim)
        return weights, self.proj(mixed)

    def __call__(self, x):
        c, h, w = x.shape
        if h * w != self.pos.shape[0]:
            raise ShapeError(
                f"attention grid mismatch: map {h}x{w} vs embedding for {self.pos.shape[0]} cells"
            )
        tokens = x.reshape(c, h * w).transpose() + self.pos
        _, attended = self._attention(self.norm1(tokens))
        tokens = tokens + attended
        tokens = tokens + self.ffn2(self.ffn1(self.norm2(tokens)).relu())
        return tokens.transpose().reshape(c, h, w)

    def params(self):
        out = {"pos": self.pos}
        for name, layer in (
            ("norm1", self.norm1),
            ("q", self.q),
            ("k", self.k),
            ("v", self.v),
            ("proj", self.proj),
            ("norm2", self.norm2),
            ("ffn1", self.ffn1),
            ("ffn2", self.ffn2),
        ):
            for key, p in layer.params().items():
                out[f"{name}/{key}"] = p
        return out


# -- encoder -----------------------------------------------------------------


def _collect(prefix, layers):
    out = {}
    for name, layer in layers:
        for key, p in layer.params().items():
            out[f"{prefix}/{name}/{key}"] = p
    return out


class PyramidEncoder:
    def __init__(self, cfg: EncoderConfig, rng):
        c1, c2, c3 = cfg.channels
        d = cfg.dim
        self.cfg = cfg
        # Stage 1 halves twice (stride 4); stages 2 and 3 halve once each.
        self.s1a = Conv(rng, 3, c1, stride=2)
        self.s1b = Conv(rng, c1, c1, stride=2)
        self.s2a = Conv(rng, c1, c2, stride=2)
        self.s2b = Conv(rng, c2, c2)
        self.s3a = Conv(rng, c2, c3, stride=2)
        self.s3b = Conv(rng, c3, c3)

        self.coarse_proj = Conv(rng, c3, d, kernel=1, relu=False)
        self.attention = SelfAttentionBlock(
            rng, d, cfg.attention_heads, cfg.input_size // 16
        )

        # Top-down: project the upsampled coarser map into the finer width.
        self.td2 = Conv(rng, d, c2, kernel=1, relu=False)
        self.td1 = Conv(rng, c2, c1, kernel=1, relu=False)
        # Bottom-up: stride-2 conv of the finer fused map into the coarser.
        self.bu2 = Conv(rng, c1, c2, stride=2, relu=False)
        self.bu3 = Conv(rng, c2, d, stride=2, relu=False)

        # Small-gain output projections: the grouping softmax divides by a
        # temperature of order 0.1, so initial feature columns must keep
        # the logit spread below the spatial prior's sub-nat tilt or the
        # attention saturates before the prototypes have seen any gradient
        # and the prior loses its say in the competition (He scale here
        # gives column norms of 20-40, spreads of several nats).
        self.out1 = Conv(rng, c1, d, kernel=1, relu=False, gain=0.05)
        self.out2 = Conv(rng, c2, d, kernel=1, relu=False, gain=0.05)
        self.out3 = Conv(rng, d, d, kernel=1, relu=False, gain=0.05)

    def backbone_forward(self, image):
        s = self.cfg.input_size
        if image.shape != (3, s, s):
            raise ShapeError(f"expected image of shape (3, {s}, {s}), got {image.shape}")
        r1 = self.s1b(self.s1a(image))
        r2 = self.s2b(self.s2a(r1))
        r3 = self.s3b(self.s3a(r2))
        return r1, r2, r3

    def fuse_pyramid(self, stages, attended_coarse):
        r1, r2, _ = stages
        t3 = attended_coarse
        t2 = r2 + self.td2(T.upsample_nearest2(t3))
        t1 = r1 + self.td1(T.upsample_nearest2(t2))
        b1 = t1
        b2 = t2 + self.bu2(b1)
        b3 = t3 + self.bu3(b2)
        return FeaturePyramid(self.out1(b1), self.out2(b2), self.out3(b3))

    def __call__(self, image):
        stages = self.backbone_forward(image)
        attended = self.attention(self.coarse_proj(stages[2]))
        return self.fuse_pyramid(stages, attended)

    def params(self):
        out = _collect(
            "backbone",
            [
                ("s1a", self.s1a),
                ("s1b", self.s1b),
                ("s2a", self.s2a),
                ("s2b", self.s2b),
                ("s3a", self.s3a),
                ("s3b", self.s3b),
            ],
        )
        out.update(_collect("neck", [("coarse_proj", self.coarse_proj)]))
        for key, p in self.attention.params().items():
            out[f"attn/{key}"] = p
        out.update(
            _collect(
                "fuse",
                [
                    ("td2", self.td2),
                    ("td1", self.td1),
                    ("bu2", self.bu2),
                    ("bu3", self.bu3),
                    ("out1", self.out1),
                    ("out2", self.out2),
                    ("out3", self.out3),
                ],
            )
        )
        return out
