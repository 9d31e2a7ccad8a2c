"""Minimal layer/module system on top of the autodiff tensors.

Parameters register themselves through attribute assignment; names follow the
attribute path (``backbone.stages.0.blocks.1.attn.qkv.weight``). Every layer
takes an explicit ``numpy.random.Generator`` so that construction order plus
one seed fully determines the initial weights.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Parameter(Tensor):
    """A trainable tensor; always requires grad."""

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def named_parameters(self, prefix=""):
        for key, val in vars(self).items():
            name = f"{prefix}.{key}" if prefix else key
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name)

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters())

    def state_dict(self):
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state):
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise KeyError(f"state dict mismatch: missing={missing[:4]} extra={extra[:4]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float32)
            if arr.shape != p.data.shape:
                raise ValueError(f"{name}: checkpoint shape {arr.shape} != model shape {p.data.shape}")
            p.data = arr.copy()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class ModuleList(Module):
    def __init__(self, modules=()):
        self._items = list(modules)

    def append(self, m):
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]

    def named_parameters(self, prefix=""):
        for i, m in enumerate(self._items):
            name = f"{prefix}.{i}" if prefix else str(i)
            yield from m.named_parameters(name)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True, std=0.02, zero_init=False):
        if zero_init:
            w = np.zeros((out_features, in_features), dtype=np.float32)
        else:
            w = rng.normal(0.0, std, (out_features, in_features)).astype(np.float32)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(out_features, dtype=np.float32)) if bias else None

    def forward(self, x):
        y = T.matmul(x, T.transpose(self.weight, (1, 0)))
        if self.bias is not None:
            y = y + self.bias
        return y


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, bias=True):
        fan_in = in_ch * kernel * kernel
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), (out_ch, in_ch, kernel, kernel))
        self.weight = Parameter(w.astype(np.float32))
        self.bias = Parameter(np.zeros(out_ch, dtype=np.float32)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        y = T.conv2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y


class ConvTranspose2d(Module):
    """Weight layout (in_ch, out_ch, kh, kw); forward is the conv2d adjoint."""

    def __init__(self, in_ch, out_ch, kernel, rng, stride=1, padding=0, bias=True):
        fan_in = in_ch * kernel * kernel
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), (in_ch, out_ch, kernel, kernel))
        self.weight = Parameter(w.astype(np.float32))
        self.bias = Parameter(np.zeros(out_ch, dtype=np.float32)) if bias else None
        self.stride = stride
        self.padding = padding

    def forward(self, x):
        y = T.conv_transpose2d(x, self.weight, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = y + self.bias.reshape(1, -1, 1, 1)
        return y


class LayerNorm(Module):
    def __init__(self, dim, eps=1e-5):
        self.gamma = Parameter(np.ones(dim, dtype=np.float32))
        self.beta = Parameter(np.zeros(dim, dtype=np.float32))
        self.eps = eps

    def forward(self, x):
        return T.layer_norm(x, self.gamma, self.beta, self.eps)
