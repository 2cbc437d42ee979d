"""Layer building blocks on top of :mod:`graphslt.tensor`."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor

# Additive score for masked attention keys; exp() of it underflows to exactly 0.
MASK_VALUE = -1e9


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal table: even columns ``sin(p / 10000^(2i/d))``, odd columns ``cos``."""
    pos = np.arange(length, dtype=np.float64)[:, None]
    i = np.arange(0, d_model, 2, dtype=np.float64)
    angle = pos / np.power(10000.0, i / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(angle)
    table[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return table


class Module:
    """Minimal container: parameters, buffers and submodules found via attributes."""

    def __init__(self):
        self.training = True
        self.rng: np.random.Generator | None = None

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                value.name = name
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Module):
                yield from value.named_buffers(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_buffers(f"{name}.{i}.")
        for key, value in getattr(self, "_buffers", {}).items():
            yield f"{prefix}{key}", value

    def modules(self) -> Iterator["Module"]:
        yield self
        for value in vars(self).values():
            if isinstance(value, Module):
                yield from value.modules()
            elif isinstance(value, (list, tuple)):
                for item in value:
                    if isinstance(item, Module):
                        yield from item.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def set_rng(self, rng: np.random.Generator) -> None:
        for m in self.modules():
            m.rng = rng

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def drop(self, x: Tensor, rate: float) -> Tensor:
        return T.dropout(x, rate, self.training, self.rng)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Parameter(xavier_uniform(rng, n_in, n_out))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm(Module):
    """Batch normalization over valid rows of a padded ``(B, K, C)`` batch."""

    def __init__(self, d: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.gain = Parameter(np.ones(d))
        self.bias = Parameter(np.zeros(d))
        self._buffers = {"running_mean": np.zeros(d), "running_var": np.ones(d)}
        self.momentum = momentum
        self.eps = eps

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        running = (self._buffers["running_mean"], self._buffers["running_var"])
        return T.batch_norm(x, self.gain, self.bias, mask, running, self.training, self.momentum, self.eps)


class FeedForward(Module):
    """Position-wise ``Linear -> ReLU -> Linear``."""

    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator):
        super().__init__()
        self.inner = Linear(d_model, d_ff, rng)
        self.outer = Linear(d_ff, d_model, rng)

    def __call__(self, x: Tensor) -> Tensor:
        return self.outer(T.relu(self.inner(x)))


def attention_bias(key_mask: np.ndarray | None, n_query: int, n_key: int, causal: bool = False) -> np.ndarray | None:
    """Additive score bias of shape ``(B or 1, 1, Kq, Kk)``; ``None`` if nothing is masked."""
    bias = None
    if key_mask is not None:
        km = np.asarray(key_mask, dtype=bool)
        if not km.all():
            bias = np.where(km, 0.0, MASK_VALUE)[:, None, None, :]
    if causal:
        tri = np.triu(np.full((n_query, n_key), MASK_VALUE), k=1)[None, None]
        bias = tri if bias is None else bias + tri
    return bias


class MultiHeadAttention(Module):
    """Scaled dot-product attention with ``n_heads`` heads on batched ``(B, K, d)`` input."""

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        super().__init__()
        if d_model % n_heads:
            raise ValueError(f"d_model {d_model} not divisible by n_heads {n_heads}")
        self.n_heads = n_heads
        self.query = Linear(d_model, d_model, rng)
        # a key bias shifts every score of a query equally, so softmax ignores it
        self.key = Linear(d_model, d_model, rng, bias=False)
        self.value = Linear(d_model, d_model, rng)
        self.output = Linear(d_model, d_model, rng)
        self.last_weights: np.ndarray | None = None

    def __call__(
        self,
        query: Tensor,
        memory: Tensor,
        key_mask: np.ndarray | None = None,
        causal: bool = False,
    ) -> Tensor:
        b, kq, d = query.shape
        kk = memory.shape[1]
        h = self.n_heads
        dh = d // h
        q = self.query(query).reshape(b, kq, h, dh).transpose(0, 2, 1, 3)
        k = self.key(memory).reshape(b, kk, h, dh).transpose(0, 2, 3, 1)
        v = self.value(memory).reshape(b, kk, h, dh).transpose(0, 2, 1, 3)
        scores = T.matmul(q, k) * (1.0 / math.sqrt(dh))
        bias = attention_bias(key_mask, kq, kk, causal)
        if bias is not None:
            scores = scores + bias
        weights = T.softmax(scores, axis=-1)
        self.last_weights = weights.data
        ctx = T.matmul(weights, v).transpose(0, 2, 1, 3).reshape(b, kq, d)
        return self.output(ctx)
