"""Network building blocks: linear, layer norm, attention, transformer layers.

All layers are pre-norm and operate on token tensors shaped (..., t, C),
so the same code serves single sequences and instance-batched ones.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class ConfigError(ValueError):
    """Inconsistent layer / model configuration."""


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    shape = (fan_in, fan_out) if shape is None else shape
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> Tensor:
    limit = np.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape), requires_grad=True)


class Module:
    """Plain attribute-walking container; no registration ceremony."""

    def named_params(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor):
                if value.requires_grad:
                    out[key] = value
            elif isinstance(value, Module):
                out.update(value.named_params(f"{key}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_params(f"{key}.{i}."))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        out[f"{key}.{i}"] = item
        return out

    def params(self) -> list[Tensor]:
        return list(self.named_params().values())

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad = None

    def freeze(self) -> None:
        for p in self.params():
            p.requires_grad = False

    def state_arrays(self) -> dict[str, np.ndarray]:
        """All parameters (frozen included) as raw arrays, for checkpoints."""
        out: dict[str, np.ndarray] = {}
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                out[name] = value.data
            elif isinstance(value, Module):
                for k, v in value.state_arrays().items():
                    out[f"{name}.{k}"] = v
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for k, v in item.state_arrays().items():
                            out[f"{name}.{i}.{k}"] = v
                    elif isinstance(item, Tensor):
                        out[f"{name}.{i}"] = item.data
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        have = self.state_arrays()
        missing = sorted(set(have) - set(arrays))
        if missing:
            raise ConfigError(f"checkpoint missing tensors: {missing[:5]}")
        for name, value in arrays.items():
            if name in have:
                if have[name].shape != value.shape:
                    raise ConfigError(f"shape mismatch for {name}: {have[name].shape} vs {value.shape}")
                have[name][...] = value


class Linear(Module):
    def __init__(self, rng, in_dim: int, out_dim: int, zero_init: bool = False):
        if zero_init:
            self.weight = Tensor(np.zeros((in_dim, out_dim)), requires_grad=True)
        else:
            self.weight = xavier_uniform(rng, in_dim, out_dim)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ag.affine(x, self.weight, self.bias)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)


class Mlp(Module):
    """Two-layer GELU MLP."""

    def __init__(self, rng, in_dim: int, hidden: int, out_dim: int):
        self.fc1 = Linear(rng, in_dim, hidden)
        self.fc2 = Linear(rng, hidden, out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ag.gelu(self.fc1(x)))


class Adapter(Module):
    """Residual bottleneck: x + up(gelu(down(x))).

    Zero-initialized up-projection makes the adapter an exact identity at
    init, so enabling fresh adapters cannot change step-0 predictions.
    """

    def __init__(self, rng, dim: int, bottleneck: int = 64):
        if bottleneck < 1:
            raise ConfigError("adapter bottleneck must be >= 1")
        self.down_weight = kaiming_uniform(rng, dim, (dim, bottleneck))
        self.down_bias = Tensor(np.zeros(bottleneck), requires_grad=True)
        self.up_weight = Tensor(np.zeros((bottleneck, dim)), requires_grad=True)
        self.up_bias = Tensor(np.zeros(dim), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        h = ag.gelu(ag.matmul(x, self.down_weight) + self.down_bias)
        return x + ag.matmul(h, self.up_weight) + self.up_bias


class MultiHeadAttention(Module):
    def __init__(self, rng, dim: int, heads: int):
        if dim % heads != 0:
            raise ConfigError(f"channel dim {dim} not divisible by heads {heads}")
        self.heads = heads
        self.head_dim = dim // heads
        self.wq = Linear(rng, dim, dim)
        self.wk = Linear(rng, dim, dim)
        self.wv = Linear(rng, dim, dim)
        self.wo = Linear(rng, dim, dim)

    def _split_heads(self, x: Tensor) -> Tensor:
        # (..., t, C) -> (..., h, t, d)
        t = x.shape[-2]
        lead = x.shape[:-2]
        return ag.swapaxes(x.reshape(lead + (t, self.heads, self.head_dim)), -2, -3)

    def __call__(self, x: Tensor, kv: Tensor | None = None, addmask=None) -> Tensor:
        """Attention of ``x`` over ``kv`` (self-attention when kv is None).

        ``addmask`` is additive over key positions: shape (t_kv,) or
        broadcastable to (..., t_q, t_kv); entries 0 or NEG_INF.
        """
        kv = x if kv is None else kv
        q = self._split_heads(self.wq(x))
        k = self._split_heads(self.wk(kv))
        v = self._split_heads(self.wv(kv))
        scores = ag.matmul(q, ag.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.head_dim))
        attn = ag.masked_softmax(scores, addmask)
        ctx = ag.matmul(attn, v)  # (..., h, t, d)
        merged = ag.swapaxes(ctx, -2, -3)
        lead = merged.shape[:-2]
        merged = merged.reshape(lead + (self.heads * self.head_dim,))
        return self.wo(merged)


class TransformerLayer(Module):
    """Pre-norm block: attention + 2-layer GELU feed-forward, both residual.

    Optional adapters wrap the sublayer outputs; ``adapter_mode`` is one of
    None, "ffn_only", "attn_and_ffn".
    """

    def __init__(self, rng, dim: int, heads: int, d_ffn: int, adapter_mode: str | None = None, adapter_dim: int = 64):
        self.dim = dim
        self.norm1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(rng, dim, heads)
        self.norm2 = LayerNorm(dim)
        self.ffn1 = Linear(rng, dim, d_ffn)
        self.ffn2 = Linear(rng, d_ffn, dim)
        self.attn_adapter = None
        self.ffn_adapter = None
        if adapter_mode is not None:
            self.attach_adapters(rng, adapter_mode, adapter_dim)

    def attach_adapters(self, rng, mode: str, adapter_dim: int = 64) -> None:
        if mode not in ("ffn_only", "attn_and_ffn"):
            raise ConfigError(f"unknown adapter mode {mode!r}")
        self.ffn_adapter = Adapter(rng, self.dim, adapter_dim)
        if mode == "attn_and_ffn":
            self.attn_adapter = Adapter(rng, self.dim, adapter_dim)

    def __call__(self, x: Tensor, kv: Tensor | None = None, addmask=None) -> Tensor:
        a = self.attn(self.norm1(x), kv=kv, addmask=addmask)
        if self.attn_adapter is not None:
            a = self.attn_adapter(a)
        x = x + a
        h = self.ffn2(ag.gelu(self.ffn1(self.norm2(x))))
        if self.ffn_adapter is not None:
            h = self.ffn_adapter(h)
        return x + h


def transformer_layer(tokens: Tensor, layer: TransformerLayer, addmask=None) -> Tensor:
    """Functional form used by tests: shape-preserving token update."""
    return layer(tokens, addmask=addmask)
