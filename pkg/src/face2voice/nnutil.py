"""Shared torch building blocks.

Everything here runs in float64 on unbatched (time, dim) tensors; the models
are small enough that per-utterance processing is cheaper than padding and
masking, and it keeps the code close to the math.
"""

from __future__ import annotations

import math

import numpy as np
import torch
from torch import nn

DTYPE = torch.float64


def tensor_from(array) -> torch.Tensor:
    return torch.as_tensor(np.asarray(array), dtype=DTYPE)


def seeded_init(module: nn.Module, seed: int, scale: float = 0.02) -> None:
    """Deterministically initialize all parameters from a private generator.

    Parameters are visited in sorted name order, so the result depends only on
    the module's parameter names/shapes and the seed, never on global RNG
    state or construction order.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in sorted(module.named_parameters(), key=lambda kv: kv[0]):
            if p.dim() >= 2:
                p.copy_(torch.empty(p.shape, dtype=DTYPE).normal_(0.0, scale, generator=gen))
            elif name.endswith("weight"):  # norm gains
                p.fill_(1.0)
            else:
                p.zero_()


def positional_signal(length: int, dim: int) -> torch.Tensor:
    """Sinusoidal position encoding, shape (length, dim)."""
    pos = torch.arange(length, dtype=DTYPE)[:, None]
    i = torch.arange(dim // 2, dtype=DTYPE)[None, :]
    angles = pos / torch.pow(10000.0, 2.0 * i / dim)
    signal = torch.zeros(length, dim, dtype=DTYPE)
    signal[:, 0::2] = torch.sin(angles)
    signal[:, 1::2] = torch.cos(angles)
    return signal


class SelfAttention(nn.Module):
    def __init__(self, dim: int, n_heads: int):
        super().__init__()
        if dim % n_heads:
            raise ValueError("dim must be divisible by n_heads")
        self.n_heads = n_heads
        self.head_dim = dim // n_heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        t, _ = x.shape
        q, k, v = self.qkv(x).chunk(3, dim=-1)
        # (heads, t, head_dim)
        q = q.view(t, self.n_heads, self.head_dim).transpose(0, 1)
        k = k.view(t, self.n_heads, self.head_dim).transpose(0, 1)
        v = v.view(t, self.n_heads, self.head_dim).transpose(0, 1)
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if mask is not None:
            scores = scores.masked_fill(~mask[None, :, :], float("-inf"))
        out = torch.softmax(scores, dim=-1) @ v
        return self.proj(out.transpose(0, 1).reshape(t, -1))


class FeedForward(nn.Module):
    def __init__(self, dim: int, mult: int = 4):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, mult * dim), nn.GELU(), nn.Linear(mult * dim, dim))

    def forward(self, x):
        return self.net(x)


class CondLayerNorm(nn.Module):
    """Layer norm whose gain and bias are linear functions of a condition vector."""

    def __init__(self, dim: int, cond_dim: int):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False)
        self.to_gain = nn.Linear(cond_dim, dim)
        self.to_bias = nn.Linear(cond_dim, dim)

    def forward(self, x: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        return self.norm(x) * (1.0 + self.to_gain(cond)) + self.to_bias(cond)


class TransformerBlock(nn.Module):
    """Pre-norm transformer block; conditional layer norm when cond_dim is set."""

    def __init__(self, dim: int, n_heads: int, cond_dim: int | None = None):
        super().__init__()
        self.conditional = cond_dim is not None
        if self.conditional:
            self.norm1 = CondLayerNorm(dim, cond_dim)
            self.norm2 = CondLayerNorm(dim, cond_dim)
        else:
            self.norm1 = nn.LayerNorm(dim)
            self.norm2 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, n_heads)
        self.ffn = FeedForward(dim)

    def forward(self, x, cond: torch.Tensor | None = None, mask: torch.Tensor | None = None):
        if self.conditional:
            x = x + self.attn(self.norm1(x, cond), mask=mask)
            x = x + self.ffn(self.norm2(x, cond))
        else:
            x = x + self.attn(self.norm1(x), mask=mask)
            x = x + self.ffn(self.norm2(x))
        return x


def module_arrays(module: nn.Module) -> dict[str, np.ndarray]:
    """All parameters and buffers as named float64 numpy arrays."""
    out = {}
    for name, p in module.named_parameters():
        out[name] = p.detach().cpu().numpy().astype("<f8")
    for name, b in module.named_buffers():
        out[name] = b.detach().cpu().numpy().astype("<f8")
    return out


def load_module_arrays(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
    states = dict(module.named_parameters())
    states.update(dict(module.named_buffers()))
    with torch.no_grad():
        for name, target in states.items():
            key = prefix + name
            if key not in arrays:
                raise KeyError(f"checkpoint missing array {key!r}")
            value = tensor_from(arrays[key])
            if tuple(value.shape) != tuple(target.shape):
                raise ValueError(
                    f"shape mismatch for {key!r}: checkpoint {tuple(value.shape)}, "
                    f"model {tuple(target.shape)}"
                )
            target.copy_(value)
