"""Parameter store and small neural building blocks.

Parameters are registered by dotted name into a :class:`ParamStore` at
construction time. Construction order is deterministic, and iteration is
always in sorted-name order, so optimizer updates and checkpoints are
reproducible. Each parameter carries two tags: an optimizer group (the
encoder and decoder train at different rates, and gradient clipping
targets the cross-view attention stack only) and a weight-decay flag
(biases and normalization gains are excluded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

# Optimizer groups. GROUP_ENC_TRANSFORMER is the subset whose global grad
# norm gets clipped; all ENC_* groups share the encoder learning rate.
GROUP_ENC_CNN = "encoder_cnn"
GROUP_ENC_TRANSFORMER = "encoder_transformer"
GROUP_ENC_UPSAMPLER = "encoder_upsampler"
GROUP_DECODER = "decoder"

ENCODER_GROUPS = (GROUP_ENC_CNN, GROUP_ENC_TRANSFORMER, GROUP_ENC_UPSAMPLER)


@dataclass
class ParamEntry:
    tensor: Tensor
    group: str
    decay: bool


class ParamStore:
    """Named collection of trainable tensors with group/decay tags."""

    def __init__(self, seed: int = 0, dtype=np.float32):
        self._entries: dict[str, ParamEntry] = {}
        self.rng = np.random.default_rng(seed)
        self.dtype = dtype

    def add(self, name: str, data: np.ndarray, *, group: str, decay: bool = True) -> Tensor:
        if name in self._entries:
            raise ValueError(f"duplicate parameter name '{name}'")
        t = Tensor(np.asarray(data, dtype=self.dtype), requires_grad=True)
        self._entries[name] = ParamEntry(t, group, decay)
        return t

    def names(self) -> list[str]:
        return sorted(self._entries)

    def entry(self, name: str) -> ParamEntry:
        return self._entries[name]

    def get(self, name: str) -> Tensor:
        return self._entries[name].tensor

    def items(self):
        for name in self.names():
            yield name, self._entries[name]

    def group_names(self, *groups: str) -> list[str]:
        return [n for n, e in self.items() if e.group in groups]

    def zero_grads(self) -> None:
        for _, e in self.items():
            e.tensor.grad = None

    def num_params(self) -> int:
        return sum(e.tensor.size for e in self._entries.values())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {n: self._entries[n].tensor.data for n in self.names()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.names()) - set(arrays)
        extra = set(arrays) - set(self.names())
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing={sorted(missing)} "
                             f"unexpected={sorted(extra)}")
        for name, entry in self.items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != entry.tensor.shape:
                raise ValueError(f"parameter '{name}': shape {arr.shape} does not match "
                                 f"expected {entry.tensor.shape}")
            entry.tensor.data = arr.copy()

    # -- initializers (consume the store's rng in construction order) -------

    def kaiming(self, shape, fan_in: int) -> np.ndarray:
        return self.rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)

    def xavier(self, shape, fan_in: int, fan_out: int) -> np.ndarray:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return self.rng.uniform(-bound, bound, size=shape)


class Linear:
    """y = x @ W + b with W of shape (d_in, d_out)."""

    def __init__(self, store: ParamStore, prefix: str, d_in: int, d_out: int, *,
                 group: str, bias: bool = True, zero_init: bool = False, gain: str = "xavier"):
        if zero_init:
            w = np.zeros((d_in, d_out))
        elif gain == "kaiming":
            w = store.kaiming((d_in, d_out), fan_in=d_in)
        else:
            w = store.xavier((d_in, d_out), fan_in=d_in, fan_out=d_out)
        self.w = store.add(f"{prefix}.weight", w, group=group, decay=True)
        self.b = store.add(f"{prefix}.bias", np.zeros(d_out), group=group, decay=False) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        # Flatten leading dims so BLAS sees one big GEMM, not a batch of
        # small ones (the batched path is an order of magnitude slower for
        # the many-windows/few-tokens shapes the encoder produces).
        lead = x.shape[:-1]
        flattened = x.ndim > 2
        if flattened:
            x = ad.reshape(x, (-1, x.shape[-1]))
        out = ad.matmul(x, self.w)
        if self.b is not None:
            out = ad.add(out, self.b)
        if flattened:
            out = ad.reshape(out, (*lead, out.shape[-1]))
        return out


class LayerNorm:
    """Affine layer normalization over the last axis."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, *, group: str):
        self.g = store.add(f"{prefix}.gain", np.ones(dim), group=group, decay=False)
        self.b = store.add(f"{prefix}.bias", np.zeros(dim), group=group, decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x, axis=-1), self.g), self.b)


class Conv2d:
    """3x3-style NCHW convolution wrapper with bias."""

    def __init__(self, store: ParamStore, prefix: str, c_in: int, c_out: int, k: int, *,
                 group: str, stride: int = 1, padding: int = 0, zero_init: bool = False):
        fan_in = c_in * k * k
        w = np.zeros((c_out, c_in, k, k)) if zero_init else store.kaiming((c_out, c_in, k, k), fan_in)
        self.w = store.add(f"{prefix}.weight", w, group=group, decay=True)
        self.b = store.add(f"{prefix}.bias", np.zeros(c_out), group=group, decay=False)
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        out = ad.conv2d(x, self.w, stride=self.stride, padding=self.padding)
        return ad.add(out, ad.reshape(self.b, (1, self.b.shape[0], 1, 1)))


class MultiHeadAttention:
    """Scaled dot-product attention over (B, T, C) token stacks.

    Query and key/value sources may differ (cross-attention). Heads split
    the channel dim; a final linear merges them back.
    """

    def __init__(self, store: ParamStore, prefix: str, dim: int, num_heads: int, *, group: str):
        if dim % num_heads != 0:
            raise ValueError(f"attention dim {dim} not divisible by {num_heads} heads")
        self.dim = dim
        self.num_heads = num_heads
        self.head_dim = dim // num_heads
        self.q = Linear(store, f"{prefix}.q", dim, dim, group=group)
        self.k = Linear(store, f"{prefix}.k", dim, dim, group=group)
        self.v = Linear(store, f"{prefix}.v", dim, dim, group=group)
        self.out = Linear(store, f"{prefix}.out", dim, dim, group=group)
        self.scale = 1.0 / np.sqrt(self.head_dim)

    def __call__(self, q_tokens: Tensor, kv_tokens: Tensor) -> Tensor:
        B, T, C = q_tokens.shape
        S = kv_tokens.shape[1]
        H, D = self.num_heads, self.head_dim

        def split(t, L):
            # (B, L, C) -> (B, H, L, D)
            return ad.transpose(ad.reshape(t, (B, L, H, D)), (0, 2, 1, 3))

        q = split(self.q(q_tokens), T)
        k = split(self.k(kv_tokens), S)
        v = split(self.v(kv_tokens), S)
        att = ad.softmax(ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), self.scale))
        mixed = ad.matmul(att, v)                              # (B, H, T, D)
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (B, T, C))
        return self.out(merged)


class FeedForward:
    """Two-layer position-wise MLP with relu, expansion factor 4 by default."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, expansion: int, *, group: str):
        self.fc1 = Linear(store, f"{prefix}.fc1", dim, dim * expansion, group=group, gain="kaiming")
        self.fc2 = Linear(store, f"{prefix}.fc2", dim * expansion, dim, group=group)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(ad.relu(self.fc1(x)))
