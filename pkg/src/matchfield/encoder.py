"""Per-view CNN features plus a pairwise cross-view attention stack.

Images are encoded once by a weight-sharing CNN to 1/8 resolution, lifted
with a fixed 2D sine/cosine positional encoding, then every unordered view
pair is processed jointly by a stack of windowed attention blocks: each
block runs self-attention within local windows, cross-attention between
the two views of a pair, and a feed-forward layer, all pre-norm residual.
Odd blocks shift the window grid by half a window (cyclic roll) so
information crosses window borders. A small convolutional upsampler lifts
the pair features to 1/4 resolution.

Both views of a pair travel through one weight-shared stack as the two
halves of the batch axis, so swapping the inputs of a pair swaps the
outputs bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .modules import (
    GROUP_ENC_CNN,
    GROUP_ENC_TRANSFORMER,
    GROUP_ENC_UPSAMPLER,
    Conv2d,
    FeedForward,
    Linear,
    MultiHeadAttention,
    ParamStore,
)


class EncoderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    num_blocks: int = 6
    window_split: int = 2       # feature map tiles into split x split windows
    channels: int = 128
    ffn_expansion: int = 4
    num_heads: int = 1
    enable_self_attn: bool = True
    enable_cross_attn: bool = True

    def __post_init__(self):
        if self.num_blocks < 0:
            raise EncoderConfigError(f"num_blocks must be >= 0, got {self.num_blocks}")
        if self.window_split < 1:
            raise EncoderConfigError(f"window_split must be >= 1, got {self.window_split}")
        if self.channels % 4 != 0:
            raise EncoderConfigError(
                f"channels must be divisible by 4 for the 2D positional encoding, "
                f"got {self.channels}")
        if self.channels % self.num_heads != 0:
            raise EncoderConfigError(
                f"channels {self.channels} not divisible by {self.num_heads} heads")

    @property
    def attention_active(self) -> bool:
        return self.num_blocks > 0 and (self.enable_self_attn or self.enable_cross_attn)


def positional_encoding_2d(height: int, width: int, channels: int) -> np.ndarray:
    """Fixed sinusoidal encoding, (C, H, W): first C/2 channels encode the
    row index, the rest the column index, sin/cos interleaved per frequency."""
    if channels % 4 != 0:
        raise EncoderConfigError(f"positional encoding needs channels % 4 == 0, got {channels}")

    def axis_table(length: int, dim: int) -> np.ndarray:
        pos = np.arange(length, dtype=np.float64)[:, None]
        idx = np.arange(dim // 2, dtype=np.float64)[None, :]
        ang = pos / np.power(10000.0, 2.0 * idx / dim)
        table = np.zeros((length, dim))
        table[:, 0::2] = np.sin(ang)
        table[:, 1::2] = np.cos(ang)
        return table

    half = channels // 2
    rows = axis_table(height, half)
    cols = axis_table(width, half)
    out = np.zeros((channels, height, width))
    out[:half] = rows.T[:, :, None]
    out[half:] = cols.T[:, None, :]
    return out


# -- CNN backbone -------------------------------------------------------------


class ChannelNorm:
    """Layer norm across the channel axis of an NCHW map, with affine."""

    def __init__(self, store: ParamStore, prefix: str, channels: int, *, group: str):
        self.g = store.add(f"{prefix}.gain", np.ones((1, channels, 1, 1)), group=group, decay=False)
        self.b = store.add(f"{prefix}.bias", np.zeros((1, channels, 1, 1)), group=group, decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x, axis=1), self.g), self.b)


class ResidualBlock:
    def __init__(self, store: ParamStore, prefix: str, channels: int, *, group: str):
        self.conv1 = Conv2d(store, f"{prefix}.conv1", channels, channels, 3, group=group, padding=1)
        self.norm = ChannelNorm(store, f"{prefix}.norm", channels, group=group)
        self.conv2 = Conv2d(store, f"{prefix}.conv2", channels, channels, 3, group=group, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        h = self.conv2(ad.leaky_relu(self.norm(self.conv1(x)), 0.2))
        return ad.leaky_relu(ad.add(x, h), 0.2)


class ConvBackbone:
    """Three stride-2 stages, 3 -> 32 -> 64 -> C channels, 1/8 resolution."""

    def __init__(self, store: ParamStore, prefix: str, out_channels: int):
        g = GROUP_ENC_CNN
        widths = (32, 64, out_channels)
        self.stages = []
        c_in = 3
        for k, c_out in enumerate(widths):
            conv = Conv2d(store, f"{prefix}.stage{k}.down", c_in, c_out, 3, group=g,
                          stride=2, padding=1)
            norm = ChannelNorm(store, f"{prefix}.stage{k}.norm", c_out, group=g)
            res = ResidualBlock(store, f"{prefix}.stage{k}.res", c_out, group=g)
            self.stages.append((conv, norm, res))
            c_in = c_out

    def __call__(self, images: Tensor) -> Tensor:
        x = images
        for conv, norm, res in self.stages:
            x = res(ad.leaky_relu(norm(conv(x)), 0.2))
        return x


# -- windowed attention over view pairs ----------------------------------------


def _partition(x: Tensor, split: int) -> tuple[Tensor, tuple[int, int, int]]:
    """(B, C, H, W) -> (B*split^2, tokens, C) window-major token stacks."""
    B, C, H, W = x.shape
    hs, ws = H // split, W // split
    t = ad.transpose(x, (0, 2, 3, 1))
    t = ad.reshape(t, (B, split, hs, split, ws, C))
    t = ad.transpose(t, (0, 1, 3, 2, 4, 5))
    return ad.reshape(t, (B * split * split, hs * ws, C)), (B, H, W)


def _unpartition(tokens: Tensor, split: int, dims: tuple[int, int, int], C: int) -> Tensor:
    B, H, W = dims
    hs, ws = H // split, W // split
    t = ad.reshape(tokens, (B, split, split, hs, ws, C))
    t = ad.transpose(t, (0, 1, 3, 2, 4, 5))
    t = ad.reshape(t, (B, H, W, C))
    return ad.transpose(t, (0, 3, 1, 2))


class AttentionBlock:
    """[windowed self-attn] -> [windowed cross-attn] -> [FFN], pre-norm residual."""

    def __init__(self, store: ParamStore, prefix: str, cfg: EncoderConfig):
        g = GROUP_ENC_TRANSFORMER
        C = cfg.channels
        self.cfg = cfg
        if cfg.enable_self_attn:
            self.norm_self = _TokenNorm(store, f"{prefix}.self.norm", C, group=g)
            self.attn_self = MultiHeadAttention(store, f"{prefix}.self.attn", C,
                                                cfg.num_heads, group=g)
        if cfg.enable_cross_attn:
            self.norm_cross = _TokenNorm(store, f"{prefix}.cross.norm", C, group=g)
            self.attn_cross = MultiHeadAttention(store, f"{prefix}.cross.attn", C,
                                                 cfg.num_heads, group=g)
        self.norm_ffn = _TokenNorm(store, f"{prefix}.ffn.norm", C, group=g)
        self.ffn = FeedForward(store, f"{prefix}.ffn", C, cfg.ffn_expansion, group=g)

    def __call__(self, tokens: Tensor) -> Tensor:
        cfg = self.cfg
        if cfg.enable_self_attn:
            h = self.norm_self(tokens)
            tokens = ad.add(tokens, self.attn_self(h, h))
        if cfg.enable_cross_attn:
            h = self.norm_cross(tokens)
            # The batch holds the two views of every pair as its two halves
            # (all A-view windows, then all B-view windows); rolling by half
            # the batch aligns each window with its partner view's window.
            partner = ad.roll(h, (tokens.shape[0] // 2,), (0,))
            tokens = ad.add(tokens, self.attn_cross(h, partner))
        h = self.norm_ffn(tokens)
        return ad.add(tokens, self.ffn(h))


class _TokenNorm:
    """Affine layer norm over the channel axis of (B, T, C) tokens."""

    def __init__(self, store: ParamStore, prefix: str, dim: int, *, group: str):
        self.g = store.add(f"{prefix}.gain", np.ones(dim), group=group, decay=False)
        self.b = store.add(f"{prefix}.bias", np.zeros(dim), group=group, decay=False)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.add(ad.mul(ad.layer_norm(x, axis=-1), self.g), self.b)


class Upsampler:
    """2x feature upsampling: bilinear resize -> conv -> leaky-relu -> conv,
    plus the bilinear-resized input as a skip connection."""

    def __init__(self, store: ParamStore, prefix: str, channels: int):
        g = GROUP_ENC_UPSAMPLER
        self.conv1 = Conv2d(store, f"{prefix}.conv1", channels, channels, 3, group=g, padding=1)
        self.conv2 = Conv2d(store, f"{prefix}.conv2", channels, channels, 3, group=g, padding=1)

    def __call__(self, x: Tensor) -> Tensor:
        up = bilinear_resize_2x(x)
        return ad.add(up, self.conv2(ad.leaky_relu(self.conv1(up), 0.2)))


def bilinear_resize_2x(x: Tensor) -> Tensor:
    """Center-aligned 2x bilinear upsampling of an NCHW map.

    Output sample 2i sits at source coordinate i - 0.25 and sample 2i+1 at
    i + 0.25, so each is a 3:1 mix of the two nearest source entries
    (edge-clamped). Interleaving the two phases per axis reproduces
    border-clamped bilinear sampling exactly but keeps the backward pass a
    handful of dense slice/add ops.
    """

    def upsample_last_axis(t: Tensor) -> Tensor:
        n = t.shape[-1]
        first = t[..., :1]
        last = t[..., n - 1:]
        left = ad.concat([first, t[..., : n - 1]], axis=-1)   # clamped shift right
        right = ad.concat([t[..., 1:], last], axis=-1)        # clamped shift left
        even = ad.add(ad.mul(left, 0.25), ad.mul(t, 0.75))
        odd = ad.add(ad.mul(t, 0.75), ad.mul(right, 0.25))
        stacked = ad.concat([ad.reshape(even, (*even.shape, 1)),
                             ad.reshape(odd, (*odd.shape, 1))], axis=-1)
        return ad.reshape(stacked, (*t.shape[:-1], 2 * n))

    B, C, H, W = x.shape
    wide = upsample_last_axis(x)                                   # (B, C, H, 2W)
    tall = upsample_last_axis(ad.transpose(wide, (0, 1, 3, 2)))    # (B, C, 2W, 2H)
    return ad.transpose(tall, (0, 1, 3, 2))


# -- full encoder ---------------------------------------------------------------


@dataclass
class EncodedViews:
    """Pair-aligned feature pyramids for one set of input views.

    feats8/feats4 stack the two views of every pair along the batch axis:
    row p holds view pairs[p][0], row p + P holds pairs[p][1].
    """

    pairs: list[tuple[int, int]]
    feats8: Tensor           # (2P, C, H/8, W/8)
    feats4: Tensor           # (2P, C, H/4, W/4)
    image_hw: tuple[int, int]

    @property
    def num_views(self) -> int:
        return max(max(p) for p in self.pairs) + 1


def view_pairs(n: int) -> list[tuple[int, int]]:
    if n < 2:
        raise EncoderConfigError(f"need at least 2 views for pairwise matching, got {n}")
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


class Encoder:
    def __init__(self, store: ParamStore, config: EncoderConfig):
        self.config = config
        self.dtype = store.dtype
        self.backbone = ConvBackbone(store, "encoder.cnn", config.channels)
        self.blocks = [AttentionBlock(store, f"encoder.transformer.block{k}", config)
                       for k in range(config.num_blocks)]
        self.upsampler = Upsampler(store, "encoder.upsampler", config.channels)

    # images: (N, H, W, 3) float array in [0, 1]
    def conv_features(self, images: np.ndarray) -> Tensor:
        imgs = np.asarray(images)
        if imgs.ndim != 4 or imgs.shape[-1] != 3:
            raise EncoderConfigError(f"expected (N, H, W, 3) images, got {imgs.shape}")
        imgs = _pad_to_multiple(imgs, 8 * self.config.window_split)
        x = Tensor(np.ascontiguousarray(imgs.transpose(0, 3, 1, 2)), dtype=self.dtype)
        return self.backbone(x)

    def transform_pairs(self, feats_a: Tensor, feats_b: Tensor) -> tuple[Tensor, Tensor]:
        """Run the attention stack over P pairs; returns pair-specific maps.

        feats_a/feats_b: (P, C, H, W) convolutional features (before
        positional encoding). Output order matches input order.
        """
        if feats_a.shape != feats_b.shape:
            raise EncoderConfigError(
                f"pair features must share a shape, got {feats_a.shape} vs {feats_b.shape}")
        cfg = self.config
        P, C, H, W = feats_a.shape
        x = ad.concat([feats_a, feats_b], axis=0)
        if not cfg.attention_active:
            return _split_halves(x, P)
        if H % cfg.window_split or W % cfg.window_split:
            raise EncoderConfigError(
                f"feature map {H}x{W} does not tile into {cfg.window_split}x"
                f"{cfg.window_split} windows")
        pe = positional_encoding_2d(H, W, C)[None]
        x = ad.add(x, Tensor(pe.astype(x.dtype)))
        shift_h = (H // cfg.window_split + 1) // 2
        shift_w = (W // cfg.window_split + 1) // 2
        for k, block in enumerate(self.blocks):
            shifted = k % 2 == 1
            if shifted:
                x = ad.roll(x, (-shift_h, -shift_w), (2, 3))
            tokens, dims = _partition(x, cfg.window_split)
            tokens = block(tokens)
            x = _unpartition(tokens, cfg.window_split, dims, C)
            if shifted:
                x = ad.roll(x, (shift_h, shift_w), (2, 3))
        return _split_halves(x, P)

    def encode(self, images: np.ndarray) -> EncodedViews:
        """Full pipeline: conv once per view, attend per pair, upsample."""
        n = len(images)
        pairs = view_pairs(n)
        conv = self.conv_features(images)
        idx_a = [i for i, _ in pairs]
        idx_b = [j for _, j in pairs]
        fa, fb = self.transform_pairs(conv[idx_a], conv[idx_b])
        feats8 = ad.concat([fa, fb], axis=0)
        feats4 = self.upsampler(feats8)
        H, W = np.asarray(images).shape[1:3]
        return EncodedViews(pairs=pairs, feats8=feats8, feats4=feats4, image_hw=(H, W))


def _split_halves(x: Tensor, half: int) -> tuple[Tensor, Tensor]:
    return x[:half], x[half:]


def _pad_to_multiple(images: np.ndarray, multiple: int) -> np.ndarray:
    H, W = images.shape[1:3]
    ph = (-H) % multiple
    pw = (-W) % multiple
    if ph or pw:
        images = np.pad(images, ((0, 0), (0, ph), (0, pw), (0, 0)), mode="edge")
    return images
