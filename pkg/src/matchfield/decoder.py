"""Radiance-field decoder: modulated MLP, color head, and ray attention.

A query point enters as concat(positional-encoded position, raw view
direction). Every hidden layer's activation is modulated by a learned
scale-and-shift computed from the conditioning vector m (geometry prior
concatenated with the texture prior); the modulation maps start at zero,
so an untrained decoder is an unconditioned MLP. Density is not predicted
pointwise: per-point density features for all K samples of a ray pass
through one self-attention layer before the softplus head, letting points
along the same ray exchange occupancy evidence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .modules import GROUP_DECODER, Linear, MultiHeadAttention, ParamStore


class DecoderConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DecoderConfig:
    mlp_layers: int = 6
    width: int = 128
    pe_frequencies: int = 6          # L; encoded position has 3 + 6L dims
    ray_attention_heads: int = 4
    enable_ray_transformer: bool = True
    modulation: str = "film"         # "film" (scale/shift every layer) or "input_concat"

    def __post_init__(self):
        if self.width <= 0:
            raise DecoderConfigError(f"width must be positive, got {self.width}")
        if self.pe_frequencies < 0:
            raise DecoderConfigError(f"pe_frequencies must be >= 0, got {self.pe_frequencies}")
        if self.modulation not in ("film", "input_concat"):
            raise DecoderConfigError(f"unknown modulation mode '{self.modulation}'")

    @property
    def pe_dim(self) -> int:
        return 3 + 6 * self.pe_frequencies


def positional_encode(points: np.ndarray, num_frequencies: int) -> np.ndarray:
    """gamma(p) = (p, sin(2^0 pi p), cos(2^0 pi p), ..., sin/cos(2^{L-1} pi p)).

    points: (..., 3) in roughly [-1, 1]; output (..., 3 + 6L). Pure numpy:
    query positions are constants with respect to the trainable state.
    """
    p = np.asarray(points, dtype=np.float32)
    if p.shape[-1] != 3:
        raise DecoderConfigError(f"points must have a trailing dim of 3, got {p.shape}")
    parts = [p]
    for level in range(num_frequencies):
        ang = np.float32((2.0 ** level) * np.pi) * p
        parts.append(np.sin(ang))
        parts.append(np.cos(ang))
    return np.concatenate(parts, axis=-1)


class Decoder:
    """g: (gamma(p), d, m) -> (density feature, color); densities per ray.

    ``prior_dim`` is the width of the conditioning vector m and is fixed at
    construction (it depends on the relation variant and the view count).
    """

    def __init__(self, store: ParamStore, config: DecoderConfig, prior_dim: int):
        g = GROUP_DECODER
        self.config = config
        self.prior_dim = prior_dim
        self.dtype = store.dtype
        W = config.width
        in_dim = config.pe_dim + 3
        if config.modulation == "input_concat":
            in_dim += prior_dim
        self.layers: list[Linear] = []
        self.mod_scale: list[Linear] = []
        self.mod_shift: list[Linear] = []
        for k in range(config.mlp_layers):
            self.layers.append(Linear(store, f"decoder.mlp.layer{k}", in_dim, W,
                                      group=g, gain="kaiming"))
            if config.modulation == "film":
                self.mod_scale.append(Linear(store, f"decoder.mlp.mod{k}.scale",
                                             prior_dim, W, group=g, zero_init=True))
                self.mod_shift.append(Linear(store, f"decoder.mlp.mod{k}.shift",
                                             prior_dim, W, group=g, zero_init=True))
            in_dim = W
        self.density_feature = Linear(store, "decoder.density_feature", W, W, group=g)
        self.color_hidden = Linear(store, "decoder.color.hidden", W, W, group=g, gain="kaiming")
        self.color_out = Linear(store, "decoder.color.out", W, 3, group=g, zero_init=True)
        if config.enable_ray_transformer:
            self.ray_norm_g = store.add("decoder.ray.norm.gain", np.ones(W), group=g, decay=False)
            self.ray_norm_b = store.add("decoder.ray.norm.bias", np.zeros(W), group=g, decay=False)
            self.ray_attn = MultiHeadAttention(store, "decoder.ray.attn", W,
                                               config.ray_attention_heads, group=g)
        self.density_out = Linear(store, "decoder.density.out", W, 1, group=g, zero_init=True)

    def point_features(self, encoded_p: np.ndarray, directions: np.ndarray,
                       m: Tensor) -> tuple[Tensor, Tensor]:
        """Run the modulated MLP for a batch of query points.

        encoded_p: (Q, pe_dim) constants; directions: (Q, 3) unit rows;
        m: (Q, prior_dim) conditioning. Returns (density features (Q, W),
        colors (Q, 3) in [0, 1]).
        """
        if m.shape[-1] != self.prior_dim:
            raise DecoderConfigError(
                f"conditioning width {m.shape[-1]} does not match the decoder's "
                f"configured prior_dim {self.prior_dim}")
        cfg = self.config
        base = np.concatenate([encoded_p, directions], axis=-1).astype(self.dtype)
        if cfg.modulation == "input_concat":
            h = ad.concat([Tensor(base), m], axis=-1)
        else:
            h = Tensor(base)
        for k, layer in enumerate(self.layers):
            h = ad.relu(layer(h))
            if cfg.modulation == "film":
                scale = self.mod_scale[k](m)
                shift = self.mod_shift[k](m)
                h = ad.add(ad.mul(h, ad.add(scale, 1.0)), shift)
        dens_feat = self.density_feature(h)
        color = ad.sigmoid(self.color_out(ad.relu(self.color_hidden(h))))
        return dens_feat, color

    def ray_density(self, density_features: Tensor) -> Tensor:
        """Densities for all points of each ray: (R, K, W) -> (R, K) >= 0."""
        if density_features.ndim != 3:
            raise DecoderConfigError(
                f"expected (rays, samples, width) features, got {density_features.shape}")
        R, K, W = density_features.shape
        if K == 0:
            raise DecoderConfigError("rays must carry at least one sample")
        h = density_features
        if self.config.enable_ray_transformer:
            normed = ad.add(ad.mul(ad.layer_norm(h, axis=-1), self.ray_norm_g), self.ray_norm_b)
            h = ad.add(h, self.ray_attn(normed, normed))
        sigma = ad.softplus(self.density_out(h))
        return ad.reshape(sigma, (R, K))
