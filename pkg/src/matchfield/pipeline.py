"""Composition of encoder, matching, decoder, and renderer into one model.

The model factors into an image encoder (images + cameras -> pair feature
pyramids) and a conditioned field (point + direction + priors -> color and
density), glued here. Every ablation axis is pure configuration: attention
sub-layers and the ray transformer toggle off, the pair relation swaps
between five variants, and either feature resolution can be dropped.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cameras import Camera
from .decoder import Decoder, DecoderConfig, positional_encode
from .encoder import EncodedViews, Encoder, EncoderConfig
from .matching import (
    RES_EIGHTH,
    RES_QUARTER,
    RELATION_NAMES,
    geometry_prior,
    make_relation,
    texture_prior,
)
from .modules import ParamStore


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    relation: str = "group_cosine"
    resolutions: tuple[str, ...] = (RES_EIGHTH, RES_QUARTER)
    groups: tuple[int, int] = (2, 8)
    num_views: int = 3

    def __post_init__(self):
        if self.relation not in RELATION_NAMES:
            raise ModelConfigError(f"relation must be one of {RELATION_NAMES}, "
                                   f"got '{self.relation}'")
        if not self.resolutions:
            raise ModelConfigError("at least one feature resolution is required")
        for r in self.resolutions:
            if r not in (RES_EIGHTH, RES_QUARTER):
                raise ModelConfigError(f"unknown resolution '{r}'")
        if len(set(self.resolutions)) != len(self.resolutions):
            raise ModelConfigError(f"duplicate resolutions in {self.resolutions}")
        if self.num_views < 2:
            raise ModelConfigError(f"need at least 2 input views, got {self.num_views}")
        g, gh = self.groups
        if self.relation in ("group_cosine", "variance"):
            C = self.encoder.channels
            if g < 1 or gh < 1 or C % g or C % gh:
                raise ModelConfigError(
                    f"groups {self.groups} must divide the channel count {C}")


@dataclass
class EncodedScene:
    """Everything field queries need about the current input views."""

    views: EncodedViews
    images: np.ndarray        # (N, H, W, 3)
    cameras: list[Camera]


class Model:
    """The full conditioned radiance field."""

    def __init__(self, config: ModelConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.store = ParamStore(seed=seed, dtype=dtype)
        self.encoder = Encoder(self.store, config.encoder)
        self.relation = make_relation(config.relation, self.store,
                                      config.encoder.channels, config.groups)
        self.prior_dim = self.relation.dim(config.resolutions) + 3 * config.num_views
        self.decoder = Decoder(self.store, config.decoder, self.prior_dim)
        self.samples_per_ray = 128

    def encode_views(self, images: np.ndarray, cameras) -> EncodedScene:
        imgs = np.asarray(images)
        if len(imgs) != self.config.num_views:
            raise ModelConfigError(f"model is configured for {self.config.num_views} "
                                   f"input views, got {len(imgs)}")
        return EncodedScene(views=self.encoder.encode(imgs), images=imgs,
                            cameras=list(cameras))

    def field_query(self, scene: EncodedScene, points: np.ndarray,
                    directions: np.ndarray) -> tuple[Tensor, Tensor]:
        """(Q, 3) points and unit directions -> density features and colors."""
        z = geometry_prior(points, scene.views, scene.cameras, self.relation,
                           self.config.resolutions)
        tex = texture_prior(points, scene.images, scene.cameras)
        m = ad.concat([z, Tensor(tex.astype(z.dtype))], axis=-1)
        encoded_p = positional_encode(points, self.config.decoder.pe_frequencies)
        return self.decoder.point_features(encoded_p, directions, m)

    def query_rays(self, scene: EncodedScene, origins: np.ndarray, dirs: np.ndarray,
                   t: np.ndarray, delta: np.ndarray) -> tuple[Tensor, Tensor]:
        """Evaluate the field on (R, K) ray samples -> colors (R, K, 3), sigmas (R, K)."""
        R, K = t.shape
        points = origins[:, None, :] + t[..., None] * dirs[:, None, :]
        flat_points = points.reshape(R * K, 3)
        flat_dirs = np.repeat(dirs, K, axis=0)
        feats, colors = self.field_query(scene, flat_points, flat_dirs)
        feats = ad.reshape(feats, (R, K, feats.shape[-1]))
        sigmas = self.decoder.ray_density(feats)
        return ad.reshape(colors, (R, K, 3)), sigmas


# -- config (de)serialization ------------------------------------------------------


def model_config_to_dict(config: ModelConfig) -> dict:
    d = asdict(config)
    d["resolutions"] = list(config.resolutions)
    d["groups"] = list(config.groups)
    return d


def model_config_from_dict(d: dict) -> ModelConfig:
    try:
        return ModelConfig(
            encoder=EncoderConfig(**d["encoder"]),
            decoder=DecoderConfig(**d["decoder"]),
            relation=d["relation"],
            resolutions=tuple(d["resolutions"]),
            groups=tuple(d["groups"]),
            num_views=int(d["num_views"]),
        )
    except (KeyError, TypeError) as e:
        raise ModelConfigError(f"bad model config dict: {e}") from e


# -- the ablation matrix ----------------------------------------------------------


def attention_ablation(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    """Attention-component rows: CNN baseline up to the full model."""
    def variant(self_attn, cross_attn, ray):
        enc = replace(base.encoder, enable_self_attn=self_attn, enable_cross_attn=cross_attn)
        dec = replace(base.decoder, enable_ray_transformer=ray)
        return replace(base, encoder=enc, decoder=dec)

    return [
        ("cnn", variant(False, False, False)),
        ("cnn+self", variant(True, False, False)),
        ("cnn+cross", variant(False, True, False)),
        ("cnn+self+cross", variant(True, True, False)),
        ("cnn+self+cross+ray", variant(True, True, True)),
    ]


def relation_ablation(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    return [(name, replace(base, relation=name)) for name in RELATION_NAMES]


def resolution_ablation(base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    return [
        ("1/8", replace(base, resolutions=(RES_EIGHTH,))),
        ("1/4", replace(base, resolutions=(RES_QUARTER,))),
        ("1/8+1/4", replace(base, resolutions=(RES_EIGHTH, RES_QUARTER))),
    ]


ABLATION_AXES = {
    "attention": attention_ablation,
    "relation": relation_ablation,
    "resolution": resolution_ablation,
}


def ablation_configs(axis: str, base: ModelConfig) -> list[tuple[str, ModelConfig]]:
    if axis not in ABLATION_AXES:
        raise ModelConfigError(f"unknown ablation axis '{axis}' "
                               f"(choose from {sorted(ABLATION_AXES)})")
    return ABLATION_AXES[axis](base)
