"""Correspondence matching: projection sampling and cross-view priors.

A 3D query point is projected into both views of every pair; feature
vectors are bilinearly sampled at those projections on the 1/8 and 1/4
maps. Per pair, the two vectors are compared group-wise: channels split
into G contiguous groups, cosine similarity per group, giving a short
multi-view-consistency descriptor. Descriptors from the two resolutions
are concatenated and averaged element-wise over all pairs into the
geometry prior z. The texture prior is the point's RGB samples from all
input images, concatenated in dataset view order.

Alternative pair relations (plain concatenation, a learned scalar
similarity, per-channel pair variance, ungrouped cosine) implement the
same interface so the relation is a pure configuration axis.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cameras import Camera, project_points
from .encoder import EncodedViews
from .modules import GROUP_DECODER, Linear, ParamStore

COSINE_EPS = 1e-8

RES_EIGHTH = "1/8"
RES_QUARTER = "1/4"


class MatchingError(ValueError):
    pass


class DegeneratePriorError(MatchingError):
    """A query point projects behind every input camera."""


def sample_feature(feature_map: Tensor, pixels_full_res: np.ndarray, scale: int):
    """Sample (B, C, h, w) maps at full-resolution pixel coordinates.

    The full-res pixel (x, y) lands at ((x+0.5)/scale - 0.5) on a
    1/scale-resolution grid (center-aligned). Returns ((B, P, C) features,
    (B, P) validity); out-of-range samples are border-clamped.
    """
    px = np.asarray(pixels_full_res, dtype=np.float64)
    grid = (px + 0.5) / float(scale) - 0.5
    return ad.grid_sample(feature_map, grid)


def group_cosine(feat_a: Tensor, feat_b: Tensor, groups: int) -> Tensor:
    """Per-group cosine similarity of (..., C) feature stacks -> (..., G).

    Channels split into G contiguous groups; each group's similarity is
    dot / ((||a|| + eps) (||b|| + eps)), so zero vectors give ~0, never NaN.
    """
    if feat_a.shape != feat_b.shape:
        raise MatchingError(f"feature shapes differ: {feat_a.shape} vs {feat_b.shape}")
    C = feat_a.shape[-1]
    if groups < 1 or C % groups != 0:
        raise MatchingError(f"{groups} groups do not divide {C} channels")
    gshape = (*feat_a.shape[:-1], groups, C // groups)
    a = ad.reshape(feat_a, gshape)
    b = ad.reshape(feat_b, gshape)
    dot = ad.reduce_sum(ad.mul(a, b), axis=-1)
    na = ad.add(ad.l2_norm(a, axis=-1), COSINE_EPS)
    nb = ad.add(ad.l2_norm(b, axis=-1), COSINE_EPS)
    return ad.div(dot, ad.mul(na, nb))


def pair_variance(feat_a: Tensor, feat_b: Tensor) -> Tensor:
    """Per-channel population variance of the two-feature set: (a-b)^2/4."""
    d = ad.sub(feat_a, feat_b)
    return ad.mul(ad.mul(d, d), 0.25)


# -- relation variants ----------------------------------------------------------


class GroupCosineRelation:
    """Default relation: G groups on 1/8 features, G-hat groups on 1/4."""

    name = "group_cosine"

    def __init__(self, groups_eighth: int = 2, groups_quarter: int = 8):
        self.groups_eighth = groups_eighth
        self.groups_quarter = groups_quarter

    def dim(self, resolutions) -> int:
        return (self.groups_eighth if RES_EIGHTH in resolutions else 0) + \
               (self.groups_quarter if RES_QUARTER in resolutions else 0)

    def pair_vector(self, fa: Tensor, fb: Tensor, resolution: str) -> Tensor:
        g = self.groups_eighth if resolution == RES_EIGHTH else self.groups_quarter
        return group_cosine(fa, fb, g)


class CosineRelation(GroupCosineRelation):
    """Ungrouped cosine: literally the grouped relation with G = 1."""

    name = "cosine"

    def __init__(self):
        super().__init__(groups_eighth=1, groups_quarter=1)


class ConcatRelation:
    """No comparison at all: the raw pair features, concatenated."""

    name = "concat"

    def __init__(self, channels: int):
        self.channels = channels

    def dim(self, resolutions) -> int:
        return 2 * self.channels * len(resolutions)

    def pair_vector(self, fa: Tensor, fb: Tensor, resolution: str) -> Tensor:
        return ad.concat([fa, fb], axis=-1)


class LearnedRelation:
    """A small MLP scores each pair: concat(f_a, f_b) -> hidden -> scalar."""

    name = "learned"

    def __init__(self, store: ParamStore, channels: int, hidden: int = 64):
        self.nets = {}
        for res, tag in ((RES_EIGHTH, "res8"), (RES_QUARTER, "res4")):
            fc1 = Linear(store, f"relation.learned.{tag}.fc1", 2 * channels, hidden,
                         group=GROUP_DECODER, gain="kaiming")
            fc2 = Linear(store, f"relation.learned.{tag}.fc2", hidden, 1, group=GROUP_DECODER)
            self.nets[res] = (fc1, fc2)

    def dim(self, resolutions) -> int:
        return len(resolutions)

    def pair_vector(self, fa: Tensor, fb: Tensor, resolution: str) -> Tensor:
        fc1, fc2 = self.nets[resolution]
        return fc2(ad.relu(fc1(ad.concat([fa, fb], axis=-1))))


class VarianceRelation:
    """Per-channel pair variance, linearly projected to the grouped width."""

    name = "variance"

    def __init__(self, store: ParamStore, channels: int,
                 groups_eighth: int = 2, groups_quarter: int = 8):
        self.out_dims = {RES_EIGHTH: groups_eighth, RES_QUARTER: groups_quarter}
        self.proj = {
            RES_EIGHTH: Linear(store, "relation.variance.res8", channels, groups_eighth,
                               group=GROUP_DECODER),
            RES_QUARTER: Linear(store, "relation.variance.res4", channels, groups_quarter,
                                group=GROUP_DECODER),
        }

    def dim(self, resolutions) -> int:
        return sum(self.out_dims[r] for r in resolutions)

    def pair_vector(self, fa: Tensor, fb: Tensor, resolution: str) -> Tensor:
        return self.proj[resolution](pair_variance(fa, fb))


RELATION_NAMES = ("group_cosine", "cosine", "variance", "concat", "learned")


def make_relation(name: str, store: ParamStore, channels: int,
                  groups: tuple[int, int] = (2, 8)):
    if name == "group_cosine":
        return GroupCosineRelation(*groups)
    if name == "cosine":
        return CosineRelation()
    if name == "concat":
        return ConcatRelation(channels)
    if name == "learned":
        return LearnedRelation(store, channels)
    if name == "variance":
        return VarianceRelation(store, channels, *groups)
    raise MatchingError(f"unknown relation '{name}' (choose from {RELATION_NAMES})")


# -- priors ----------------------------------------------------------------------


def project_all_views(points: np.ndarray, cameras) -> tuple[np.ndarray, np.ndarray]:
    """Project (Q, 3) points into every camera: pixels (N, Q, 2), front (N, Q)."""
    pixels, front = [], []
    for cam in cameras:
        px, _, ok = project_points(points, cam)
        pixels.append(px)
        front.append(ok)
    return np.stack(pixels), np.stack(front)


def geometry_prior(points: np.ndarray, encoded: EncodedViews, cameras,
                   relation, resolutions=(RES_EIGHTH, RES_QUARTER),
                   exclude_invalid_pairs: bool = False) -> Tensor:
    """The per-point conditioning vector z: pair relation, averaged.

    points: (Q, 3) world coordinates. Returns (Q, D) with D set by the
    relation and active resolutions. With ``exclude_invalid_pairs``, pairs
    where either view has the point behind its camera are dropped from the
    mean for that point (falling back to the plain mean when nothing is
    valid); out-of-frame projections stay included, border-clamped by the
    feature sampler.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not resolutions:
        raise MatchingError("at least one feature resolution is required")
    pairs = encoded.pairs
    P = len(pairs)
    pixels, front = project_all_views(points, cameras)
    behind_all = ~front.any(axis=0)
    if behind_all.any():
        idx = int(np.argmax(behind_all))
        raise DegeneratePriorError(
            f"point {points[idx].tolist()} projects behind all {len(cameras)} cameras")

    idx_a = [a for a, _ in pairs]
    idx_b = [b for _, b in pairs]
    coords = np.concatenate([pixels[idx_a], pixels[idx_b]], axis=0)  # (2P, Q, 2)

    parts = []
    for res in resolutions:
        if res == RES_EIGHTH:
            maps, scale = encoded.feats8, 8
        elif res == RES_QUARTER:
            maps, scale = encoded.feats4, 4
        else:
            raise MatchingError(f"unknown resolution '{res}'")
        sampled, _ = sample_feature(maps, coords, scale)          # (2P, Q, C)
        parts.append(relation.pair_vector(sampled[:P], sampled[P:], res))
    per_pair = ad.concat(parts, axis=-1)                          # (P, Q, D)

    if exclude_invalid_pairs:
        valid = (front[idx_a] & front[idx_b]).astype(per_pair.dtype)  # (P, Q)
        counts = valid.sum(axis=0)
        fallback = counts == 0
        if fallback.any():
            valid[:, fallback] = 1.0
            counts[fallback] = P
        w = Tensor((valid / counts[None, :])[..., None].astype(per_pair.dtype))
        return ad.reduce_sum(ad.mul(per_pair, w), axis=0)
    return ad.reduce_mean(per_pair, axis=0)


def texture_prior(points: np.ndarray, images: np.ndarray, cameras) -> np.ndarray:
    """RGB of each point's projection in every view, dataset order: (Q, 3N).

    Sampled bilinearly with border clamp at full image resolution; the
    result is a constant w.r.t. the trainable state (images are inputs).
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    imgs = np.asarray(images)
    if imgs.ndim != 4 or imgs.shape[0] != len(cameras):
        raise MatchingError(f"expected ({len(cameras)}, H, W, 3) images, got {imgs.shape}")
    pixels, _ = project_all_views(points, cameras)
    out = [bilinear_sample_np(imgs[v], pixels[v]) for v in range(len(cameras))]
    return np.concatenate(out, axis=-1)


def bilinear_sample_np(image: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    """Plain-numpy bilinear lookup on an (H, W, C) array with border clamp."""
    H, W = image.shape[:2]
    x = np.clip(pixels[:, 0], 0.0, W - 1.0)
    y = np.clip(pixels[:, 1], 0.0, H - 1.0)
    x0 = np.minimum(np.floor(x), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(y), max(H - 2, 0)).astype(np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    return ((1 - fx) * (1 - fy) * image[y0, x0] + fx * (1 - fy) * image[y0, x1]
            + (1 - fx) * fy * image[y1, x0] + fx * fy * image[y1, x1])
