"""Differentiable volume rendering and whole-image orchestration.

Per ray, K ordered samples with colors c_i, densities sigma_i, spacings
delta_i composite into a pixel color through transmittance weights:

    T_i = exp(-sum_{j<i} sigma_j delta_j),  w_i = T_i (1 - exp(-sigma_i delta_i)),
    C = sum_i w_i c_i

Expected depth is the weight-normalized first moment of the sample depths.
Leftover transmittance contributes nothing by default (black background);
an optional background color fills it for datasets that composite onto a
known backdrop.

Whole images are rendered in fixed 64-ray blocks regardless of the
requested chunk size: GEMM results can differ in the last bits when row
counts change, so a constant internal block (padded by repeating the last
ray) keeps renders bit-identical for any chunking.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cameras import Camera, generate_rays, sample_depths

RAY_BLOCK = 64  # internal render granularity; fixed for chunk invariance


class RenderError(ValueError):
    pass


def composite(colors: Tensor, sigmas: Tensor, deltas: np.ndarray,
              background: np.ndarray | None = None):
    """Alpha-composite sampled radiance along rays.

    colors: (R, K, 3); sigmas: (R, K) nonnegative; deltas: (R, K)
    nonnegative constants. Returns (pixel colors (R, 3), weights (R, K),
    transmittance (R, K)), differentiable w.r.t. colors and sigmas.
    """
    if colors.ndim != 3 or colors.shape[-1] != 3:
        raise RenderError(f"colors must be (rays, samples, 3), got {colors.shape}")
    if sigmas.shape != colors.shape[:2]:
        raise RenderError(f"sigmas {sigmas.shape} do not match colors {colors.shape}")
    deltas = np.asarray(deltas)
    if deltas.shape != sigmas.shape:
        raise RenderError(f"deltas {deltas.shape} do not match sigmas {sigmas.shape}")
    if np.any(deltas < 0):
        raise RenderError("negative sample spacing")
    if np.any(sigmas.data < 0):
        raise RenderError("negative density")

    tau = ad.mul(sigmas, Tensor(deltas.astype(sigmas.dtype)))   # optical thickness per bin
    accum = ad.cumsum(tau, axis=1)
    before = ad.sub(accum, tau)                                 # exclusive prefix sum
    trans = ad.exp(ad.neg(before))
    alpha = ad.sub(1.0, ad.exp(ad.neg(tau)))
    weights = ad.mul(trans, alpha)
    pixel = ad.reduce_sum(ad.mul(ad.reshape(weights, (*weights.shape, 1)), colors), axis=1)
    if background is not None:
        leftover = ad.exp(ad.neg(accum[:, -1:]))                # T after the last sample
        bg = Tensor(np.asarray(background, dtype=sigmas.dtype).reshape(1, 3))
        pixel = ad.add(pixel, ad.mul(leftover, bg))
    return pixel, weights, trans


def render_depth(weights: Tensor, depths: np.ndarray, eps: float = 1e-8) -> Tensor:
    """Weight-normalized expected depth per ray; 0 where weights vanish.

    weights: (R, K) from composite; depths: (R, K) sample depths.
    """
    t = Tensor(np.asarray(depths, dtype=weights.dtype))
    num = ad.reduce_sum(ad.mul(weights, t), axis=1)
    den = ad.clip_min(ad.reduce_sum(weights, axis=1), eps)
    return ad.div(num, den)


@dataclass
class RenderedView:
    image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32, expected ray depth (0 on empty rays)


def render_image(model, encoded, target_camera: Camera, chunk_size: int = 1024,
                 samples_per_ray: int | None = None) -> RenderedView:
    """Render every pixel of ``target_camera`` from encoded input views.

    ``model`` provides query_rays(encoded, origins, dirs, t, delta) ->
    (colors, sigmas) tensors; chunk_size only caps how many rays are
    assembled per outer iteration (>= 1), output is chunk-invariant.
    """
    if chunk_size < 1:
        raise RenderError(f"chunk_size must be >= 1, got {chunk_size}")
    K = samples_per_ray if samples_per_ray is not None else model.samples_per_ray
    H, W = target_camera.height, target_camera.width
    ys, xs = np.meshgrid(np.arange(H, dtype=np.float64),
                         np.arange(W, dtype=np.float64), indexing="ij")
    pixels = np.stack([xs.ravel(), ys.ravel()], axis=1)
    origins, dirs = generate_rays(target_camera, pixels)
    num_rays = len(pixels)

    image = np.zeros((num_rays, 3), dtype=np.float32)
    depth = np.zeros(num_rays, dtype=np.float32)
    block = RAY_BLOCK
    with ad.no_grad():
        for start in range(0, num_rays, block):
            stop = min(start + block, num_rays)
            idx = np.arange(start, stop)
            if stop - start < block:               # pad by repeating the last ray
                idx = np.concatenate([idx, np.full(block - (stop - start), stop - 1)])
            t, delta = sample_depths(target_camera.near, target_camera.far, K, len(idx))
            colors, sigmas = model.query_rays(encoded, origins[idx], dirs[idx], t, delta)
            pix, weights, _ = composite(colors, sigmas, delta)
            d = render_depth(weights, t)
            image[start:stop] = pix.data[: stop - start]
            depth[start:stop] = d.data[: stop - start]
    return RenderedView(image=image.reshape(H, W, 3), depth=depth.reshape(H, W))


# -- image / depth file formats -------------------------------------------------

DEPTH_MAGIC = b"MNDF"


def save_image_png(path, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit PNG."""
    from PIL import Image

    arr = np.clip(np.asarray(image), 0.0, 1.0)
    Image.fromarray((arr * 255.0).round().astype(np.uint8)).save(path)


def load_image_png(path) -> np.ndarray:
    """Read a PNG into (H, W, 3) float32 in [0, 1]."""
    from PIL import Image

    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_depth_raster(path, depth: np.ndarray) -> None:
    """16-byte header (magic, u32 H, u32 W, u32 reserved) + f32 LE rows."""
    d = np.asarray(depth, dtype=np.float32)
    if d.ndim != 2:
        raise RenderError(f"depth raster must be 2-D, got {d.shape}")
    with open(path, "wb") as fh:
        fh.write(DEPTH_MAGIC)
        fh.write(struct.pack("<III", d.shape[0], d.shape[1], 0))
        fh.write(d.astype("<f4").tobytes())


def load_depth_raster(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) < 16 or header[:4] != DEPTH_MAGIC:
            raise RenderError(f"{path}: not a depth raster (bad magic)")
        h, w, _ = struct.unpack("<III", header[4:16])
        payload = fh.read()
    expected = h * w * 4
    if len(payload) != expected:
        raise RenderError(f"{path}: payload is {len(payload)} bytes, expected {expected}")
    return np.frombuffer(payload, dtype="<f4").reshape(h, w).copy()
