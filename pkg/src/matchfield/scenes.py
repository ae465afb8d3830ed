"""Synthetic multi-view scenes, dataset directory IO, and checkpoints.

A scene is a set of posed views of procedurally textured primitives, traced
analytically so every pixel carries exact ground-truth color and depth. The
tracer is the reference the learned renderer is measured against, which is
why it stays scalar-simple: nearest primitive, Lambertian shade, done.

Directory layout: images/NNN.png + cameras.json (+ depth/NNN.mndf).
Checkpoints are a length-prefixed JSON header over a flat float32 payload.
"""

from __future__ import annotations

import json
import struct
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cameras import Camera, CameraError, generate_rays, project_points
from .pipeline import Model, model_config_from_dict, model_config_to_dict
from .renderer import (
    load_depth_raster,
    load_image_png,
    save_depth_raster,
    save_image_png,
)

_HIT_EPS = 1e-9          # minimum positive ray parameter that counts as a hit
_AMBIENT = 0.1
_WORLD_UP = np.array([0.0, 1.0, 0.0])
_CKPT_VERSION = 1


class SceneError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


# -- procedural textures ------------------------------------------------------


@dataclass(frozen=True)
class Checker:
    """3D checkerboard: cell parity in world space selects color_a/color_b."""

    cell: float
    color_a: tuple
    color_b: tuple

    def __post_init__(self):
        if self.cell <= 0:
            raise SceneError(f"checker cell must be positive, got {self.cell}")


@dataclass(frozen=True)
class ValueNoise:
    """Smoothed lattice noise blending color_a -> color_b, keyed by salt."""

    scale: float
    octaves: int
    color_a: tuple
    color_b: tuple
    salt: int = 0

    def __post_init__(self):
        if self.scale <= 0 or self.octaves < 1:
            raise SceneError(
                f"value noise needs scale > 0 and octaves >= 1, got "
                f"scale={self.scale}, octaves={self.octaves}")


def _hash_lattice(ix, iy, iz, salt: int):
    """Integer lattice -> [0, 1), identical across runs and platforms."""
    h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
         ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
         ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
         ^ np.uint64(salt & 0xFFFFFFFFFFFFFFFF))
    h ^= h >> np.uint64(30)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(27)
    h *= np.uint64(0x94D049BB133111EB)
    h ^= h >> np.uint64(31)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _noise_octave(p: np.ndarray, salt: int) -> np.ndarray:
    base = np.floor(p)
    f = p - base
    f = f * f * (3.0 - 2.0 * f)  # smoothstep keeps the gradient continuous
    cell = base.astype(np.int64)
    value = np.zeros(len(p))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                corner = _hash_lattice(cell[:, 0] + dx, cell[:, 1] + dy,
                                       cell[:, 2] + dz, salt)
                wx = f[:, 0] if dx else 1.0 - f[:, 0]
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                wz = f[:, 2] if dz else 1.0 - f[:, 2]
                value += corner * wx * wy * wz
    return value


def albedo(texture, points: np.ndarray) -> np.ndarray:
    """Evaluate a texture at (P, 3) world points -> (P, 3) colors in [0, 1]."""
    pts = np.asarray(points, dtype=np.float64)
    if isinstance(texture, Checker):
        idx = np.floor(pts / texture.cell).astype(np.int64)
        odd = (idx.sum(axis=1) & 1).astype(bool)
        out = np.where(odd[:, None], np.asarray(texture.color_b, dtype=np.float64),
                       np.asarray(texture.color_a, dtype=np.float64))
        return out
    if isinstance(texture, ValueNoise):
        value = np.zeros(len(pts))
        total = 0.0
        amp = 1.0
        for k in range(texture.octaves):
            value += amp * _noise_octave(pts * texture.scale * (2.0 ** k),
                                         texture.salt + 131 * k)
            total += amp
            amp *= 0.5
        value /= total
        a = np.asarray(texture.color_a, dtype=np.float64)
        b = np.asarray(texture.color_b, dtype=np.float64)
        return a + value[:, None] * (b - a)
    raise SceneError(f"unknown texture type {type(texture).__name__}")


# -- primitives ----------------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float
    texture: object

    def __post_init__(self):
        if self.radius <= 0:
            raise SceneError(f"sphere radius must be positive, got {self.radius}")

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        return c - self.radius, c + self.radius


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by center and positive half extents."""

    center: tuple
    half_extents: tuple
    texture: object

    def __post_init__(self):
        if np.asarray(self.half_extents, dtype=np.float64).min() <= 0:
            raise SceneError(f"box half extents must be positive, "
                             f"got {self.half_extents}")

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_extents, dtype=np.float64)
        return c - h, c + h


@dataclass(frozen=True)
class RectPlane:
    """Axis-aligned rectangle; the single zero half extent is the normal axis."""

    center: tuple
    half_extents: tuple
    texture: object

    def __post_init__(self):
        h = np.asarray(self.half_extents, dtype=np.float64)
        if (h == 0).sum() != 1 or (h < 0).any():
            raise SceneError(
                f"rect plane needs exactly one zero half extent and the rest "
                f"positive, got {self.half_extents}")

    @property
    def axis(self) -> int:
        return int(np.argmax(np.asarray(self.half_extents) == 0))

    def bounds(self):
        c = np.asarray(self.center, dtype=np.float64)
        h = np.asarray(self.half_extents, dtype=np.float64)
        return c - h, c + h


def _intersect_sphere(prim: Sphere, o: np.ndarray, d: np.ndarray):
    c = np.asarray(prim.center, dtype=np.float64)
    oc = o - c
    b = np.einsum("ij,ij->i", oc, d)
    disc = b * b - (np.einsum("ij,ij->i", oc, oc) - prim.radius ** 2)
    ok = disc >= 0
    root = np.sqrt(np.where(ok, disc, 0.0))
    t = -b - root  # near intersection; rays starting inside report a miss
    t = np.where(ok & (t > _HIT_EPS), t, np.inf)
    n = np.zeros_like(o)
    hit = np.isfinite(t)
    if hit.any():
        pts = o[hit] + t[hit, None] * d[hit]
        n[hit] = (pts - c) / prim.radius
    return t, n


def _intersect_box(prim: Box, o: np.ndarray, d: np.ndarray):
    lo, hi = prim.bounds()
    zero = np.abs(d) < 1e-12
    inv = 1.0 / np.where(zero, 1.0, d)
    t1 = (lo - o) * inv
    t2 = (hi - o) * inv
    inside = (o >= lo) & (o <= hi)
    # slab test; rays parallel to a slab hit iff the origin lies inside it
    tmin = np.where(zero, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    tmax = np.where(zero, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    tnear = tmin.max(axis=1)
    tfar = tmax.min(axis=1)
    hit = (tnear <= tfar) & (tnear > _HIT_EPS)
    t = np.where(hit, tnear, np.inf)
    n = np.zeros_like(o)
    if hit.any():
        entry_axis = np.argmax(tmin[hit], axis=1)
        rows = np.arange(hit.sum())
        sign = -np.sign(d[hit][rows, entry_axis])
        n[np.nonzero(hit)[0], entry_axis] = np.where(sign == 0, 1.0, sign)
    return t, n


def _intersect_rect(prim: RectPlane, o: np.ndarray, d: np.ndarray):
    k = prim.axis
    c = np.asarray(prim.center, dtype=np.float64)
    h = np.asarray(prim.half_extents, dtype=np.float64)
    dk = d[:, k]
    parallel = np.abs(dk) < 1e-12
    t = np.where(parallel, np.inf, (c[k] - o[:, k]) / np.where(parallel, 1.0, dk))
    hit = t > _HIT_EPS
    pts = o + np.where(np.isfinite(t), t, 0.0)[:, None] * d
    for j in range(3):
        if j != k:
            hit &= np.abs(pts[:, j] - c[j]) <= h[j]
    t = np.where(hit, t, np.inf)
    n = np.zeros_like(o)
    n[hit, k] = 1.0  # geometric normal; the shader orients it toward the ray
    return t, n


_INTERSECTORS = {Sphere: _intersect_sphere, Box: _intersect_box,
                 RectPlane: _intersect_rect}


# -- the analytic tracer ---------------------------------------------------------


@dataclass
class TraceResult:
    colors: np.ndarray      # (P, 3) in [0, 1]
    depths: np.ndarray      # (P,) ray parameter t, 0 where nothing was hit
    hit_index: np.ndarray   # (P,) primitive index, -1 on miss


def trace(primitives, light, background, origins: np.ndarray,
          dirs: np.ndarray) -> TraceResult:
    """Nearest-hit trace with Lambertian shading.

    light points from the surface toward the light source; shading is
    albedo * min(1, ambient + max(0, n.l)) so colors stay within [0, 1].
    """
    o = np.asarray(origins, dtype=np.float64)
    d = np.asarray(dirs, dtype=np.float64)
    P = len(o)
    best_t = np.full(P, np.inf)
    best_i = np.full(P, -1, dtype=np.int64)
    normals = np.zeros((P, 3))
    for i, prim in enumerate(primitives):
        t, n = _INTERSECTORS[type(prim)](prim, o, d)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_i = np.where(closer, i, best_i)
        normals[closer] = n[closer]

    colors = np.tile(np.asarray(background, dtype=np.float64), (P, 1))
    depths = np.zeros(P)
    hit = best_i >= 0
    if hit.any():
        pts = o[hit] + best_t[hit, None] * d[hit]
        n = normals[hit]
        backface = np.einsum("ij,ij->i", n, d[hit]) > 0
        n[backface] *= -1.0
        light_dir = np.asarray(light, dtype=np.float64)
        light_dir = light_dir / np.linalg.norm(light_dir)
        shade = np.minimum(1.0, _AMBIENT + np.maximum(0.0, n @ light_dir))
        alb = np.zeros((int(hit.sum()), 3))
        idx = best_i[hit]
        for i, prim in enumerate(primitives):
            sel = idx == i
            if sel.any():
                alb[sel] = albedo(prim.texture, pts[sel])
        colors[hit] = alb * shade[:, None]
        depths[hit] = best_t[hit]
    return TraceResult(colors=colors, depths=depths, hit_index=best_i)


# -- camera rigs ------------------------------------------------------------------


def look_at_pose(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """world_to_camera for a camera at center looking at target.

    Camera z runs toward the target and camera y descends in world up, so
    images come out upright under the y-down pixel convention.
    """
    center = np.asarray(center, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    forward = target - center
    dist = np.linalg.norm(forward)
    if dist < 1e-9:
        raise SceneError("camera center and look-at target coincide")
    z = forward / dist
    if abs(z @ _WORLD_UP) > 0.999:
        raise SceneError("viewing direction is degenerate with the up axis")
    x = np.cross(z, _WORLD_UP)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    pose = np.eye(4)
    pose[:3, :3] = R
    pose[:3, 3] = -R @ center
    return pose


def simple_intrinsics(image_size: int, focal_scale: float) -> np.ndarray:
    """Square pinhole intrinsics with the principal point at the image center."""
    f = focal_scale * image_size
    c = (image_size - 1) / 2.0
    return np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class CameraRig:
    """Ring of inward-looking cameras on a sphere around the look-at point."""

    count: int = 8
    radius: float = 3.2
    elevation_range: tuple = (15.0, 40.0)   # degrees above the horizon
    look_at: tuple = (0.0, 0.0, 0.0)
    focal_scale: float = 0.9

    def __post_init__(self):
        lo, hi = self.elevation_range
        if self.count < 1:
            raise SceneError(f"rig needs at least one camera, got {self.count}")
        if self.radius <= 0:
            raise SceneError(f"rig radius must be positive, got {self.radius}")
        if not (-85.0 <= lo <= hi <= 85.0):
            raise SceneError(f"elevation range {self.elevation_range} must be "
                             f"ordered and within [-85, 85] degrees")
        if self.focal_scale <= 0:
            raise SceneError(f"focal scale must be positive, got {self.focal_scale}")


def rig_cameras(rig: CameraRig, image_size: int,
                rng: np.random.Generator) -> list[Camera]:
    """Place rig cameras: evenly spaced azimuths with a random phase, shuffled
    evenly spread elevations. near/far bracket the unit content volume."""
    look = np.asarray(rig.look_at, dtype=np.float64)
    span = np.sqrt(3.0) + np.linalg.norm(look) + 0.2
    near = max(0.05, rig.radius - span)
    far = rig.radius + span
    K = simple_intrinsics(image_size, rig.focal_scale)

    phase = rng.uniform(0.0, 2.0 * np.pi)
    lo, hi = rig.elevation_range
    elevations = np.deg2rad(rng.permutation(np.linspace(lo, hi, rig.count)))
    cameras = []
    for i in range(rig.count):
        az = phase + 2.0 * np.pi * i / rig.count
        el = elevations[i]
        offset = rig.radius * np.array([np.cos(el) * np.cos(az), np.sin(el),
                                        np.cos(el) * np.sin(az)])
        pose = look_at_pose(look + offset, look)
        cameras.append(Camera(intrinsics=K, world_to_camera=pose,
                              width=image_size, height=image_size,
                              near=near, far=far))
    return cameras


# -- scene specification and generation ---------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    primitives: tuple
    light: tuple                 # direction from surfaces toward the light
    background: tuple
    rig: CameraRig
    image_size: int
    seed: int

    def __post_init__(self):
        if not self.primitives:
            raise SceneError("a scene needs at least one primitive")
        for prim in self.primitives:
            lo, hi = prim.bounds()
            if lo.min() < -1.0 - 1e-9 or hi.max() > 1.0 + 1e-9:
                raise SceneError(
                    f"{type(prim).__name__} with bounds {lo.tolist()}..."
                    f"{hi.tolist()} falls outside the unit content volume")
        if np.linalg.norm(np.asarray(self.light, dtype=np.float64)) < 1e-9:
            raise SceneError("light direction must be nonzero")
        look = np.asarray(self.rig.look_at, dtype=np.float64)
        if np.abs(look).max() > 1.0:
            raise SceneError(f"rig look-at {self.rig.look_at} is outside the "
                             f"unit content volume")
        if self.image_size < 8:
            raise SceneError(f"image size must be at least 8, got {self.image_size}")


@dataclass
class SceneView:
    image: np.ndarray                 # (H, W, 3) floats in [0, 1]
    camera: Camera
    depth: np.ndarray | None = None   # (H, W) ray-parameter depth, 0 on miss


@dataclass
class Scene:
    views: list
    normalization: np.ndarray = field(default_factory=lambda: np.eye(4))

    def __post_init__(self):
        if not self.views:
            raise SceneError("a scene needs at least one view")
        M = np.asarray(self.normalization, dtype=np.float64)
        if M.shape != (4, 4) or not np.allclose(M[3], [0, 0, 0, 1], atol=1e-9):
            raise SceneError(f"normalization must be a 4x4 affine transform, "
                             f"got shape {M.shape}")
        A = M[:3, :3]
        gram = A.T @ A
        scale2 = np.trace(gram) / 3.0
        if scale2 <= 0 or not np.allclose(gram, scale2 * np.eye(3),
                                          atol=1e-6 * max(scale2, 1.0)):
            raise SceneError("normalization must be a similarity "
                             "(rotation + uniform scale + translation)")
        nears = {v.camera.near for v in self.views}
        fars = {v.camera.far for v in self.views}
        if len(nears) != 1 or len(fars) != 1:
            raise SceneError(f"views disagree on near/far: {nears}, {fars}")

    @property
    def cameras(self) -> list[Camera]:
        return [v.camera for v in self.views]

    @property
    def near(self) -> float:
        return self.views[0].camera.near

    @property
    def far(self) -> float:
        return self.views[0].camera.far


def _pixel_grid(width: int, height: int) -> np.ndarray:
    xs, ys = np.meshgrid(np.arange(width, dtype=np.float64),
                         np.arange(height, dtype=np.float64))
    return np.stack([xs.ravel(), ys.ravel()], axis=1)


def generate_scene(spec: SyntheticSpec) -> Scene:
    """Trace every rig view of the spec. Deterministic in the spec alone."""
    rng = np.random.default_rng(spec.seed)
    cameras = rig_cameras(spec.rig, spec.image_size, rng)
    views = []
    for vi, camera in enumerate(cameras):
        origins, dirs = generate_rays(camera, _pixel_grid(camera.width,
                                                          camera.height))
        res = trace(spec.primitives, spec.light, spec.background, origins, dirs)
        if not (res.hit_index >= 0).any():
            warnings.warn(f"view {vi}: no primitive visible from this camera")
        views.append(SceneView(
            image=res.colors.reshape(camera.height, camera.width, 3),
            camera=camera,
            depth=res.depths.reshape(camera.height, camera.width)))
    return Scene(views=views, normalization=np.eye(4))


def random_spec(seed: int, image_size: int = 64, num_cameras: int = 8) -> SyntheticSpec:
    """A randomized but reproducible scene: checkered ground plus 2..4 shapes."""
    rng = np.random.default_rng(seed)

    def color(lo, hi):
        return tuple(rng.uniform(lo, hi, size=3))

    def texture():
        if rng.random() < 0.5:
            return Checker(cell=float(rng.uniform(0.06, 0.18)),
                           color_a=color(0.35, 1.0), color_b=color(0.0, 0.45))
        return ValueNoise(scale=float(rng.uniform(2.0, 6.0)), octaves=3,
                          color_a=color(0.0, 0.5), color_b=color(0.5, 1.0),
                          salt=int(rng.integers(0, 2 ** 31)))

    primitives = [RectPlane(center=(0.0, -0.8, 0.0),
                            half_extents=(0.8, 0.0, 0.8),
                            texture=Checker(cell=float(rng.uniform(0.15, 0.3)),
                                            color_a=color(0.45, 0.95),
                                            color_b=color(0.05, 0.4)))]
    for _ in range(int(rng.integers(2, 5))):
        pos = (float(rng.uniform(-0.45, 0.45)), float(rng.uniform(-0.55, 0.1)),
               float(rng.uniform(-0.45, 0.45)))
        size = float(rng.uniform(0.12, 0.28))
        tex = texture()
        if rng.random() < 0.5:
            primitives.append(Sphere(center=pos, radius=size, texture=tex))
        else:
            extents = (size, float(rng.uniform(0.12, 0.28)),
                       float(rng.uniform(0.12, 0.28)))
            primitives.append(Box(center=pos, half_extents=extents, texture=tex))

    az = rng.uniform(0.0, 2.0 * np.pi)
    el = rng.uniform(np.deg2rad(35.0), np.deg2rad(70.0))
    light = (float(np.cos(el) * np.cos(az)), float(np.sin(el)),
             float(np.cos(el) * np.sin(az)))
    rig = CameraRig(count=num_cameras, radius=3.2, elevation_range=(15.0, 40.0),
                    look_at=(0.0, 0.0, 0.0), focal_scale=0.9)
    return SyntheticSpec(primitives=tuple(primitives), light=light,
                         background=(0.0, 0.0, 0.0), rig=rig,
                         image_size=image_size, seed=seed)


# -- dataset directory IO -----------------------------------------------------------


def save_scene(scene: Scene, directory) -> None:
    root = Path(directory)
    (root / "images").mkdir(parents=True, exist_ok=True)
    doc_views = []
    for i, view in enumerate(scene.views):
        name = f"{i:03d}"
        save_image_png(root / "images" / f"{name}.png", view.image)
        if view.depth is not None:
            (root / "depth").mkdir(exist_ok=True)
            save_depth_raster(root / "depth" / f"{name}.mndf",
                              view.depth.astype(np.float32))
        doc_views.append({
            "image": f"images/{name}.png",
            "intrinsics": view.camera.intrinsics.tolist(),
            "world_to_camera": view.camera.world_to_camera.tolist(),
        })
    doc = {"near": float(scene.near), "far": float(scene.far),
           "views": doc_views}
    (root / "cameras.json").write_text(json.dumps(doc, indent=2))


def load_scene(directory) -> Scene:
    root = Path(directory)
    manifest = root / "cameras.json"
    if not manifest.exists():
        raise SceneError(f"missing cameras.json in {root}")
    try:
        doc = json.loads(manifest.read_text())
    except json.JSONDecodeError as e:
        raise SceneError(f"malformed cameras.json in {root}: {e}") from e
    for key in ("near", "far", "views"):
        if key not in doc:
            raise SceneError(f"cameras.json is missing the '{key}' field")

    views = []
    for i, entry in enumerate(doc["views"]):
        try:
            image = load_image_png(root / entry["image"])
            camera = Camera(
                intrinsics=np.asarray(entry["intrinsics"], dtype=np.float64),
                world_to_camera=np.asarray(entry["world_to_camera"],
                                           dtype=np.float64),
                width=image.shape[1], height=image.shape[0],
                near=float(doc["near"]), far=float(doc["far"]))
        except (KeyError, ValueError, OSError, CameraError) as e:
            raise SceneError(f"view {i}: {e}") from e
        depth_path = root / "depth" / f"{i:03d}.mndf"
        depth = load_depth_raster(depth_path) if depth_path.exists() else None
        views.append(SceneView(image=image, camera=camera, depth=depth))
    return Scene(views=views, normalization=np.eye(4))


# -- checkpoint serialization ---------------------------------------------------------


def write_checkpoint(path, arrays: dict, config: dict | None = None) -> None:
    """Length-prefixed JSON header + concatenated little-endian float32 payload.

    Entries are laid out in sorted-name order with CRC32 checksums, so equal
    arrays always serialize to identical bytes.
    """
    entries = {}
    payload = bytearray()
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype="<f4")
        buf = arr.tobytes()
        entries[name] = {"dtype": "<f4", "shape": list(arr.shape),
                         "offset": len(payload), "crc32": zlib.crc32(buf)}
        payload += buf
    header = {"format_version": _CKPT_VERSION, "entries": entries}
    if config is not None:
        header["config"] = config
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(payload)


def read_checkpoint(path):
    """Parse and validate a checkpoint. Returns (header dict, arrays dict)."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise CheckpointError(f"{path}: file shorter than the header length prefix")
    (header_len,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[4:4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: malformed header: {e}") from e
    if header.get("format_version") != _CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported format_version "
                              f"{header.get('format_version')!r}")
    entries = header.get("entries")
    if not isinstance(entries, dict):
        raise CheckpointError(f"{path}: header has no entry table")

    payload = raw[4 + header_len:]
    cursor = 0
    for name in sorted(entries, key=lambda n: entries[n]["offset"]):
        e = entries[name]
        if e.get("dtype") != "<f4":
            raise CheckpointError(f"entry '{name}': unsupported dtype {e.get('dtype')!r}")
        size = int(np.prod(e["shape"], dtype=np.int64)) * 4
        if e["offset"] != cursor:
            raise CheckpointError(f"entry '{name}': offset {e['offset']} is not "
                                  f"contiguous with the previous entry ({cursor})")
        cursor += size
    if cursor != len(payload):
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes but the "
                              f"header describes {cursor}")

    arrays = {}
    for name, e in entries.items():
        size = int(np.prod(e["shape"], dtype=np.int64)) * 4
        buf = payload[e["offset"]: e["offset"] + size]
        if zlib.crc32(buf) != e["crc32"]:
            raise CheckpointError(f"entry '{name}': checksum mismatch, "
                                  f"payload is corrupted")
        arrays[name] = np.frombuffer(buf, dtype="<f4").reshape(e["shape"]).copy()
    return header, arrays


def save_checkpoint(model, path) -> None:
    config = getattr(model, "config", None)
    config_dict = model_config_to_dict(config) if config is not None else None
    write_checkpoint(path, model.store.state_arrays(), config=config_dict)


def load_checkpoint(path) -> Model:
    """Rebuild the model from its embedded config and stored parameters."""
    header, arrays = read_checkpoint(path)
    if "config" not in header:
        raise CheckpointError(f"{path}: checkpoint has no embedded model config, "
                              f"cannot rebuild the model")
    model = Model(model_config_from_dict(header["config"]))
    try:
        model.store.load_arrays(arrays)
    except ValueError as e:
        raise CheckpointError(str(e)) from e
    return model
