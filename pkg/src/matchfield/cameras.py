"""Pinhole cameras, projection, ray generation, and depth sampling.

Conventions, used everywhere in the package:
  * world_to_camera maps x_cam = R @ x_world + t (OpenCV-style, z forward,
    x right, y down), stored as a 4x4 rigid transform.
  * Pixel coordinates are measured at pixel centers: (0, 0) is the center
    of the top-left pixel, x grows right, y grows down. The image covers
    [-0.5, W-0.5] x [-0.5, H-0.5].
  * Ray depths t are distances along the unit direction (not camera z).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-5
BEHIND_EPS = 1e-8


class CameraError(ValueError):
    """Invalid camera construction or use (bad rotation, behind-camera point)."""


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with validated rigid extrinsics."""

    intrinsics: np.ndarray       # 3x3: [[fx,0,cx],[0,fy,cy],[0,0,1]]
    world_to_camera: np.ndarray  # 4x4 rigid transform
    height: int
    width: int
    near: float
    far: float

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        M = np.asarray(self.world_to_camera, dtype=np.float64)
        if K.shape != (3, 3):
            raise CameraError(f"intrinsics must be 3x3, got {K.shape}")
        if M.shape != (4, 4):
            raise CameraError(f"world_to_camera must be 4x4, got {M.shape}")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise CameraError(f"focal lengths must be positive, got fx={K[0, 0]}, fy={K[1, 1]}")
        if not (0 < self.near < self.far):
            raise CameraError(f"need 0 < near < far, got near={self.near}, far={self.far}")
        R = M[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=ROTATION_TOL):
            raise CameraError("rotation block is not orthonormal within 1e-5")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise CameraError(f"rotation determinant {np.linalg.det(R):.6f} is not +1")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "world_to_camera", M)

    @property
    def fx(self) -> float:
        return self.intrinsics[0, 0]

    @property
    def fy(self) -> float:
        return self.intrinsics[1, 1]

    @property
    def cx(self) -> float:
        return self.intrinsics[0, 2]

    @property
    def cy(self) -> float:
        return self.intrinsics[1, 2]

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def center(self) -> np.ndarray:
        """Camera center in world coordinates (-R^T t)."""
        return -self.rotation.T @ self.translation

    def contains_pixel(self, pixel) -> bool:
        x, y = float(pixel[0]), float(pixel[1])
        return -0.5 <= x <= self.width - 0.5 and -0.5 <= y <= self.height - 0.5


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray     # (3,) world units
    direction: np.ndarray  # (3,) unit norm

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64)
        d = np.asarray(self.direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise CameraError(f"ray direction norm {n:.8f} is not 1 within 1e-6")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    def at(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass(frozen=True)
class RaySamples:
    """K ordered points along one ray with depths and inter-sample spacings."""

    positions: np.ndarray  # (K, 3)
    depths: np.ndarray     # (K,) strictly increasing
    spacings: np.ndarray   # (K,) nonnegative; last entry is far - t_K

    def __post_init__(self):
        t = np.asarray(self.depths, dtype=np.float64)
        if t.ndim != 1 or len(t) == 0:
            raise CameraError("depths must be a nonempty 1-D array")
        if np.any(np.diff(t) <= 0):
            raise CameraError("depths must be strictly increasing")
        if np.any(np.asarray(self.spacings) < 0):
            raise CameraError("spacings must be nonnegative")


def project(point, camera: Camera):
    """Project a world point. Returns (pixel (2,), depth z, in_frustum).

    Raises CameraError when the point is at or behind the camera plane.
    """
    p = np.asarray(point, dtype=np.float64)
    cam = camera.rotation @ p + camera.translation
    z = cam[2]
    if z <= BEHIND_EPS:
        raise CameraError(f"point {p.tolist()} is behind the camera (z={z:.3e})")
    pixel = np.array([camera.fx * cam[0] / z + camera.cx,
                      camera.fy * cam[1] / z + camera.cy])
    in_frustum = camera.near <= z <= camera.far and camera.contains_pixel(pixel)
    return pixel, z, in_frustum


def project_points(points: np.ndarray, camera: Camera):
    """Batched projection that never raises.

    Returns (pixels (P, 2), depths (P,), in_front (P,)). Behind-camera
    points get clamped-depth pixel coordinates and in_front = False;
    callers mask them instead of handling exceptions point by point.
    """
    pts = np.asarray(points, dtype=np.float64)
    cam = pts @ camera.rotation.T + camera.translation
    z = cam[:, 2]
    in_front = z > BEHIND_EPS
    z_safe = np.where(in_front, z, 1.0)
    pixels = np.stack([camera.fx * cam[:, 0] / z_safe + camera.cx,
                       camera.fy * cam[:, 1] / z_safe + camera.cy], axis=1)
    return pixels, z, in_front


def generate_ray(camera: Camera, pixel) -> Ray:
    """Ray through a pixel center, origin at the camera center."""
    if not camera.contains_pixel(pixel):
        raise CameraError(f"pixel {tuple(float(v) for v in pixel)} outside "
                          f"{camera.width}x{camera.height} image bounds")
    origins, dirs = generate_rays(camera, np.asarray([pixel], dtype=np.float64))
    return Ray(origin=origins[0], direction=dirs[0])


def generate_rays(camera: Camera, pixels: np.ndarray):
    """Batched ray generation. Returns (origins (P, 3), directions (P, 3))."""
    px = np.asarray(pixels, dtype=np.float64)
    x = (px[:, 0] - camera.cx) / camera.fx
    y = (px[:, 1] - camera.cy) / camera.fy
    dirs_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    dirs = dirs_cam @ camera.rotation  # R^T applied row-wise
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    origin = camera.center()
    return np.broadcast_to(origin, dirs.shape).copy(), dirs


def sample_ray(ray: Ray, near: float, far: float, count: int,
               jitter_rng: np.random.Generator | None = None) -> RaySamples:
    """Uniform depth samples along one ray (midpoint rule).

    t_i = near + (i - 0.5) * (far - near) / K for i = 1..K. With
    ``jitter_rng`` each t_i moves uniformly within its bin (a 1% margin
    from the bin edges keeps the sequence strictly increasing).
    """
    t, delta = sample_depths(near, far, count, 1, jitter_rng)
    t, delta = t[0], delta[0]
    positions = ray.origin[None, :] + t[:, None] * ray.direction[None, :]
    return RaySamples(positions=positions, depths=t, spacings=delta)


def sample_depths(near: float, far: float, count: int, num_rays: int,
                  jitter_rng: np.random.Generator | None = None):
    """Depth/spacing arrays for a batch of rays, shape (num_rays, K)."""
    if count < 1:
        raise CameraError(f"need at least one sample per ray, got {count}")
    if not (0 <= near < far):
        raise CameraError(f"need 0 <= near < far, got near={near}, far={far}")
    step = (far - near) / count
    base = near + np.arange(count, dtype=np.float64) * step
    if jitter_rng is None:
        offsets = np.full((num_rays, count), 0.5)
    else:
        offsets = 0.01 + 0.98 * jitter_rng.random((num_rays, count))
    t = base[None, :] + offsets * step
    delta = np.empty_like(t)
    delta[:, :-1] = np.diff(t, axis=1)
    delta[:, -1] = far - t[:, -1]
    return t, delta
