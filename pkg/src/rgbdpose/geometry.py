"""Pinhole camera math, depth-map registration, and robust depth lookup.

Conventions
-----------
* World coordinates live in the color camera frame: x right, y down,
  z forward (optical axis), meters.
* Pixel coordinates are continuous; integer values address pixel centers,
  (u, v) = (column, row).
* Depth maps store z-depth in meters as float32; 0.0 marks an invalid pixel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateProjection, InvalidDepth, NoDepthAvailable

# Upper bound on plausible sensor depth; values at or beyond are rejected.
DEPTH_MAX_M = 20.0

# Default half-width of the square window scanned by robust_depth_at.
DEPTH_SEARCH_RADIUS_PX = 25


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; focal lengths and principal point in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside "
                f"{self.width}x{self.height} image"
            )

    def matrix(self) -> np.ndarray:
        """3x3 calibration matrix K."""
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion: p -> rotation @ p + translation (meters)."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation is not orthonormal within 1e-9")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation determinant is not +1 within 1e-9")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (N, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Transform equal to applying `other` first, then `self`."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )


class DepthMap:
    """Per-pixel z-depth in meters; 0.0 encodes a missing measurement."""

    def __init__(self, values: np.ndarray):
        v = np.asarray(values, dtype=np.float32)
        if v.ndim != 2:
            raise ValueError(f"depth map must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("depth map contains non-finite values")
        valid = v > 0
        if np.any(v < 0) or np.any(v[valid] >= DEPTH_MAX_M):
            raise ValueError(f"valid depths must lie in (0, {DEPTH_MAX_M}) m")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def valid_mask(self) -> np.ndarray:
        return self.values > 0

    @classmethod
    def empty(cls, width: int, height: int) -> "DepthMap":
        return cls(np.zeros((height, width), dtype=np.float32))


@dataclass(frozen=True)
class PixelCoord:
    """Continuous pixel location with an optional detection confidence."""

    u: float
    v: float
    confidence: float | None = None

    def __post_init__(self):
        if self.confidence is not None and not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


def _as_uv(p) -> tuple[float, float]:
    if isinstance(p, PixelCoord):
        return float(p.u), float(p.v)
    u, v = p
    return float(u), float(v)


def project(point, intr: CameraIntrinsics) -> PixelCoord:
    """Perspective-project a 3D point in the camera frame onto the image.

    Raises DegenerateProjection for points at or behind the camera.
    """
    x, y, z = (float(c) for c in np.asarray(point, dtype=np.float64))
    if z <= 0:
        raise DegenerateProjection(f"cannot project point with z={z}")
    return PixelCoord(intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def project_points(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorized projection of (N, 3) camera-frame points to (N, 2) pixels.

    All points must have z > 0.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if np.any(p[:, 2] <= 0):
        raise DegenerateProjection("point with non-positive z in batch")
    uv = np.empty((p.shape[0], 2))
    uv[:, 0] = intr.fx * p[:, 0] / p[:, 2] + intr.cx
    uv[:, 1] = intr.fy * p[:, 1] / p[:, 2] + intr.cy
    return uv


def backproject(p, depth: float, intr: CameraIntrinsics) -> np.ndarray:
    """Lift a pixel and a metric depth to a 3D point: d * K^-1 * (u, v, 1).

    Raises InvalidDepth for non-positive depth.
    """
    if depth <= 0:
        raise InvalidDepth(f"depth must be positive, got {depth}")
    u, v = _as_uv(p)
    d = float(depth)
    return np.array([d * (u - intr.cx) / intr.fx, d * (v - intr.cy) / intr.fy, d])


def backproject_pixels(uv: np.ndarray, depth: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Vectorized back-projection of (N, 2) pixels with (N,) depths."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(depth, dtype=np.float64).reshape(-1)
    if np.any(d <= 0):
        raise InvalidDepth("non-positive depth in batch")
    out = np.empty((uv.shape[0], 3))
    out[:, 0] = d * (uv[:, 0] - intr.cx) / intr.fx
    out[:, 1] = d * (uv[:, 1] - intr.cy) / intr.fy
    out[:, 2] = d
    return out


def depth_to_points(depth: DepthMap, intr: CameraIntrinsics) -> np.ndarray:
    """Back-project every valid depth pixel; returns an (M, 3) point cloud."""
    vs, us = np.nonzero(depth.valid_mask)
    if vs.size == 0:
        return np.zeros((0, 3))
    d = depth.values[vs, us].astype(np.float64)
    uv = np.stack([us.astype(np.float64), vs.astype(np.float64)], axis=1)
    return backproject_pixels(uv, d, intr)


def warp_depth(
    src: DepthMap,
    intr_src: CameraIntrinsics,
    transform: RigidTransform,
    intr_dst: CameraIntrinsics,
) -> DepthMap:
    """Re-render a depth map into another camera frame.

    Every valid source pixel is back-projected, moved by `transform`
    (source frame to destination frame) and projected into the destination
    image at the nearest integer pixel.  When several points land on the
    same pixel the smallest depth wins (z-buffer); pixels hit by nothing
    stay invalid, so the output is generally sparse.
    """
    out = np.full((intr_dst.height, intr_dst.width), np.inf, dtype=np.float64)
    pts = depth_to_points(src, intr_src)
    if pts.shape[0] > 0:
        moved = transform.apply(pts)
        front = moved[:, 2] > 0
        moved = moved[front]
        if moved.shape[0] > 0:
            u = np.rint(intr_dst.fx * moved[:, 0] / moved[:, 2] + intr_dst.cx).astype(np.int64)
            v = np.rint(intr_dst.fy * moved[:, 1] / moved[:, 2] + intr_dst.cy).astype(np.int64)
            inside = (u >= 0) & (u < intr_dst.width) & (v >= 0) & (v < intr_dst.height)
            np.minimum.at(out, (v[inside], u[inside]), moved[inside, 2])
    out[~np.isfinite(out)] = 0.0
    out[out >= DEPTH_MAX_M] = 0.0
    return DepthMap(out.astype(np.float32))


def robust_depth_at(depth: DepthMap, p, search_radius: int = DEPTH_SEARCH_RADIUS_PX) -> float:
    """Median of the three valid depth pixels nearest to `p`.

    Candidates are valid pixels within `search_radius` (Euclidean, pixels)
    of `p`, ranked by distance with ties broken in row-major pixel order.
    With fewer than three candidates the median of those found is used;
    for two candidates the lower of the two is returned so the result is
    always an observed depth value.

    Raises NoDepthAvailable when no valid pixel lies within the radius.
    """
    u, v = _as_uv(p)
    r = int(search_radius)
    u0, v0 = int(round(u)), int(round(v))
    lo_u, hi_u = max(0, u0 - r), min(depth.width - 1, u0 + r)
    lo_v, hi_v = max(0, v0 - r), min(depth.height - 1, v0 + r)
    if lo_u > hi_u or lo_v > hi_v:
        raise NoDepthAvailable("search window lies outside the image")

    window = depth.values[lo_v : hi_v + 1, lo_u : hi_u + 1]
    vs, us = np.nonzero(window > 0)
    if vs.size == 0:
        raise NoDepthAvailable("no valid depth pixel in search window")

    uu = us + lo_u
    vv = vs + lo_v
    dist2 = (uu - u) ** 2 + (vv - v) ** 2
    keep = dist2 <= float(r) ** 2
    if not np.any(keep):
        raise NoDepthAvailable(f"no valid depth pixel within {r} px")
    uu, vv, dist2 = uu[keep], vv[keep], dist2[keep]

    order = np.lexsort((vv * depth.width + uu, dist2))
    nearest = np.sort(depth.values[vv[order[:3]], uu[order[:3]]].astype(np.float64))
    return float(nearest[(nearest.size - 1) // 2])
