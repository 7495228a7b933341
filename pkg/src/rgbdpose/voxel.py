"""Person-centered voxelization, score tiling, lifting, and fusion.

The metric cube is axis-aligned with the color camera and centered on the
reference point (the back-projected neck detection).  Volumes are stored
as numpy arrays indexed ``[ix, iy, iz]`` (score volumes ``[j, ix, iy, iz]``)
where ix/iy/iz walk the camera x/y/z axes; voxel i covers the half-open
metric interval [lo + i*res, lo + (i+1)*res).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OutOfGrid, ReferenceUnavailable, NoDepthAvailable
from .geometry import (
    CameraIntrinsics,
    DepthMap,
    PixelCoord,
    backproject,
    depth_to_points,
    project_points,
    robust_depth_at,
)
from .skeleton import Keypoints2D, Skeleton3D


@dataclass(frozen=True)
class GridSpec:
    """Metric cube: center (meters), voxels per side, meters per voxel."""

    center: np.ndarray
    k: int
    resolution: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        object.__setattr__(self, "center", c)
        if self.k < 2 or self.k % 2 != 0:
            raise ValueError(f"K must be even and >= 2, got {self.k}")
        if not self.resolution > 0:
            raise ValueError(f"resolution must be positive, got {self.resolution}")

    @property
    def side(self) -> float:
        return self.k * self.resolution

    @property
    def lower_corner(self) -> np.ndarray:
        return self.center - 0.5 * self.side

    def axis_centers(self, axis: int) -> np.ndarray:
        """Metric centers of the K voxels along one axis (0=x, 1=y, 2=z)."""
        lo = self.lower_corner[axis]
        return lo + (np.arange(self.k) + 0.5) * self.resolution


@dataclass
class VoxelGrid:
    """Binary occupancy over a GridSpec."""

    spec: GridSpec
    occupancy: np.ndarray  # (K, K, K) uint8 in {0, 1}

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=np.uint8)
        k = self.spec.k
        if occ.shape != (k, k, k):
            raise ValueError(f"occupancy shape {occ.shape} does not match K={k}")
        if occ.max(initial=0) > 1:
            raise ValueError("occupancy values must be 0 or 1")
        self.occupancy = occ


@dataclass
class ScoreMap2D:
    """Per-pixel, per-joint likelihoods in [0, 1], stored (H, W, J)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3:
            raise ValueError(f"score map must be (H, W, J), got shape {v.shape}")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("score map values must lie in [0, 1]")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def num_joints(self) -> int:
        return self.values.shape[2]


@dataclass
class ScoreVolume:
    """Per-voxel, per-joint likelihoods over a GridSpec, stored (J, K, K, K)."""

    spec: GridSpec
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores)
        k = self.spec.k
        if s.ndim != 4 or s.shape[1:] != (k, k, k):
            raise ValueError(f"scores shape {s.shape} does not match K={k}")
        if not np.all(np.isfinite(s)):
            raise ValueError("score volume contains non-finite values")
        self.scores = s

    @property
    def num_joints(self) -> int:
        return self.scores.shape[0]


def world_to_voxel(point, spec: GridSpec) -> tuple[int, int, int]:
    """Map a world point to the voxel index containing it (half-open bins).

    Raises OutOfGrid for points outside the cube.
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    idx = np.floor((p - spec.lower_corner) / spec.resolution).astype(np.int64)
    if np.any(idx < 0) or np.any(idx >= spec.k):
        raise OutOfGrid(f"point {p.tolist()} outside the {spec.side:.3f} m cube")
    return int(idx[0]), int(idx[1]), int(idx[2])


def voxel_to_world(index, spec: GridSpec) -> np.ndarray:
    """Metric center of a voxel index."""
    idx = np.asarray(index, dtype=np.int64).reshape(3)
    if np.any(idx < 0) or np.any(idx >= spec.k):
        raise OutOfGrid(f"voxel index {idx.tolist()} outside K={spec.k} grid")
    return spec.lower_corner + (idx + 0.5) * spec.resolution


def compute_reference(depth: DepthMap, neck: PixelCoord, intr: CameraIntrinsics) -> np.ndarray:
    """Back-project the neck detection at the median of its nearest depths.

    Raises ReferenceUnavailable when no depth exists near the neck.
    """
    try:
        d = robust_depth_at(depth, neck)
    except NoDepthAvailable as exc:
        raise ReferenceUnavailable(str(exc)) from exc
    return backproject(neck, d, intr)


def build_occupancy(depth: DepthMap, intr: CameraIntrinsics, spec: GridSpec) -> VoxelGrid:
    """Mark every voxel hit by at least one back-projected depth pixel."""
    occ = np.zeros((spec.k, spec.k, spec.k), dtype=np.uint8)
    pts = depth_to_points(depth, intr)
    if pts.shape[0] > 0:
        idx = np.floor((pts - spec.lower_corner) / spec.resolution).astype(np.int64)
        inside = np.all((idx >= 0) & (idx < spec.k), axis=1)
        idx = idx[inside]
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return VoxelGrid(spec, occ)


def bilinear_sample(values: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Sample an (H, W, C) image bilinearly at (N, 2) pixel locations.

    Locations outside [0, W-1] x [0, H-1] return zeros for all channels.
    """
    h, w = values.shape[:2]
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]
    inside = (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)

    uc = np.clip(u, 0, w - 1)
    vc = np.clip(v, 0, h - 1)
    u0 = np.clip(np.floor(uc).astype(np.int64), 0, w - 2) if w > 1 else np.zeros_like(uc, np.int64)
    v0 = np.clip(np.floor(vc).astype(np.int64), 0, h - 2) if h > 1 else np.zeros_like(vc, np.int64)
    fu = uc - u0
    fv = vc - v0

    img = values.astype(np.float64)
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)
    out = (
        img[v0, u0] * ((1 - fu) * (1 - fv))[:, None]
        + img[v0, u1] * (fu * (1 - fv))[:, None]
        + img[v1, u0] * ((1 - fu) * fv)[:, None]
        + img[v1, u1] * (fu * fv)[:, None]
    )
    out[~inside] = 0.0
    return out


def tile_scores(s2d: ScoreMap2D, spec: GridSpec, intr: CameraIntrinsics) -> ScoreVolume:
    """Replicate resampled 2D scores along the grid's z axis.

    Each (x, y) voxel column is sampled once: the column center is placed
    at the cube-center depth, projected into the image, and the score map
    is read bilinearly there.  The value is repeated over every z slice,
    which approximates sweeping the scores along the viewing rays.
    """
    if spec.center[2] <= 0:
        raise ValueError("grid center must lie in front of the camera")
    k = spec.k
    xs = spec.axis_centers(0)
    ys = spec.axis_centers(1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), np.full(k * k, spec.center[2])], axis=1)
    uv = project_points(pts, intr)
    samples = bilinear_sample(s2d.values, uv)  # (K*K, J)
    plane = samples.reshape(k, k, s2d.num_joints).transpose(2, 0, 1)  # (J, K, K)
    scores = np.broadcast_to(plane[:, :, :, None], (s2d.num_joints, k, k, k))
    return ScoreVolume(spec, np.ascontiguousarray(scores, dtype=np.float32))


def make_gt_volume(
    gt: Skeleton3D, spec: GridSpec, sigma_vox: float
) -> tuple[ScoreVolume, np.ndarray]:
    """Gaussian target volumes with peak exactly 1 at each GT voxel.

    The Gaussian is isotropic in voxel units and evaluated at voxel
    centers; it is normalized so the voxel containing the GT point holds
    exactly 1.0.  Invalid joints and joints outside the cube give all-zero
    channels; the returned bool array flags the out-of-grid ones.
    """
    if not sigma_vox > 0:
        raise ValueError(f"sigma_vox must be positive, got {sigma_vox}")
    k = spec.k
    j = gt.num_joints
    vol = np.zeros((j, k, k, k), dtype=np.float32)
    out_of_grid = np.zeros(j, dtype=bool)
    centers = np.arange(k) + 0.5  # voxel-unit centers along each axis

    for joint in range(j):
        if not gt.valid[joint]:
            continue
        g = (gt.points[joint] - spec.lower_corner) / spec.resolution
        idx = np.floor(g).astype(np.int64)
        if np.any(idx < 0) or np.any(idx >= k):
            out_of_grid[joint] = True
            continue
        dx2 = (centers - g[0]) ** 2
        dy2 = (centers - g[1]) ** 2
        dz2 = (centers - g[2]) ** 2
        d2 = dx2[:, None, None] + dy2[None, :, None] + dz2[None, None, :]
        d2min = dx2[idx[0]] + dy2[idx[1]] + dz2[idx[2]]
        vol[joint] = np.exp((d2min - d2) / (2.0 * sigma_vox**2)).astype(np.float32)
    return ScoreVolume(spec, vol), out_of_grid


def argmax_world(s3d: ScoreVolume) -> Skeleton3D:
    """Lift each channel's best voxel to its metric center.

    Confidence is the channel maximum; exact ties resolve to the smallest
    linear index; all-zero channels produce invalid joints.
    """
    j = s3d.num_joints
    points = np.zeros((j, 3))
    valid = np.zeros(j, dtype=bool)
    conf = np.zeros(j)
    for joint in range(j):
        channel = s3d.scores[joint]
        flat = channel.reshape(-1)
        if not flat.any():
            continue
        best = int(np.argmax(flat))
        idx = np.unravel_index(best, channel.shape)
        points[joint] = voxel_to_world(idx, s3d.spec)
        valid[joint] = True
        conf[joint] = float(flat[best])
    return Skeleton3D(points, valid, conf)


def fuse(
    w_vpn: Skeleton3D,
    p2d: Keypoints2D,
    intr: CameraIntrinsics,
    tau: float,
) -> Skeleton3D:
    """Combine volumetric and projected predictions per joint.

    Joints whose 2D detection confidence reaches `tau` are re-projected
    onto the detection's camera ray at the volumetric depth, removing the
    grid's x/y quantization; all other joints keep the volumetric result.
    The z coordinate is never changed.
    """
    if w_vpn.num_joints != p2d.num_joints:
        raise ValueError("joint counts of 3D and 2D inputs must match")
    fused = w_vpn.copy()
    for joint in range(w_vpn.num_joints):
        if not w_vpn.valid[joint]:
            continue
        if not p2d.valid[joint] or p2d.confidence[joint] < tau:
            continue
        z = w_vpn.points[joint, 2]
        if z <= 0:
            continue
        fused.points[joint] = backproject(p2d.uv[joint], z, intr)
        fused.confidence[joint] = p2d.confidence[joint]
    return fused
