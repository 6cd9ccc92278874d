"""Pinhole camera math, plane-induced homographies, and bilinear resampling.

Conventions
-----------
* Pixel centers sit at integer coordinates; an image of width W spans
  x in [0, W-1]. Camera frames are right-handed with +z forward.
* :class:`RigidTransform` acts on points as ``X' = R X + t``.
* :func:`plane_homography` builds ``H = K_s (R - t n^T / z) K_t^{-1}`` with
  ``n = (0, 0, 1)``, mapping homogeneous target pixels to source pixels for a
  fronto-parallel plane at depth ``z`` in the target frame. With the minus
  sign in this formula, geometric consistency with the point-mapping
  convention requires passing the transform ``(R_ts, -t_ts)`` where
  ``X_s = R_ts X_t + t_ts`` maps target-camera points into the source frame.
  :func:`warp_pose` derives that parameterization from the point-mapping
  transform; the reprojection chain in :mod:`planesynth.losses` keeps using
  the point-mapping transform directly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import DegenerateHomography, DimensionMismatch, NonPositiveDepth

EPS_Z = 1e-9
EPS_W = 1e-12


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics (pixels). The 3x3 matrix is upper triangular with
    bottom row (0, 0, 1)."""

    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got {self.fx}, {self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    @classmethod
    def identity(cls) -> "CameraIntrinsics":
        return cls(1.0, 1.0, 0.0, 0.0)

    def to_json(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_json(cls, obj) -> "CameraIntrinsics":
        return cls(float(obj["fx"]), float(obj["fy"]), float(obj["cx"]), float(obj["cy"]))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation acting as ``X' = R X + t``."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9:
            raise ValueError("R is not orthonormal within 1e-9")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("det(R) != 1 within 1e-9")

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def translation(cls, t) -> "RigidTransform":
        return cls(np.eye(3), np.asarray(t, dtype=np.float64))

    @classmethod
    def rotation_z(cls, radians: float, t=(0.0, 0.0, 0.0)) -> "RigidTransform":
        c, s = np.cos(radians), np.sin(radians)
        return cls(np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]), t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (..., 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.R.T + self.t

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self o other: first apply ``other``, then ``self``."""
        return RigidTransform(self.R @ other.R, self.R @ other.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -self.R.T @ self.t)

    @property
    def is_identity(self) -> bool:
        return np.allclose(self.R, np.eye(3), atol=1e-15) and np.allclose(
            self.t, 0.0, atol=1e-15
        )

    def to_json(self) -> dict:
        return {"R": self.R.reshape(-1).tolist(), "t": self.t.tolist()}

    @classmethod
    def from_json(cls, obj) -> "RigidTransform":
        return cls(np.asarray(obj["R"]).reshape(3, 3), np.asarray(obj["t"]))


def warp_pose(pose_ts: RigidTransform) -> RigidTransform:
    """Parameterization of a target-to-source transform for plane warping.

    ``pose_ts`` maps target-camera points into the source frame
    (``X_s = R X_t + t``). The plane-warp formula's minus sign absorbs the
    translation with opposite sign, so the warp consumes ``(R, -t)``.
    """
    return RigidTransform(pose_ts.R, -pose_ts.t)


@dataclass(frozen=True)
class Homography:
    """3x3 map from homogeneous target pixels to homogeneous source pixels."""

    H: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=np.float64).reshape(3, 3)
        object.__setattr__(self, "H", H)
        if abs(np.linalg.det(H)) <= EPS_W:
            raise DegenerateHomography(f"singular homography, det={np.linalg.det(H):g}")

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.H))

    def compose(self, other: "Homography") -> "Homography":
        return Homography(self.H @ other.H)


@dataclass
class SampleGrid:
    """Per-pixel source coordinates for a target image plus validity flags."""

    xs: np.ndarray
    ys: np.ndarray
    valid: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.xs.shape != self.ys.shape:
            raise DimensionMismatch(
                f"coordinate shapes differ: {self.xs.shape} vs {self.ys.shape}"
            )
        if self.valid is None:
            self.valid = np.ones(self.xs.shape, dtype=bool)

    @property
    def shape(self):
        return self.xs.shape


def identity_grid(dims) -> SampleGrid:
    h, w = dims
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return SampleGrid(xs, ys, np.ones((h, w), dtype=bool))


def project(p, K: CameraIntrinsics) -> np.ndarray:
    """pi: camera-frame points (..., 3) -> pixel coordinates (..., 2)."""
    p = np.asarray(p, dtype=np.float64)
    z = p[..., 2]
    if np.any(z <= EPS_Z):
        raise NonPositiveDepth(f"projection needs z > {EPS_Z:g}")
    return np.stack(
        [K.fx * p[..., 0] / z + K.cx, K.fy * p[..., 1] / z + K.cy], axis=-1
    )


def backproject(q, z, K: CameraIntrinsics) -> np.ndarray:
    """pi^{-1}: pixels (..., 2) at depth z (broadcastable) -> points (..., 3)."""
    q = np.asarray(q, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if np.any(z <= EPS_Z):
        raise NonPositiveDepth(f"backprojection needs z > {EPS_Z:g}")
    x = (q[..., 0] - K.cx) * z / K.fx
    y = (q[..., 1] - K.cy) * z / K.fy
    return np.stack([x, y, np.broadcast_to(z, x.shape)], axis=-1)


def plane_homography(
    K_s: CameraIntrinsics,
    K_t: CameraIntrinsics,
    pose: RigidTransform,
    z_plane: float,
) -> Homography:
    """Homography of a fronto-parallel plane at depth ``z_plane``.

    ``H = K_s (R - t n^T / z) K_t^{-1}`` with ``n = (0, 0, 1)``. See the
    module docstring for the pose parameterization this formula consumes.
    """
    if z_plane <= EPS_Z:
        raise NonPositiveDepth(f"plane depth must exceed {EPS_Z:g}, got {z_plane}")
    n = np.array([0.0, 0.0, 1.0])
    M = pose.R - np.outer(pose.t, n) / z_plane
    return Homography(K_s.matrix @ M @ K_t.inverse_matrix)


def apply_homography(H, xs, ys):
    """Apply a homography to coordinate arrays; returns (xs', ys', w)."""
    M = H.H if isinstance(H, Homography) else np.asarray(H, dtype=np.float64)
    u = M[0, 0] * xs + M[0, 1] * ys + M[0, 2]
    v = M[1, 0] * xs + M[1, 1] * ys + M[1, 2]
    w = M[2, 0] * xs + M[2, 1] * ys + M[2, 2]
    return u, v, w


def warp_grid(H, dims) -> SampleGrid:
    """Sample grid for every target pixel of an (H, W) image under ``H``.

    Pixels whose homogeneous scale collapses (|w| <= 1e-12) or that land
    outside the source bounds are flagged invalid, never fatal.
    """
    h, w = dims
    base = identity_grid(dims)
    u, v, den = apply_homography(H, base.xs, base.ys)
    ok = np.abs(den) > EPS_W
    safe = np.where(ok, den, 1.0)
    xs = np.where(ok, u / safe, -1.0)
    ys = np.where(ok, v / safe, -1.0)
    valid = ok & (xs >= 0.0) & (xs <= w - 1.0) & (ys >= 0.0) & (ys <= h - 1.0)
    return SampleGrid(xs, ys, valid)


def bilinear_sample(grid_values, coords, boundary="clamp"):
    """Bilinear interpolation of (H, W[, C]) values at ``coords``.

    ``coords`` is a :class:`SampleGrid` or an ``(xs, ys)`` pair; entries may
    be NumPy arrays or autodiff Vars, and the result is a Var whenever any
    input is one. Boundary modes: ``clamp`` extends edge content; ``zero``
    treats out-of-bounds content as zero (pair it with the grid's validity
    flags).
    """
    if boundary not in ("clamp", "zero"):
        raise ValueError(f"unknown boundary mode {boundary!r}")
    if isinstance(coords, SampleGrid):
        xs, ys = coords.xs, coords.ys
    else:
        xs, ys = coords
    xs_shape = ad.value_of(xs).shape
    ys_shape = ad.value_of(ys).shape
    if xs_shape != ys_shape:
        raise DimensionMismatch(f"coordinate shapes differ: {xs_shape} vs {ys_shape}")
    out = ad.bilinear(grid_values, xs, ys, mode=boundary)
    if ad.is_var(grid_values) or ad.is_var(xs) or ad.is_var(ys):
        return out
    return out.value


def warp_coords(
    K_s: CameraIntrinsics,
    K_t: CameraIntrinsics,
    pose: RigidTransform,
    d_plane,
    dims,
):
    """Differentiable warp grid for a plane at target-frame disparity ``d``.

    Exploits the affine structure of the plane homography in disparity:
    ``H(d) = K_s R K_t^{-1} + d * (-K_s t) (0, 0, 1)``, so only the last
    column depends on ``d``. Returns ``(xs, ys, valid)`` where the
    coordinates are Vars whenever ``d_plane`` is one.

    Args:
      d_plane: scalar disparity (float or 0-d Var), 1 / plane depth in the
        target frame.
    """
    h, w = dims
    base = identity_grid(dims)
    A = K_s.matrix @ pose.R @ K_t.inverse_matrix
    au = A[0, 0] * base.xs + A[0, 1] * base.ys + A[0, 2]
    av = A[1, 0] * base.xs + A[1, 1] * base.ys + A[1, 2]
    aw = A[2, 0] * base.xs + A[2, 1] * base.ys + A[2, 2]
    c = -(K_s.matrix @ pose.t)
    d = d_plane if ad.is_var(d_plane) else ad.Var(float(d_plane))
    u = d * c[0] + au
    v = d * c[1] + av
    den = d * c[2] + aw
    xs = u / den
    ys = v / den
    den_v = den.value
    ok = np.abs(den_v) > EPS_W
    valid = ok & (xs.value >= 0.0) & (xs.value <= w - 1.0)
    valid &= (ys.value >= 0.0) & (ys.value <= h - 1.0)
    return xs, ys, valid
