"""Plane-stack scene representation and the volume-rendering compositor.

A stack holds N fronto-parallel RGB + density planes at strictly descending
disparities (front to back). Rendering accumulates, per pixel and front to
back, transmittance ``T_i = exp(-sum_{j<i} sigma_j delta_j)`` and weights
``w_i = T_i (1 - exp(-sigma_i delta_i))``; the image is ``sum_i w_i c_i`` and
the depth is ``sum_i w_i z_i`` (left unnormalized on purpose, so empty space
renders depth 0). ``delta`` is the metric distance between consecutive planes
along each pixel's ray.

All compositing cores run on autodiff Vars; the public stack-level functions
wrap plain arrays and return plain arrays.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import imgio
from .errors import DimensionMismatch, EmptyMask, NonPositiveDepth
from .geometry import (
    CameraIntrinsics,
    RigidTransform,
    bilinear_sample,
    plane_homography,
    warp_coords,
    warp_grid,
)

STACK_SCHEMA_VERSION = 1
RGB_MAXVAL = 65535  # plane textures round-trip through 16-bit PPM


@dataclass
class PlaneStack:
    """N planes of color and volume density with per-plane disparity.

    rgb: (N, H, W, 3) in [0, 1]; sigma: (N, H, W) >= 0 (units 1/scene-unit);
    disparities: (N,) strictly decreasing and positive (front to back);
    intrinsics: reference camera; scale: relative scene scale (default 1).
    """

    rgb: np.ndarray
    sigma: np.ndarray
    disparities: np.ndarray
    intrinsics: CameraIntrinsics
    scale: float = 1.0

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.disparities = np.asarray(self.disparities, dtype=np.float64)
        n = self.disparities.shape[0]
        if self.rgb.shape[:1] != (n,) or self.sigma.shape[:1] != (n,):
            raise DimensionMismatch("per-plane array leading dims disagree with N")
        if self.rgb.shape[1:3] != self.sigma.shape[1:3] or self.rgb.shape[3] != 3:
            raise DimensionMismatch(
                f"rgb {self.rgb.shape} vs sigma {self.sigma.shape}"
            )
        d = self.disparities
        if np.any(d <= 0) or np.any(np.diff(d) >= 0):
            raise ValueError("disparities must be strictly decreasing and positive")
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be nonnegative")
        if self.rgb.min() < 0 or self.rgb.max() > 1:
            raise ValueError("rgb must lie in [0, 1]")

    @property
    def n_planes(self) -> int:
        return self.disparities.shape[0]

    @property
    def dims(self):
        return self.rgb.shape[1:3]

    @property
    def depths(self) -> np.ndarray:
        return 1.0 / self.disparities


@dataclass
class RenderOutput:
    """Composited image/depth plus the per-plane weights that produced them."""

    image: np.ndarray
    depth: np.ndarray
    weights: np.ndarray
    residual_transmittance: np.ndarray


def ray_norm_grid(K: CameraIntrinsics, dims) -> np.ndarray:
    """Per-pixel |((x-cx)/fx, (y-cy)/fy, 1)|: converts depth gaps to ray distance."""
    h, w = dims
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    rx = (xs - K.cx) / K.fx
    ry = (ys - K.cy) / K.fy
    return np.sqrt(rx * rx + ry * ry + 1.0)


def virtual_far_disparity(d):
    """Disparity of the synthetic plane behind the stack.

    Mirrors the last gap (2 d_N - d_{N-1}) and floors it at d_N / 2 so the
    far plane keeps a positive, finite spacing. For N = 1 the floor is used
    directly.
    """
    d = ad.as_var(d)
    n = d.shape[0]
    last = ad.element(d, n - 1)
    if n == 1:
        return last * 0.5
    prev = ad.element(d, n - 2)
    return ad.maximum(last * 2.0 - prev, last * 0.5)


def spacings_from_disparities(d, K: CameraIntrinsics, dims):
    """Differentiable per-plane ray spacings (N, H, W) from disparities (N,)."""
    d = ad.as_var(d)
    n = d.shape[0]
    d_virt = virtual_far_disparity(d)
    if n > 1:
        d_next = ad.concat([ad.narrow(d, 0, 1, n - 1), ad.reshape(d_virt, (1,))], axis=0)
    else:
        d_next = ad.reshape(d_virt, (1,))
    z = 1.0 / d
    z_next = 1.0 / d_next
    gaps = z_next - z
    ray = ray_norm_grid(K, dims)
    return ad.reshape(gaps, (n, 1, 1)) * ray


def composite_vars(rgb, sigma, delta, d):
    """Core compositor on Vars.

    rgb (N, H, W, 3), sigma (N, H, W), delta (N, H, W), d (N,) disparities.
    Returns a RenderOutput whose fields are Vars.
    """
    rgb, sigma, delta, d = map(ad.as_var, (rgb, sigma, delta, d))
    n = d.shape[0]
    sd = sigma * delta
    trans = ad.exp(-ad.cumsum_exclusive(sd, axis=0))
    alpha = 1.0 - ad.exp(-sd)
    weights = trans * alpha
    h, w = sigma.shape[1:3]
    image = ad.vsum(ad.reshape(weights, (n, h, w, 1)) * rgb, axis=0)
    z = 1.0 / d
    depth = ad.vsum(weights * ad.reshape(z, (n, 1, 1)), axis=0)
    residual = ad.exp(-ad.vsum(sd, axis=0))
    return RenderOutput(image, depth, weights, residual)


def render_stack_vars(rgb, sigma, d, K: CameraIntrinsics, dims) -> RenderOutput:
    delta = spacings_from_disparities(d, K, dims)
    return composite_vars(rgb, sigma, delta, d)


def _values(out: RenderOutput) -> RenderOutput:
    return RenderOutput(
        ad.value_of(out.image),
        ad.value_of(out.depth),
        ad.value_of(out.weights),
        ad.value_of(out.residual_transmittance),
    )


def plane_spacings(stack: PlaneStack) -> np.ndarray:
    """Per-pixel distance between consecutive planes along each ray (N, H, W)."""
    return ad.value_of(
        spacings_from_disparities(stack.disparities, stack.intrinsics, stack.dims)
    )


def render_weights(stack: PlaneStack):
    """Rendering weights (N, H, W) and transmittances (N+1, H, W), T_1 = 1."""
    out = render_stack(stack)
    sd = stack.sigma * plane_spacings(stack)
    csum = np.concatenate(
        [np.zeros((1,) + stack.dims), np.cumsum(sd, axis=0)], axis=0
    )
    return out.weights, np.exp(-csum)


def render_stack(stack: PlaneStack) -> RenderOutput:
    out = render_stack_vars(
        stack.rgb, stack.sigma, stack.disparities, stack.intrinsics, stack.dims
    )
    return _values(out)


def render_image(stack: PlaneStack) -> np.ndarray:
    return render_stack(stack).image


def render_depth(stack: PlaneStack) -> np.ndarray:
    return render_stack(stack).depth


def target_disparities(d, pose: RigidTransform):
    """Per-plane disparities expressed in the target frame.

    The warp parameterization carries -t_ts, so the plane's target-frame
    depth is z + t_z. Works on Vars and arrays.
    """
    if ad.is_var(d):
        z_t = 1.0 / d + float(pose.t[2])
        return 1.0 / z_t
    z_t = 1.0 / np.asarray(d, dtype=np.float64) + float(pose.t[2])
    return 1.0 / z_t


def warp_stack(stack: PlaneStack, K_t: CameraIntrinsics, pose: RigidTransform) -> PlaneStack:
    """Resample every plane into the target view via its homography.

    ``pose`` is the plane-warp parameterization (see geometry.warp_pose).
    The identity pose with matching intrinsics returns the input content
    bit for bit (the sample grid is exactly the pixel grid).
    """
    z_t = stack.depths + pose.t[2]
    if np.any(z_t <= 0):
        bad = int(np.argmax(z_t <= 0))
        raise NonPositiveDepth(
            f"plane {bad} has non-positive target-frame depth {z_t[bad]:g}"
        )
    h, w = stack.dims
    rgb_t = np.empty_like(stack.rgb)
    sigma_t = np.empty_like(stack.sigma)
    for i in range(stack.n_planes):
        H = plane_homography(stack.intrinsics, K_t, pose, float(z_t[i]))
        grid = warp_grid(H, (h, w))
        rgb_t[i] = bilinear_sample(stack.rgb[i], grid, boundary="clamp")
        sigma_t[i] = bilinear_sample(stack.sigma[i], grid, boundary="clamp")
    return PlaneStack(rgb_t, np.maximum(sigma_t, 0.0), 1.0 / z_t, K_t, stack.scale)


def warp_stack_vars(rgb, sigma, d, K_s, K_t, pose, dims):
    """Differentiable stack warp; returns (rgb_t, sigma_t, d_t) Vars.

    Gradient flows into the plane disparities through both the homography
    (parallax shifts) and, downstream, the target-frame plane spacings.
    """
    rgb, sigma, d = map(ad.as_var, (rgb, sigma, d))
    n = d.shape[0]
    d_t = target_disparities(d, pose)
    rgb_planes = []
    sigma_planes = []
    for i in range(n):
        di = ad.element(d_t, i)
        xs, ys, _ = warp_coords(K_s, K_t, pose, di, dims)
        rgb_planes.append(ad.bilinear(_plane(rgb, i), xs, ys, mode="clamp"))
        sigma_planes.append(ad.bilinear(_plane(sigma, i), xs, ys, mode="clamp"))
    return ad.stack(rgb_planes, axis=0), ad.stack(sigma_planes, axis=0), d_t


def _plane(stacked, i):
    """Slice plane i off a stacked Var without losing the graph."""
    v = ad.narrow(stacked, 0, i, 1)
    return ad.reshape(v, v.shape[1:])


def render_novel_view(stack: PlaneStack, K_t: CameraIntrinsics, pose: RigidTransform) -> RenderOutput:
    """Warp the stack to the target view and composite there."""
    warped = warp_stack(stack, K_t, pose)
    return render_stack(warped)


def render_novel_view_vars(rgb, sigma, d, K_s, K_t, pose, dims) -> RenderOutput:
    rgb_t, sigma_t, d_t = warp_stack_vars(rgb, sigma, d, K_s, K_t, pose, dims)
    return render_stack_vars(rgb_t, sigma_t, d_t, K_t, dims)


def median_depth_scale(depth_hat: np.ndarray, gt_depth: np.ndarray, valid: np.ndarray) -> float:
    """Relative scale aligning rendered to ground-truth depth (median ratio)."""
    med_hat = np.median(depth_hat[valid])
    if med_hat <= 0:
        return 1.0
    return float(np.median(gt_depth[valid]) / med_hat)


def rv_from_weights(weights, z_planes, gt_depth, s, valid) -> float:
    if not np.any(valid):
        raise EmptyMask("rendering variance needs at least one valid pixel")
    dev = s * z_planes[:, None, None] - gt_depth[None, :, :]
    per_pixel = (weights * dev * dev).sum(axis=0)
    return float(per_pixel[valid].mean())


def rendering_variance(stack: PlaneStack, gt_depth, s=None, valid_mask=None) -> float:
    """Weighted variance of plane depths around the ground-truth depth.

    ``s`` rescales plane depths before comparison; when omitted it is the
    median(gt) / median(rendered) ratio over the valid pixels.
    """
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    if valid_mask is None:
        valid_mask = np.ones(gt_depth.shape, dtype=bool)
    if not np.any(valid_mask):
        raise EmptyMask("rendering variance needs at least one valid pixel")
    if np.any(gt_depth[valid_mask] <= 0):
        raise ValueError("ground-truth depth must be positive on the valid mask")
    out = render_stack(stack)
    if s is None:
        s = median_depth_scale(out.depth, gt_depth, valid_mask)
    return rv_from_weights(out.weights, stack.depths, gt_depth, float(s), valid_mask)


# ---------------------------------------------------------------------------
# Stack serialization: one 16-bit PPM per plane, densities + metadata in JSON.


def save_stack(stack: PlaneStack, directory) -> None:
    os.makedirs(directory, exist_ok=True)
    for i in range(stack.n_planes):
        imgio.write_ppm(
            os.path.join(directory, f"plane_{i:02d}.ppm"), stack.rgb[i], RGB_MAXVAL
        )
    meta = {
        "schema_version": STACK_SCHEMA_VERSION,
        "n_planes": stack.n_planes,
        "height": stack.dims[0],
        "width": stack.dims[1],
        "disparities": stack.disparities.tolist(),
        "intrinsics": stack.intrinsics.to_json(),
        "scale": stack.scale,
        "sigma": stack.sigma.tolist(),
    }
    with open(os.path.join(directory, "stack.json"), "w") as f:
        json.dump(meta, f)


def load_stack(directory) -> PlaneStack:
    with open(os.path.join(directory, "stack.json")) as f:
        meta = json.load(f)
    n = meta["n_planes"]
    rgb = np.stack(
        [
            imgio.read_ppm(os.path.join(directory, f"plane_{i:02d}.ppm"))
            for i in range(n)
        ],
        axis=0,
    )
    return PlaneStack(
        rgb,
        np.asarray(meta["sigma"], dtype=np.float64),
        np.asarray(meta["disparities"], dtype=np.float64),
        CameraIntrinsics.from_json(meta["intrinsics"]),
        float(meta["scale"]),
    )
