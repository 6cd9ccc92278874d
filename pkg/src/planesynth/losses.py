"""Loss terms: L1 appearance, edge-aware smoothness, occlusion detection,
occlusion-aware reprojection, and the combined objective.

The reprojection chain backprojects every target pixel with the rendered
target depth, maps it through the target-to-source transform (point-mapping
convention, ``X_s = R X_t + t``), projects into the source image, and
bilinearly samples there. A target pixel counts as occluded when the source
content in front of it is closer than the point itself by at least ``c * s``.
Occluded and out-of-bounds pixels are zeroed out of the reprojection loss,
but the normalization stays 1 / (H W): heavily occluded pairs are implicitly
down-weighted rather than renormalized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import DimensionMismatch
from .geometry import CameraIntrinsics, RigidTransform
from .render import RenderOutput

DEFAULT_OCCLUSION_C = 0.2
DEFAULT_LAMBDA = 1.0
DEFAULT_BETA = 1e-3
DISPARITY_EPS = 1e-6


@dataclass
class OcclusionMask:
    """occluded: 1.0 where the source view cannot see the target pixel;
    valid: projection landed inside the source image with positive depth."""

    occluded: np.ndarray
    valid: np.ndarray

    def keep_weight(self) -> np.ndarray:
        """Per-pixel multiplier for the reprojection loss."""
        return (1.0 - self.occluded) * self.valid.astype(np.float64)


@dataclass
class LossReport:
    l1: float
    smooth: float
    rep: float
    total: float
    lam: float
    beta: float
    objective: object = None  # Var combining the parts, for the optimizer
    l1_var: object = None
    smooth_var: object = None
    rep_var: object = None  # None when lam == 0


def _pixel_rays(K: CameraIntrinsics, dims):
    h, w = dims
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return (xs - K.cx) / K.fx, (ys - K.cy) / K.fy


def _project_chain(depth_t, pose_ts: RigidTransform, K_t: CameraIntrinsics,
                   K_s: CameraIntrinsics, dims):
    """Backproject target pixels at depth_t, move to the source frame,
    project. Works on Vars; returns (xs, ys, z_source)."""
    rx, ry = _pixel_rays(K_t, dims)
    d = ad.as_var(depth_t)
    x = d * rx
    y = d * ry
    R, t = pose_ts.R, pose_ts.t
    xs_cam = x * R[0, 0] + y * R[0, 1] + d * R[0, 2] + t[0]
    ys_cam = x * R[1, 0] + y * R[1, 1] + d * R[1, 2] + t[1]
    zs_cam = x * R[2, 0] + y * R[2, 1] + d * R[2, 2] + t[2]
    # Clamp the divisor so behind-camera pixels yield finite (invalid)
    # coordinates instead of NaN; they are masked out of every loss.
    zs_safe = ad.maximum(zs_cam, 1e-6)
    xs_pix = (xs_cam / zs_safe) * K_s.fx + K_s.cx
    ys_pix = (ys_cam / zs_safe) * K_s.fy + K_s.cy
    return xs_pix, ys_pix, zs_cam


def occlusion_mask(
    depth_t,
    depth_s,
    pose_ts: RigidTransform,
    K_s: CameraIntrinsics,
    K_t: CameraIntrinsics,
    c: float = DEFAULT_OCCLUSION_C,
    s: float = 1.0,
) -> OcclusionMask:
    """Detect target pixels hidden in the source view.

    Compares the source-frame depth of each reprojected target pixel against
    the rendered source depth sampled at the landing point; a gap of at least
    ``c * s`` marks occlusion. Out-of-bounds or behind-camera projections are
    invalid (never occluded, excluded from losses).
    """
    depth_t = ad.value_of(depth_t)
    depth_s = ad.value_of(depth_s)
    h, w = depth_t.shape
    xs, ys, zs = _project_chain(depth_t, pose_ts, K_t, K_s, (h, w))
    xs, ys, zs = ad.value_of(xs), ad.value_of(ys), ad.value_of(zs)
    valid = (zs > 0) & (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    sampled = ad.value_of(
        ad.bilinear(depth_s, np.where(valid, xs, 0.0), np.where(valid, ys, 0.0), "clamp")
    )
    occluded = (valid & (zs - sampled >= c * s)).astype(np.float64)
    return OcclusionMask(occluded, valid)


def reprojection_image(
    image_s,
    depth_t,
    pose_ts: RigidTransform,
    K_s: CameraIntrinsics,
    K_t: CameraIntrinsics,
):
    """Source ground truth warped into the target view via rendered depth.

    Differentiable in ``depth_t``; returns (image, valid). Out-of-bounds
    samples use zero padding and are excluded via ``valid``.
    """
    image_s = ad.value_of(image_s)
    dims = ad.value_of(depth_t).shape
    xs, ys, zs = _project_chain(depth_t, pose_ts, K_t, K_s, dims)
    zs_v = ad.value_of(zs)
    xs_v, ys_v = ad.value_of(xs), ad.value_of(ys)
    h, w = dims
    valid = (zs_v > 0) & (xs_v >= 0) & (xs_v <= w - 1) & (ys_v >= 0) & (ys_v <= h - 1)
    out = ad.bilinear(image_s, xs, ys, mode="zero")
    if not (ad.is_var(depth_t) and depth_t.requires_grad):
        out = ad.value_of(out)
    return out, valid


def reprojection_loss(image_t, reprojected, mask: OcclusionMask, valid=None):
    """Masked mean absolute reprojection error, normalized by H * W."""
    image_t = ad.value_of(image_t)
    shape = ad.value_of(reprojected).shape
    if image_t.shape != shape:
        raise DimensionMismatch(f"image shapes differ: {image_t.shape} vs {shape}")
    keep = mask.keep_weight()
    if valid is not None:
        keep = keep * valid.astype(np.float64)
    h, w = image_t.shape[:2]
    diff = ad.absolute(ad.as_var(reprojected) - image_t)
    per_pixel = ad.vmean(diff, axis=2) if image_t.ndim == 3 else diff
    total = ad.vsum(per_pixel * keep) / float(h * w)
    return total if ad.is_var(reprojected) and reprojected.requires_grad else total.item()


def edge_aware_smoothness(disp, image):
    """Mean-normalized edge-aware smoothness of a disparity map.

    Forward differences of disp / mean(disp), attenuated by exp(-|image
    gradient|) with the image gradient averaged over channels.
    """
    image = ad.value_of(image)
    d = ad.as_var(disp)
    h, w = d.shape
    dn = d / ad.vmean(d)
    ix = np.abs(image[:, 1:] - image[:, :-1]).mean(axis=2)
    iy = np.abs(image[1:, :] - image[:-1, :]).mean(axis=2)
    terms = []
    if w > 1:
        gx = ad.absolute(ad.narrow(dn, 1, 1, w - 1) - ad.narrow(dn, 1, 0, w - 1))
        terms.append(ad.vmean(gx * np.exp(-ix)))
    if h > 1:
        gy = ad.absolute(ad.narrow(dn, 0, 1, h - 1) - ad.narrow(dn, 0, 0, h - 1))
        terms.append(ad.vmean(gy * np.exp(-iy)))
    if not terms:
        return ad.Var(0.0)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def l1_loss(a, b):
    """Mean absolute difference over all entries."""
    return ad.vmean(ad.absolute(ad.as_var(a) - ad.value_of(b)))


def total_loss(
    render: RenderOutput,
    image_t,
    image_s,
    pose_ts: RigidTransform,
    K_s: CameraIntrinsics,
    K_t: CameraIntrinsics,
    depth_s=None,
    lam: float = DEFAULT_LAMBDA,
    beta: float = DEFAULT_BETA,
    c: float = DEFAULT_OCCLUSION_C,
    s: float = 1.0,
    use_occlusion_mask: bool = True,
) -> LossReport:
    """Appearance (L1 + beta * smoothness) plus lam * reprojection.

    ``render`` is the target-view render (Var fields during fitting).
    ``depth_s`` is the rendered source depth the occlusion test samples;
    required whenever lam > 0. ``use_occlusion_mask=False`` keeps the
    reprojection term but forces the mask to zeros (the ablation mode).
    """
    image_t = ad.value_of(image_t)
    l1 = l1_loss(render.image, image_t)
    disp = 1.0 / ad.maximum(ad.as_var(render.depth), DISPARITY_EPS)
    smooth = edge_aware_smoothness(disp, image_t)
    objective = l1 + beta * smooth
    rep_var = None
    rep_val = 0.0
    if lam > 0:
        if depth_s is None:
            raise ValueError("reprojection term needs the rendered source depth")
        mask = occlusion_mask(render.depth, depth_s, pose_ts, K_s, K_t, c, s)
        if not use_occlusion_mask:
            mask = OcclusionMask(np.zeros_like(mask.occluded), mask.valid)
        reproj, valid = reprojection_image(image_s, render.depth, pose_ts, K_s, K_t)
        rep = reprojection_loss(image_t, reproj, mask, valid)
        rep_var = ad.as_var(rep)
        objective = objective + lam * rep_var
        rep_val = float(ad.value_of(rep_var))
    l1_val = float(ad.value_of(l1))
    smooth_val = float(ad.value_of(smooth))
    total = l1_val + beta * smooth_val + lam * rep_val
    return LossReport(
        l1_val, smooth_val, rep_val, total, lam, beta, objective,
        l1_var=l1, smooth_var=smooth, rep_var=rep_var,
    )
