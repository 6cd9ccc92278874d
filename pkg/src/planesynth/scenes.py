"""Synthetic ground-truth scenes: textured fronto-parallel rectangles with
exact analytic renders, depths, and occlusion masks.

Scenes live in a canonical world frame (the source camera of every suite sits
at the origin looking down +z). Each layer is an axis-aligned rectangle on a
plane z = const carrying a procedural texture; an implicit full-frame
background plane at z_max closes every ray, so depth maps are total.
Textures are seeded value noise evaluated on world coordinates, which makes
multi-view renders of one surface exactly consistent.

The benchmark families:

* uniform:    one full-height strip per disparity bin, strip order shuffled,
              strip disparities drawn inside their bins. Every bin holds a
              similar share of pixels.
* aggregated: two depth clusters far apart (a near foreground cluster plus
              the far background), so a couple of bins hold nearly all
              pixels and the rest are starved.
* occlusion:  a near square over a textured far wall with enough baseline to
              open a wide disocclusion band.
* recovery:   three full strips whose depths sit strictly inside three
              distinct bins; the scene is exactly representable by a stack
              whose planes hit those disparities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import CameraInsideGeometry, InvalidRange
from .geometry import CameraIntrinsics, RigidTransform
from .optim import FitView, substream
from .sampler import DisparityBins, near_far_from_depth_range

SCENE_SCHEMA_VERSION = 1
_MIX1 = np.uint64(0x9E3779B97F4A7C15)
_MIX2 = np.uint64(0xBF58476D1CE4E5B9)
_MIX3 = np.uint64(0x94D049BB133111EB)


# ---------------------------------------------------------------------------
# Procedural textures


def _hash01(ix, iy, seed: int):
    """Deterministic lattice hash -> [0, 1), vectorized (splitmix-style)."""
    seed_mixed = (int(seed) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    h = ix.astype(np.int64).astype(np.uint64) * _MIX1
    h ^= iy.astype(np.int64).astype(np.uint64) * _MIX2
    h ^= np.uint64(seed_mixed)
    h ^= h >> np.uint64(30)
    h *= _MIX2
    h ^= h >> np.uint64(27)
    h *= _MIX3
    h ^= h >> np.uint64(31)
    return h.astype(np.float64) / float(2**64)


def _smoothstep(t):
    return t * t * (3.0 - 2.0 * t)


def _value_noise(x, y, seed: int):
    ix = np.floor(x)
    iy = np.floor(y)
    tx = _smoothstep(x - ix)
    ty = _smoothstep(y - iy)
    v00 = _hash01(ix, iy, seed)
    v10 = _hash01(ix + 1, iy, seed)
    v01 = _hash01(ix, iy + 1, seed)
    v11 = _hash01(ix + 1, iy + 1, seed)
    top = v00 + (v10 - v00) * tx
    bot = v01 + (v11 - v01) * tx
    return top + (bot - top) * ty


def noise_texture(x, y, seed: int, scale: float, octaves: int = 3):
    """Band-limited RGB value noise on world coordinates, range [0.05, 0.95]."""
    octaves = int(np.clip(octaves, 1, 8))
    channels = []
    for ch in range(3):
        acc = np.zeros_like(np.asarray(x, dtype=np.float64))
        norm = 0.0
        for o in range(octaves):
            freq = scale * (2.0**o)
            amp = 0.5**o
            acc += amp * _value_noise(x * freq, y * freq, seed * 8 + ch * 131 + o)
            norm += amp
        channels.append(acc / norm)
    rgb = np.stack(channels, axis=-1)
    return 0.05 + 0.9 * rgb


def texture_rgb(spec: dict, x, y):
    kind = spec.get("kind", "noise")
    if kind == "noise":
        return noise_texture(
            x, y, int(spec["seed"]), float(spec.get("scale", 1.0)),
            int(spec.get("octaves", 3)),
        )
    if kind == "flat":
        color = np.asarray(spec["color"], dtype=np.float64)
        return np.broadcast_to(color, np.shape(x) + (3,)).copy()
    raise ValueError(f"unknown texture kind {kind!r}")


# ---------------------------------------------------------------------------
# Scene model


@dataclass
class Layer:
    """Axis-aligned textured rectangle on the plane z = const (world units)."""

    z: float
    rect: tuple  # (x0, y0, x1, y1)
    texture: dict

    def contains(self, x, y):
        x0, y0, x1, y1 = self.rect
        return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)


@dataclass
class SyntheticScene:
    layers: list
    background: tuple
    z_min: float
    z_max: float
    name: str = "scene"

    def __post_init__(self):
        self.layers = sorted(self.layers, key=lambda l: l.z)
        for layer in self.layers:
            if not (0 < self.z_min <= layer.z <= self.z_max):
                raise InvalidRange(
                    f"layer depth {layer.z} outside [{self.z_min}, {self.z_max}]"
                )

    def bins(self, n: int) -> DisparityBins:
        d_n, d_f = near_far_from_depth_range(self.z_min, self.z_max)
        return DisparityBins(d_n, d_f, n)

    def to_json(self) -> dict:
        return {
            "schema_version": SCENE_SCHEMA_VERSION,
            "name": self.name,
            "layers": [
                {"z": l.z, "rect": list(l.rect), "texture": l.texture}
                for l in self.layers
            ],
            "background": list(self.background),
            "z_min": self.z_min,
            "z_max": self.z_max,
        }

    @classmethod
    def from_json(cls, obj) -> "SyntheticScene":
        return cls(
            [Layer(float(l["z"]), tuple(l["rect"]), dict(l["texture"])) for l in obj["layers"]],
            tuple(obj["background"]),
            float(obj["z_min"]),
            float(obj["z_max"]),
            obj.get("name", "scene"),
        )


def save_scene(scene: SyntheticScene, path) -> None:
    with open(path, "w") as f:
        json.dump(scene.to_json(), f, indent=2)


def load_scene(path) -> SyntheticScene:
    with open(path) as f:
        return SyntheticScene.from_json(json.load(f))


# ---------------------------------------------------------------------------
# Analytic rendering


def _camera_rays(K: CameraIntrinsics, pose_w2c: RigidTransform, dims):
    h, w = dims
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dir_cam = np.stack([(xs - K.cx) / K.fx, (ys - K.cy) / K.fy, np.ones_like(xs)], axis=-1)
    c2w = pose_w2c.inverse()
    dir_world = dir_cam @ c2w.R.T
    return c2w.t, dir_world


def render_scene_analytic(scene: SyntheticScene, K: CameraIntrinsics,
                          pose_w2c: RigidTransform, dims):
    """Exact painter's-order render; returns (image, depth, hit_points).

    Depth is the camera-frame z of the nearest hit (background plane at
    z_max included). ``hit_points`` holds the world coordinates of the hit
    per pixel, which the occlusion oracle reuses.
    """
    center, dirs = _camera_rays(K, pose_w2c, dims)
    planes = [l.z for l in scene.layers] + [scene.z_max]
    if any(center[2] >= z for z in planes):
        raise CameraInsideGeometry(
            f"camera z={center[2]:g} is not in front of every plane"
        )
    h, w = dims
    image = np.empty((h, w, 3))
    image[:] = np.asarray(scene.background, dtype=np.float64)
    depth = np.full((h, w), np.nan)
    hit = np.full((h, w, 3), np.nan)
    assigned = np.zeros((h, w), dtype=bool)
    for layer in scene.layers:
        t = (layer.z - center[2]) / dirs[..., 2]
        point = center + t[..., None] * dirs
        mask = (~assigned) & (t > 0) & layer.contains(point[..., 0], point[..., 1])
        if np.any(mask):
            image[mask] = texture_rgb(layer.texture, point[mask][:, 0], point[mask][:, 1])
            cam = pose_w2c.apply(point[mask])
            depth[mask] = cam[:, 2]
            hit[mask] = point[mask]
            assigned |= mask
    rest = ~assigned
    if np.any(rest):
        t = (scene.z_max - center[2]) / dirs[rest][:, 2]
        point = center + t[:, None] * dirs[rest]
        cam = pose_w2c.apply(point)
        depth[rest] = cam[:, 2]
        hit[rest] = point
    return image, depth, hit


def visibility_from(scene: SyntheticScene, camera_center: np.ndarray,
                    points: np.ndarray):
    """True where a world point is not blocked by any nearer layer as seen
    from ``camera_center`` (exact geometric test, no sampling)."""
    flat = points.reshape(-1, 3)
    seg = flat - camera_center
    visible = np.ones(flat.shape[0], dtype=bool)
    for layer in scene.layers:
        denom = seg[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = (layer.z - camera_center[2]) / denom
        q = camera_center + mu[:, None] * seg
        blocking = (
            (mu > 1e-9)
            & (mu < 1.0 - 1e-9)
            & layer.contains(q[:, 0], q[:, 1])
        )
        visible &= ~blocking
    return visible.reshape(points.shape[:-1])


# ---------------------------------------------------------------------------
# View pairs


@dataclass
class ViewPair:
    """A posed source/target pair with exact images, depths, and the
    target-view occlusion mask (pixels of the target hidden in the source)."""

    K_s: CameraIntrinsics
    K_t: CameraIntrinsics
    pose_s: RigidTransform  # world -> source camera
    pose_t: RigidTransform  # world -> target camera
    image_s: np.ndarray
    image_t: np.ndarray
    depth_s: np.ndarray
    depth_t: np.ndarray
    occluded_t: np.ndarray
    valid_t: np.ndarray

    @property
    def pose_ts(self) -> RigidTransform:
        """Target-camera points -> source-camera points."""
        return self.pose_s.compose(self.pose_t.inverse())

    @property
    def dims(self):
        return self.image_s.shape[:2]


def make_view_pair(scene: SyntheticScene, K_s, K_t, pose_s, pose_t, dims) -> ViewPair:
    image_s, depth_s, _ = render_scene_analytic(scene, K_s, pose_s, dims)
    image_t, depth_t, hit_t = render_scene_analytic(scene, K_t, pose_t, dims)
    src_center = pose_s.inverse().t
    cam_s = pose_s.apply(hit_t.reshape(-1, 3)).reshape(hit_t.shape)
    z_s = cam_s[..., 2]
    h, w = dims
    with np.errstate(divide="ignore", invalid="ignore"):
        xs = K_s.fx * cam_s[..., 0] / z_s + K_s.cx
        ys = K_s.fy * cam_s[..., 1] / z_s + K_s.cy
    valid = (z_s > 0) & (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    visible = visibility_from(scene, src_center, hit_t)
    occluded = (valid & ~visible).astype(np.float64)
    return ViewPair(
        K_s, K_t, pose_s, pose_t,
        image_s, image_t, depth_s, depth_t, occluded, valid,
    )


def default_intrinsics(dims) -> CameraIntrinsics:
    h, w = dims
    f = float(w)  # ~53 degree horizontal field of view
    return CameraIntrinsics(f, f, (w - 1) / 2.0, (h - 1) / 2.0)


def pairs_for_scene(scene, dims, baselines, K=None) -> list:
    """Source at the origin plus one target per baseline translation.

    ``baselines`` holds world-frame target camera positions (tx, ty, tz);
    the world->camera transform of a target at position p is (I, -p).
    """
    K = K or default_intrinsics(dims)
    pose_s = RigidTransform.identity()
    pairs = []
    for b in baselines:
        pose_t = RigidTransform.translation(-np.asarray(b, dtype=np.float64))
        pairs.append(make_view_pair(scene, K, K, pose_s, pose_t, dims))
    return pairs


def fit_views_from_pairs(pairs: list) -> list:
    """FitView list (one shared source + all targets) for optim.fit."""
    first = pairs[0]
    views = [FitView(first.K_s, None, first.image_s, first.depth_s)]
    for p in pairs:
        views.append(FitView(p.K_t, p.pose_ts, p.image_t, p.depth_t))
    return views


# ---------------------------------------------------------------------------
# Scene families


@dataclass
class SceneBundle:
    scene: SyntheticScene
    pairs: list
    family: str
    seed: int

    def views(self):
        return fit_views_from_pairs(self.pairs)

    @property
    def dims(self):
        return self.pairs[0].dims


def _strip_edges_world(n_strips: int, dims, K: CameraIntrinsics, z: float,
                       pad: float = 6.0):
    """World x-extents of vertical strips tiling the image at depth z."""
    h, w = dims
    cols = np.linspace(-0.5, w - 0.5, n_strips + 1)
    cols[0] -= pad * w
    cols[-1] += pad * w
    return (cols - K.cx) / K.fx * z


def _full_rect(dims, K: CameraIntrinsics, z: float, pad: float = 6.0):
    h, w = dims
    x0 = (-0.5 - pad * w - K.cx) / K.fx * z
    x1 = (w - 0.5 + pad * w - K.cx) / K.fx * z
    y0 = (-0.5 - pad * h - K.cy) / K.fy * z
    y1 = (h - 0.5 + pad * h - K.cy) / K.fy * z
    return (x0, y0, x1, y1)


def _strip_layer(k, n_strips, dims, K, z, seed, feature_px=9.0):
    h, w = dims
    edges = _strip_edges_world(n_strips, dims, K, z)
    y0 = (-0.5 - 6.0 * h - K.cy) / K.fy * z
    y1 = (h - 0.5 + 6.0 * h - K.cy) / K.fy * z
    scale = K.fx / (feature_px * z)
    return Layer(
        z,
        (edges[k], y0, edges[k + 1], y1),
        {"kind": "noise", "seed": seed, "scale": scale},
    )


def make_uniform_scene(seed: int, dims=(64, 64), n_bins: int = 8,
                       z_min: float = 1.0, z_max: float = 10.0) -> SyntheticScene:
    """One full-height strip per bin; strip depths drawn inside their bins."""
    rng = substream(seed, "scene-uniform")
    K = default_intrinsics(dims)
    bins = DisparityBins(*near_far_from_depth_range(z_min, z_max), n_bins)
    edges = bins.edges()
    order = rng.permutation(n_bins)
    layers = []
    for strip, b in enumerate(order):
        v = rng.uniform(0.2, 0.8)
        d = edges[b] - v * bins.width
        layers.append(
            _strip_layer(strip, n_bins, dims, K, 1.0 / d, int(rng.integers(1 << 31)))
        )
    return SyntheticScene(layers, (0.3, 0.3, 0.3), z_min, z_max, f"uniform-{seed}")


def make_aggregated_scene(seed: int, dims=(64, 64), z_min: float = 1.0,
                          z_max: float = 10.0) -> SyntheticScene:
    """Two tight depth clusters far apart; most bins hold almost no pixels.

    Cluster disparities sit near bin edges, far from the bin-center
    initialization, which is what makes the staged schedule matter.
    """
    rng = substream(seed, "scene-aggregated")
    K = default_intrinsics(dims)
    h, w = dims
    bins = DisparityBins(*near_far_from_depth_range(z_min, z_max), 8)
    # Near cluster: two half-frame rectangles inside the first bin, close to
    # its far edge. Far cluster: a textured wall just inside the last bin.
    d_hi = bins.edges()[0] - 0.78 * bins.width - rng.uniform(0, 0.06) * bins.width
    d_lo = bins.edges()[0] - 0.88 * bins.width - rng.uniform(0, 0.06) * bins.width
    z_wall_d = bins.edges()[7] - rng.uniform(0.55, 0.8) * bins.width
    z_hi, z_lo, z_wall = 1.0 / d_hi, 1.0 / d_lo, 1.0 / z_wall_d
    mid = (w / 2.0 - 0.5 - K.cx) / K.fx
    left_hi = _full_rect(dims, K, z_hi)
    right_lo = _full_rect(dims, K, z_lo)
    layers = [
        Layer(z_hi, (left_hi[0], left_hi[1], mid * z_hi, left_hi[3]),
              {"kind": "noise", "seed": int(rng.integers(1 << 31)),
               "scale": K.fx / (9.0 * z_hi)}),
        Layer(z_lo, (mid * z_lo, right_lo[1], right_lo[2], right_lo[3]),
              {"kind": "noise", "seed": int(rng.integers(1 << 31)),
               "scale": K.fx / (9.0 * z_lo)}),
        Layer(z_wall, _full_rect(dims, K, z_wall),
              {"kind": "noise", "seed": int(rng.integers(1 << 31)),
               "scale": K.fx / (9.0 * z_wall)}),
    ]
    return SyntheticScene(layers, (0.3, 0.3, 0.3), z_min, z_max, f"aggregated-{seed}")


def make_occlusion_scene(seed: int, dims=(64, 64), z_min: float = 1.0,
                         z_max: float = 10.0) -> SyntheticScene:
    """A near square over a textured far wall (wide disocclusion band)."""
    rng = substream(seed, "scene-occlusion")
    K = default_intrinsics(dims)
    h, w = dims
    z_near = rng.uniform(1.25, 1.45)
    z_far = rng.uniform(3.6, 4.4)
    half = 12.0  # half-size of the square in pixels at z_near
    cx_w = rng.uniform(-4.0, 4.0) / K.fx * z_near
    sq = half / K.fx * z_near
    layers = [
        Layer(z_near, (cx_w - sq, -sq, cx_w + sq, sq),
              {"kind": "noise", "seed": int(rng.integers(1 << 31)),
               "scale": K.fx / (8.0 * z_near)}),
        Layer(z_far, _full_rect(dims, K, z_far),
              {"kind": "noise", "seed": int(rng.integers(1 << 31)),
               "scale": K.fx / (8.0 * z_far)}),
    ]
    return SyntheticScene(layers, (0.3, 0.3, 0.3), z_min, z_max, f"occlusion-{seed}")


def make_recovery_scene(seed: int, dims=(64, 64), n_bins: int = 8,
                        bins_hit=(1, 3, 6), z_min: float = 1.0,
                        z_max: float = 10.0) -> SyntheticScene:
    """Three full strips with depths strictly inside three distinct bins."""
    rng = substream(seed, "scene-recovery")
    K = default_intrinsics(dims)
    bins = DisparityBins(*near_far_from_depth_range(z_min, z_max), n_bins)
    edges = bins.edges()
    layers = []
    order = rng.permutation(3)
    for strip, which in enumerate(order):
        b = bins_hit[which]
        v = rng.uniform(0.25, 0.75)
        d = edges[b] - v * bins.width
        layers.append(
            _strip_layer(strip, 3, dims, K, 1.0 / d, int(rng.integers(1 << 31)))
        )
    return SyntheticScene(layers, (0.3, 0.3, 0.3), z_min, z_max, f"recovery-{seed}")


def make_mixed_scene(seed: int, dims=(64, 64), z_min: float = 1.0,
                     z_max: float = 20.0) -> SyntheticScene:
    """2-4 textured rectangles at varied depths over the far background."""
    rng = substream(seed, "scene-mixed")
    K = default_intrinsics(dims)
    n_layers = int(rng.integers(2, 5))
    zs = np.sort(rng.uniform(z_min * 1.05, z_max * 0.7, n_layers))
    layers = [
        Layer(float(zs[-1]), _full_rect(dims, K, float(zs[-1])),
              {"kind": "noise", "seed": int(rng.integers(1 << 31)),
               "scale": K.fx / (9.0 * zs[-1])}),
    ]
    h, w = dims
    for z in zs[:-1]:
        cw = rng.uniform(0.25, 0.6) * w / K.fx * z
        chh = rng.uniform(0.25, 0.6) * h / K.fy * z
        cx = rng.uniform(-0.25, 0.25) * w / K.fx * z
        cy = rng.uniform(-0.25, 0.25) * h / K.fy * z
        layers.append(
            Layer(float(z), (cx - cw / 2, cy - chh / 2, cx + cw / 2, cy + chh / 2),
                  {"kind": "noise", "seed": int(rng.integers(1 << 31)),
                   "scale": K.fx / (9.0 * z)})
        )
    return SyntheticScene(layers, (0.3, 0.3, 0.3), z_min, z_max, f"mixed-{seed}")


_FAMILIES = {
    "uniform": make_uniform_scene,
    "aggregated": make_aggregated_scene,
    "occlusion": make_occlusion_scene,
    "recovery": make_recovery_scene,
    "mixed": make_mixed_scene,
}


def make_scene(family: str, seed: int, dims=(64, 64)) -> SyntheticScene:
    if family not in _FAMILIES:
        raise ValueError(f"unknown scene family {family!r}; know {sorted(_FAMILIES)}")
    return _FAMILIES[family](seed, dims=dims)


def default_baselines(family: str, seed: int):
    """Per-family target camera positions in the world frame."""
    rng = substream(seed, "baselines")
    if family == "occlusion":
        b = rng.uniform(0.16, 0.2)
        return [(b, 0.0, 0.0), (-b * 0.6, 0.0, 0.0)]
    b = rng.uniform(0.055, 0.085)
    dz = rng.uniform(0.0, 0.03)
    return [(b, 0.0, 0.0), (-b, 0.0, dz)]


def make_bundle(family: str, seed: int, dims=(64, 64)) -> SceneBundle:
    scene = make_scene(family, seed, dims)
    pairs = pairs_for_scene(scene, dims, default_baselines(family, seed))
    return SceneBundle(scene, pairs, family, seed)


def make_benchmark_suite(seed: int, count: int, family: str = "mixed",
                         dims=(64, 64)) -> list:
    """Seeded list of bundles; seeds are consecutive from ``seed``."""
    return [make_bundle(family, seed + i, dims) for i in range(count)]


def disparity_bin_counts(depth: np.ndarray, bins: DisparityBins) -> np.ndarray:
    """Pixel counts per disparity bin of a ground-truth depth map."""
    idx = bins.bin_index(1.0 / depth)
    return np.bincount(idx.reshape(-1), minlength=bins.n)
