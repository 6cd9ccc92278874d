"""Parameter groups, the adaptive-moment optimizer, placement strategies as
trainable objects, and the fit loop with its two optimization schedules.

Plane contents are stored as unconstrained pre-activations (logistic for
color, softplus for density) so the renderer's range invariants hold by
construction after any number of steps. Plane locations are either fixed
(random draw, bin centers) or trainable (local offsets, global logits).

Schedules:

* joint ("uopt"): every enabled group updates from step 0 with one rate;
* staged ("aopt"): stage one freezes the placement at bin centers and fits
  contents; stage two re-enables placement with a large rate while the
  content rate drops.
"""

from __future__ import annotations

import csv
import io
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import losses as lss
from . import metrics as mtr
from . import render as rnd
from . import sampler as smp
from .errors import Diverged, NonFiniteUpdate
from .geometry import CameraIntrinsics, RigidTransform, warp_pose

HISTORY_BASE_COLUMNS = ("step", "l1", "smooth", "rep", "total", "rv", "psnr", "ssim")


def substream(seed: int, name: str) -> np.random.Generator:
    """Named deterministic substream of a run seed."""
    return np.random.default_rng(
        np.random.SeedSequence((seed, zlib.crc32(name.encode())))
    )


# ---------------------------------------------------------------------------
# Parameters and the optimizer


@dataclass
class ParamGroup:
    name: str
    value: np.ndarray
    enabled: bool = True
    lr_scale: float = 1.0

    def var(self) -> ad.Var:
        return ad.Var(self.value, requires_grad=self.enabled)


class ParameterSet:
    """Named groups of optimizable arrays with enable flags and rate scales."""

    def __init__(self):
        self.groups: dict[str, ParamGroup] = {}

    def add(self, name, value, enabled=True, lr_scale=1.0) -> ParamGroup:
        g = ParamGroup(
            name, np.asarray(value, dtype=np.float64).copy(), enabled, lr_scale
        )
        self.groups[name] = g
        return g

    def leaf_vars(self) -> dict[str, ad.Var]:
        """Fresh Vars over the current values, one per group."""
        return {name: g.var() for name, g in self.groups.items()}

    def __getitem__(self, name) -> ParamGroup:
        return self.groups[name]

    def __contains__(self, name) -> bool:
        return name in self.groups


class Adam:
    """Adaptive-moment update (decay 0.9 / 0.999, eps 1e-8) per group."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: ParameterSet, grads: dict, lr: float) -> None:
        """Update every enabled group that received a gradient."""
        for name, g in grads.items():
            group = params[name]
            if not group.enabled or g is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(group.value)
                self.v[name] = np.zeros_like(group.value)
                self.t[name] = 0
            self.t[name] += 1
            t = self.t[name]
            m = self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**t)
            vhat = v / (1 - self.beta2**t)
            update = lr * group.lr_scale * mhat / (np.sqrt(vhat) + self.eps)
            new_value = group.value - update
            if not np.all(np.isfinite(new_value)):
                raise NonFiniteUpdate(f"non-finite values in parameter group '{name}'")
            group.value = new_value


# ---------------------------------------------------------------------------
# Schedules


@dataclass(frozen=True)
class UOpt:
    """Joint schedule: one learning rate for contents and placement."""

    lr: float = 0.1

    def rates(self, step, total_steps):
        """-> (content lr, placement lr multiplier, placement enabled)."""
        return self.lr, 1.0, True


@dataclass(frozen=True)
class AOpt:
    """Two-stage schedule: contents first, then placement with a large rate.

    ``stage1_steps=None`` uses 40% of the budget. The placement rate in
    stage two must exceed the content rate.
    """

    stage1_steps: int | None = None
    lr_stage1: float = 0.1
    lr_content_stage2: float = 0.02
    lr_offset_stage2: float = 0.2

    def __post_init__(self):
        if min(self.lr_stage1, self.lr_content_stage2, self.lr_offset_stage2) <= 0:
            raise ValueError("learning rates must be positive")
        if self.lr_offset_stage2 <= self.lr_content_stage2:
            raise ValueError("stage-2 placement rate must exceed the content rate")

    def split(self, total_steps) -> int:
        if self.stage1_steps is not None:
            return self.stage1_steps
        return int(0.4 * total_steps)

    def rates(self, step, total_steps):
        if step < self.split(total_steps):
            return self.lr_stage1, 0.0, False
        return (
            self.lr_content_stage2,
            self.lr_offset_stage2 / self.lr_content_stage2,
            True,
        )


def make_schedule(name: str, lr: float = 0.1):
    if name == "uopt":
        return UOpt(lr=lr)
    if name == "aopt":
        return AOpt(lr_stage1=lr, lr_content_stage2=lr / 5.0, lr_offset_stage2=lr * 2.0)
    raise ValueError(f"unknown schedule {name!r}")


# ---------------------------------------------------------------------------
# Placement strategies as trainable objects


class Placement:
    """Yields per-step disparities and registers whatever it trains."""

    trainable = False

    def __init__(self, bins: smp.DisparityBins):
        self.bins = bins

    def register(self, params: ParameterSet) -> None:
        pass

    def disparities(self, leaf: dict):
        raise NotImplementedError


class RandomInBin(Placement):
    def __init__(self, bins, rng: np.random.Generator):
        super().__init__(bins)
        self.v = smp.random_offsets(bins.n, rng)

    def disparities(self, leaf):
        return smp.locations_from_offsets(self.bins, self.v)


class EquallyDivided(Placement):
    def disparities(self, leaf):
        return smp.locations_from_offsets(self.bins, np.full(self.bins.n, 0.5))


class GloballyLearned(Placement):
    trainable = True

    def register(self, params):
        params.add("placement", np.zeros(self.bins.n))

    def disparities(self, leaf):
        return smp.global_locations(self.bins, leaf["placement"])


class LocallyLearned(Placement):
    trainable = True

    def register(self, params):
        params.add("placement", np.zeros(self.bins.n))

    def disparities(self, leaf):
        return smp.locations_from_offsets(self.bins, ad.sigmoid(leaf["placement"]))


def make_placement(name: str, bins: smp.DisparityBins, rng=None) -> Placement:
    if name == "random":
        if rng is None:
            raise ValueError("random placement needs an rng")
        return RandomInBin(bins, rng)
    if name == "equal":
        return EquallyDivided(bins)
    if name == "global":
        return GloballyLearned(bins)
    if name == "local":
        return LocallyLearned(bins)
    raise ValueError(f"unknown placement strategy {name!r}")


# ---------------------------------------------------------------------------
# Fit loop


@dataclass
class FitView:
    """One posed, ground-truthed view. ``pose_ts`` maps this view's camera
    points into the source frame; None marks the source view itself."""

    intrinsics: CameraIntrinsics
    pose_ts: RigidTransform | None
    image: np.ndarray
    gt_depth: np.ndarray | None = None

    @property
    def is_source(self) -> bool:
        return self.pose_ts is None


@dataclass
class LossConfig:
    lam: float = lss.DEFAULT_LAMBDA
    beta: float = lss.DEFAULT_BETA
    occ_c: float = lss.DEFAULT_OCCLUSION_C
    scale_s: float = 1.0
    use_occlusion_mask: bool = True


@dataclass
class HistoryRow:
    step: int
    l1: float
    smooth: float
    rep: float
    total: float
    rv: float
    psnr: float
    ssim: float
    disparities: tuple

    def as_list(self):
        return [
            self.step, self.l1, self.smooth, self.rep, self.total,
            self.rv, self.psnr, self.ssim, *self.disparities,
        ]


@dataclass
class FitResult:
    stack: rnd.PlaneStack
    history: list
    params: ParameterSet
    placement: Placement

    @property
    def final(self) -> HistoryRow:
        return self.history[-1]


def history_to_csv(history, n_planes: int) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        list(HISTORY_BASE_COLUMNS) + [f"d_{i + 1}" for i in range(n_planes)]
    )
    for row in history:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row.as_list()])
    return buf.getvalue()


def _softplus_inv(y: float) -> float:
    return float(np.log(np.expm1(y)))


def _logit(p: np.ndarray) -> np.ndarray:
    q = np.clip(p, 1e-4, 1 - 1e-4)
    return np.log(q / (1 - q))


def init_parameters(
    source_image, bins, placement: Placement, dims, *, init_alpha=0.25,
    init_rgb_from_source=True,
) -> ParameterSet:
    """Content pre-activations plus whatever the placement strategy owns.

    Colors start at the source image (the renderer would reach that for the
    source view anyway); densities start as a light uniform fog calibrated
    to the axial plane spacing.
    """
    n = bins.n
    h, w = dims
    params = ParameterSet()
    if init_rgb_from_source:
        rgb0 = np.broadcast_to(_logit(source_image), (n, h, w, 3)).copy()
    else:
        rgb0 = np.zeros((n, h, w, 3))
    params.add("rgb", rgb0)
    placement.register(params)
    d0 = ad.value_of(placement.disparities(params.leaf_vars()))
    z = np.sort(1.0 / d0)
    gaps = np.diff(z)
    mean_gap = float(gaps.mean()) if gaps.size else float(z[0])
    params.add("sigma", np.full((n, h, w), _softplus_inv(init_alpha / mean_gap)))
    return params


def stack_from_params(params: ParameterSet, placement: Placement, K, scale=1.0,
                      ) -> rnd.PlaneStack:
    """Materialize the current parameters as a plain PlaneStack."""
    leaf = params.leaf_vars()
    rgb = ad.value_of(ad.sigmoid(leaf["rgb"]))
    sigma = ad.value_of(ad.softplus(leaf["sigma"]))
    d = ad.value_of(placement.disparities(leaf))
    return rnd.PlaneStack(rgb, sigma, d, K, scale)


def fit(
    views: list,
    bins: smp.DisparityBins,
    strategy: str,
    schedule,
    *,
    steps: int = 400,
    seed: int = 0,
    loss_cfg: LossConfig | None = None,
    log_every: int = 25,
    rv_scale=None,
    check_finite: bool = True,
    init_rgb_from_source: bool = True,
) -> FitResult:
    """Optimize a plane stack against posed views.

    ``views`` holds exactly one source view (pose_ts None) and at least one
    target. The source contributes appearance terms only (its reprojection
    is depth-independent); targets contribute appearance + reprojection.
    Placement randomness draws from the 'placement' substream of ``seed``;
    metrics (rv on the source view, psnr/ssim averaged over targets) are
    computed on logged steps and at the last step.
    """
    cfg = loss_cfg or LossConfig()
    sources = [v for v in views if v.is_source]
    targets = [v for v in views if not v.is_source]
    if len(sources) != 1 or not targets:
        raise ValueError("fit needs exactly one source view and at least one target")
    source = sources[0]
    dims = source.image.shape[:2]
    placement = make_placement(strategy, bins, rng=substream(seed, "placement"))
    params = init_parameters(
        source.image, bins, placement, dims,
        init_rgb_from_source=init_rgb_from_source,
    )
    opt = Adam()
    history: list[HistoryRow] = []
    warp_poses = [warp_pose(t.pose_ts) for t in targets]

    for step in range(steps):
        lr_content, place_scale, place_enabled = schedule.rates(step, steps)
        if "placement" in params:
            params["placement"].enabled = place_enabled
            params["placement"].lr_scale = place_scale
        leaf = params.leaf_vars()
        with ad.Tape(check_finite=check_finite) as tape:
            rgb = ad.sigmoid(leaf["rgb"])
            sigma = ad.softplus(leaf["sigma"])
            d = ad.as_var(placement.disparities(leaf))
            src_out = rnd.render_stack_vars(rgb, sigma, d, source.intrinsics, dims)
            src_l1 = lss.l1_loss(src_out.image, source.image)
            src_disp = 1.0 / ad.maximum(src_out.depth, lss.DISPARITY_EPS)
            src_smooth = lss.edge_aware_smoothness(src_disp, source.image)
            l1_sum, smooth_sum, rep_sum = src_l1, src_smooth, None
            l1_log, smooth_log, rep_log = src_l1.item(), src_smooth.item(), 0.0
            depth_s_value = ad.value_of(src_out.depth)
            for view, wpose in zip(targets, warp_poses):
                out = rnd.render_novel_view_vars(
                    rgb, sigma, d, source.intrinsics, view.intrinsics, wpose, dims
                )
                report = lss.total_loss(
                    out, view.image, source.image, view.pose_ts,
                    source.intrinsics, view.intrinsics,
                    depth_s=depth_s_value,
                    lam=cfg.lam, beta=cfg.beta, c=cfg.occ_c, s=cfg.scale_s,
                    use_occlusion_mask=cfg.use_occlusion_mask,
                )
                l1_sum = l1_sum + report.l1_var
                smooth_sum = smooth_sum + report.smooth_var
                l1_log += report.l1
                smooth_log += report.smooth
                rep_log += report.rep
                if report.rep_var is not None:
                    rep_sum = (
                        report.rep_var if rep_sum is None
                        else rep_sum + report.rep_var
                    )
            n_views = float(len(targets) + 1)
            objective = (l1_sum + cfg.beta * smooth_sum) / n_views
            if rep_sum is not None:
                objective = objective + cfg.lam * (rep_sum / float(len(targets)))
            total_value = objective.item()
            if not np.isfinite(total_value):
                raise Diverged(f"loss became non-finite at step {step}")
            tape.backward(objective)

        grads = {name: leaf[name].grad for name in params.groups}
        opt.step(params, grads, lr_content)

        if step % log_every == 0 or step == steps - 1:
            stack = stack_from_params(
                params, placement, source.intrinsics, cfg.scale_s
            )
            rv = float("nan")
            if source.gt_depth is not None:
                rv = rnd.rendering_variance(stack, source.gt_depth, s=rv_scale)
            psnrs, ssims = [], []
            for view, wpose in zip(targets, warp_poses):
                out = rnd.render_novel_view(stack, view.intrinsics, wpose)
                psnrs.append(mtr.psnr(view.image, out.image))
                ssims.append(mtr.ssim(view.image, out.image))
            d_now = tuple(float(x) for x in stack.disparities)
            history.append(
                HistoryRow(
                    step, l1_log / n_views, smooth_log / n_views,
                    rep_log / max(len(targets), 1), total_value,
                    rv, float(np.mean(psnrs)), float(np.mean(ssims)), d_now,
                )
            )

    final_stack = stack_from_params(params, placement, source.intrinsics, cfg.scale_s)
    return FitResult(final_stack, history, params, placement)
