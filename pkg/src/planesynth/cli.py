"""Command-line surface: fit, sweep, render, check, attn-check, attn-bench.

Every command is reproducible: all randomness flows from the run seed through
named substreams, CSV/JSON outputs are byte-stable, and PNG/PPM outputs carry
no metadata. A JSON config file overrides flags when both are given (a
provenance line is printed for every overridden field).

Exit codes: 0 success, 2 configuration error, 3 diverged fit.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import attention as attn
from . import autodiff as ad
from . import imgio, kernels, metrics, optim, render, sampler, scenes
from .errors import Diverged, PlanesynthError
from .geometry import RigidTransform, warp_pose

SUMMARY_SCHEMA_VERSION = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


@dataclass
class RunConfig:
    scene: str | None = None
    family: str = "uniform"
    planes: int = 8
    placement: str = "local"
    schedule: str = "uopt"
    steps: int = 600
    lr: float = 0.1
    lam: float = 1.0
    beta: float = 1e-3
    occ_c: float = 0.2
    scale_s: float = 1.0
    no_occlusion_mask: bool = False
    size: int = 64
    seed: int = 0
    log_every: int = 25
    out: str = "runs/fit"

    def validate(self):
        if self.planes < 1:
            raise ValueError(f"--planes must be >= 1, got {self.planes}")
        if self.lam < 0 or self.beta < 0:
            raise ValueError("--lambda and --beta must be nonnegative")
        if self.occ_c < 0:
            raise ValueError("--occ-c must be nonnegative")
        if self.steps < 1:
            raise ValueError("--steps must be >= 1")
        if self.placement not in sampler.STRATEGY_NAMES:
            raise ValueError(f"--placement must be one of {sampler.STRATEGY_NAMES}")
        if self.schedule not in ("uopt", "aopt"):
            raise ValueError("--schedule must be uopt or aopt")
        if self.scene is not None and not os.path.exists(self.scene):
            raise FileNotFoundError(f"scene file not found: {self.scene}")


def _apply_config_file(cfg: RunConfig, path: str) -> RunConfig:
    with open(path) as f:
        overrides = json.load(f)
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(cfg, attr):
            raise ValueError(f"unknown config key {key!r}")
        setattr(cfg, attr, value)
        print(f"config override: {attr} = {value!r} (from {path})")
    return cfg


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig(
        scene=args.scene, family=args.family, planes=args.planes,
        placement=args.placement, schedule=args.schedule, steps=args.steps,
        lr=args.lr, lam=getattr(args, "lambda"), beta=args.beta,
        occ_c=args.occ_c, scale_s=args.scale_s,
        no_occlusion_mask=args.no_occlusion_mask, size=args.size,
        seed=args.seed, log_every=args.log_every, out=args.out,
    )
    if args.config:
        cfg = _apply_config_file(cfg, args.config)
    cfg.validate()
    return cfg


def _add_fit_flags(p):
    p.add_argument("--scene", help="scene JSON path (overrides --family)")
    p.add_argument("--family", default="uniform",
                   choices=sorted(scenes._FAMILIES),
                   help="generated scene family when no --scene is given")
    p.add_argument("--planes", type=int, default=8)
    p.add_argument("--placement", default="local", choices=sampler.STRATEGY_NAMES)
    p.add_argument("--schedule", default="uopt", choices=("uopt", "aopt"))
    p.add_argument("--steps", type=int, default=600)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--lambda", type=float, default=1.0, dest="lambda")
    p.add_argument("--beta", type=float, default=1e-3)
    p.add_argument("--occ-c", type=float, default=0.2)
    p.add_argument("--scale-s", type=float, default=1.0)
    p.add_argument("--no-occlusion-mask", action="store_true",
                   help="ablation: keep the reprojection term but zero the mask")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log-every", type=int, default=25)
    p.add_argument("--out", default="runs/fit")
    p.add_argument("--config", help="JSON config file; overrides flags")


def _bundle_for(cfg: RunConfig) -> scenes.SceneBundle:
    dims = (cfg.size, cfg.size)
    if cfg.scene:
        scene = scenes.load_scene(cfg.scene)
        pairs = scenes.pairs_for_scene(
            scene, dims, scenes.default_baselines("mixed", cfg.seed)
        )
        return scenes.SceneBundle(scene, pairs, "file", cfg.seed)
    return scenes.make_bundle(cfg.family, cfg.seed, dims)


def run_fit(cfg: RunConfig, quiet=False) -> dict:
    """Fit a stack per the config; write artifacts; return the summary dict."""
    bundle = _bundle_for(cfg)
    bins = bundle.scene.bins(cfg.planes)
    schedule = optim.make_schedule(cfg.schedule, cfg.lr)
    loss_cfg = optim.LossConfig(
        lam=cfg.lam, beta=cfg.beta, occ_c=cfg.occ_c, scale_s=cfg.scale_s,
        use_occlusion_mask=not cfg.no_occlusion_mask,
    )
    t0 = time.time()
    result = optim.fit(
        bundle.views(), bins, cfg.placement, schedule,
        steps=cfg.steps, seed=cfg.seed, loss_cfg=loss_cfg,
        log_every=cfg.log_every,
    )
    elapsed = time.time() - t0

    os.makedirs(cfg.out, exist_ok=True)
    stack_dir = os.path.join(cfg.out, "stack")
    render.save_stack(result.stack, stack_dir)
    # Render the saved (quantized) stack so a later cmd_render reload
    # reproduces these files exactly.
    stack = render.load_stack(stack_dir)
    source_img = render.render_image(stack)
    imgio.write_png(os.path.join(cfg.out, "render_source.png"), source_img)
    imgio.write_ppm(os.path.join(cfg.out, "render_source.ppm"), source_img)
    psnrs, ssims = [], []
    for i, pair in enumerate(bundle.pairs):
        out = render.render_novel_view(stack, pair.K_t, warp_pose(pair.pose_ts))
        imgio.write_png(os.path.join(cfg.out, f"render_target_{i}.png"), out.image)
        psnrs.append(metrics.psnr(pair.image_t, out.image))
        ssims.append(metrics.ssim(pair.image_t, out.image))
    with open(os.path.join(cfg.out, "history.csv"), "w") as f:
        f.write(optim.history_to_csv(result.history, bins.n))
    rv = render.rendering_variance(stack, bundle.pairs[0].depth_s)
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "family": bundle.family,
        "seed": cfg.seed,
        "placement": cfg.placement,
        "schedule": cfg.schedule,
        "steps": cfg.steps,
        "planes": cfg.planes,
        "psnr": float(np.mean(psnrs)),
        "ssim": float(np.mean(ssims)),
        "rv": rv,
        "final_total": result.final.total,
        "disparities": [float(x) for x in result.stack.disparities],
        "elapsed_s": round(elapsed, 3),
    }
    with open(os.path.join(cfg.out, "summary.json"), "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    if not quiet:
        print(
            f"fit [{bundle.family} seed={cfg.seed} {cfg.placement}/{cfg.schedule}] "
            f"psnr={summary['psnr']:.2f} ssim={summary['ssim']:.4f} "
            f"rv={summary['rv']:.3f} total={summary['final_total']:.5f} "
            f"({elapsed:.1f}s) -> {cfg.out}"
        )
    return summary


def cmd_fit(args) -> int:
    cfg = _config_from_args(args)
    run_fit(cfg)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config_from_args(args)
    strategies = args.strategies.split(",")
    for s in strategies:
        if s not in sampler.STRATEGY_NAMES:
            raise ValueError(f"unknown strategy {s!r} in --strategies")
    seeds = [int(s) for s in args.seeds.split(",")]
    os.makedirs(cfg.out, exist_ok=True)
    rows = []
    for strategy in strategies:
        for seed in seeds:
            sub = RunConfig(**{**cfg.__dict__})
            sub.placement = strategy
            sub.seed = seed
            sub.out = os.path.join(cfg.out, f"{strategy}_seed{seed}")
            rows.append(run_fit(sub))
    header = ["placement", "seed", "psnr", "ssim", "rv", "final_total"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(repr(r[k]) if isinstance(r[k], float) else str(r[k])
                              for k in header))
    medians = {}
    for strategy in strategies:
        vals = [r for r in rows if r["placement"] == strategy]
        med = {k: statistics.median(r[k] for r in vals)
               for k in ("psnr", "ssim", "rv", "final_total")}
        medians[strategy] = med
        lines.append(
            f"{strategy},median,{med['psnr']!r},{med['ssim']!r},"
            f"{med['rv']!r},{med['final_total']!r}"
        )
    csv_text = "\n".join(lines) + "\n"
    with open(os.path.join(cfg.out, "sweep.csv"), "w") as f:
        f.write(csv_text)
    md = ["| placement | seed | PSNR | SSIM | RV | total |",
          "|---|---|---|---|---|---|"]
    for r in rows:
        md.append(f"| {r['placement']} | {r['seed']} | {r['psnr']:.2f} "
                  f"| {r['ssim']:.4f} | {r['rv']:.3f} | {r['final_total']:.5f} |")
    for strategy, med in medians.items():
        md.append(f"| {strategy} | median | {med['psnr']:.2f} | {med['ssim']:.4f} "
                  f"| {med['rv']:.3f} | {med['final_total']:.5f} |")
    with open(os.path.join(cfg.out, "sweep.md"), "w") as f:
        f.write("\n".join(md) + "\n")
    print(f"sweep complete: {len(rows)} runs -> {cfg.out}/sweep.csv")
    for strategy, med in medians.items():
        print(f"  median[{strategy}]: rv={med['rv']:.3f} psnr={med['psnr']:.2f}")
    return 0


def cmd_render(args) -> int:
    stack = render.load_stack(args.stack)
    os.makedirs(args.out, exist_ok=True)
    steps = max(1, args.steps)
    for k in range(steps):
        frac = (k + 1) / steps
        pose = RigidTransform.translation(
            (args.tx * frac, args.ty * frac, args.tz * frac)
        )
        out = (
            render.render_stack(stack)
            if pose.is_identity
            else render.render_novel_view(stack, stack.intrinsics, pose)
        )
        name = "render.png" if steps == 1 else f"render_{k:02d}.png"
        imgio.write_png(os.path.join(args.out, name), out.image)
        print(f"wrote {os.path.join(args.out, name)}")
    return 0


def _check_suites():
    from . import selfcheck

    return selfcheck.run_all()


def cmd_check(_args) -> int:
    failures = 0
    for suite, results in _check_suites():
        ok = sum(1 for _, passed, _ in results if passed)
        print(f"[{suite}] {ok}/{len(results)} passed")
        for name, passed, detail in results:
            if not passed:
                failures += 1
                print(f"  FAIL {name}: {detail}")
    print(f"cmd_check: {'OK' if failures == 0 else f'{failures} failures'}")
    return 0 if failures == 0 else 1


def cmd_attn_check(_args) -> int:
    from . import selfcheck

    results = selfcheck.attention_suite()
    failures = [r for r in results if not r[1]]
    for name, passed, detail in results:
        print(f"{'PASS' if passed else 'FAIL'} {name}{'' if passed else ': ' + detail}")
    return 0 if not failures else 1


def cmd_attn_bench(args) -> int:
    h = w = args.size
    c_in = args.channels
    rng = np.random.default_rng(args.seed)
    print(f"block-sampling self-attention sweep on a {h}x{w}x{c_in} grid "
          f"(kernel backend: {kernels.active_backend()})")
    print(f"{'M':>6} {'est. matrix':>12} {'measured':>12} {'est/meas':>9} "
          f"{'max |BS-SA - SA|':>18} {'time':>8}")
    problem = attn.AttentionProblem.random(h, w, c_in, m=1, seed=args.seed)
    full = attn.full_self_attention(problem)
    for m in args.m_values:
        problem.m = m
        spec = attn.sample_block_spec((h, w), m, rng)
        t0 = time.time()
        y, att = attn.bs_self_attention_vars(
            problem.x, problem.wq, problem.bq, problem.wk, problem.bk,
            problem.wv, problem.bv, problem.wz, problem.bz, spec,
        )
        dt = time.time() - t0
        est = attn.attention_memory_estimate(h, w, m, problem.c_hidden,
                                             bytes_per_element=8)
        measured = att.value.nbytes
        dev = float(np.abs(ad.value_of(y) - full).max())
        print(f"{m:>6} {est.bs_matrix:>12} {measured:>12} "
              f"{est.bs_matrix / measured:>9.3f} {dev:>18.3e} {dt:>7.3f}s")
    est_full = attn.attention_memory_estimate(h, w, h * w, problem.c_hidden,
                                              bytes_per_element=8)
    print(f"full attention matrix: {est_full.full_matrix} bytes "
          f"({est_full.full_matrix / 2**20:.1f} MiB)")
    return 0


def ad_value(v):
    from . import autodiff as ad

    return ad.value_of(v)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="planesynth",
        description="plane-stack view synthesis lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a plane stack to a synthetic scene")
    _add_fit_flags(p_fit)
    p_fit.set_defaults(func=cmd_fit)

    p_sweep = sub.add_parser("sweep", help="paired fits across strategies and seeds")
    _add_fit_flags(p_sweep)
    p_sweep.add_argument("--strategies", default="random,equal,global,local")
    p_sweep.add_argument("--seeds", default="0,1,2,3,4")
    p_sweep.set_defaults(func=cmd_sweep)

    p_render = sub.add_parser("render", help="render a saved stack at a new pose")
    p_render.add_argument("--stack", required=True, help="stack directory")
    p_render.add_argument("--tx", type=float, default=0.0)
    p_render.add_argument("--ty", type=float, default=0.0)
    p_render.add_argument("--tz", type=float, default=0.0)
    p_render.add_argument("--steps", type=int, default=1,
                          help="emit this many frames interpolating to the pose")
    p_render.add_argument("--out", default="runs/render")
    p_render.set_defaults(func=cmd_render)

    p_check = sub.add_parser("check", help="run invariant, oracle and gradient suites")
    p_check.set_defaults(func=cmd_check)

    p_attn = sub.add_parser("attn-check", help="attention oracle and gradient checks")
    p_attn.set_defaults(func=cmd_attn_check)

    p_bench = sub.add_parser("attn-bench", help="attention memory/deviation sweep")
    p_bench.add_argument("--size", type=int, default=24)
    p_bench.add_argument("--channels", type=int, default=8)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--m-values", type=int, nargs="+",
                         default=[16, 64, 144, 576])
    p_bench.set_defaults(func=cmd_attn_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Diverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (PlanesynthError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
