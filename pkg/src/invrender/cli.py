"""``invrender`` command line: render, optimize, novel-view, relight, grad-check, metrics, make-synthetic.

Exit codes: 0 success, 1 invalid input, 2 gradient check out of tolerance.
"""

from __future__ import annotations

import argparse
import logging
import os
import shutil
import sys
import time
from pathlib import Path

import numpy as np

from . import accel, formats, grad, metrics, optim, render, scenefile, synthetic
from .scene import Camera, RenderConfig, SceneError, ViewObservation

log = logging.getLogger("invrender")

EXIT_OK, EXIT_INVALID, EXIT_TOLERANCE = 0, 1, 2

GRAD_TOLERANCES = {"lights": 1e-6, "diffuse": 1e-3, "specular": 1e-3, "geometry": 5e-2}


def _config(bundle, args, spp_default=16, bounces_default=3) -> RenderConfig:
    seed = bundle.config.seed if getattr(args, "seed", None) is None else args.seed
    spp = spp_default if getattr(args, "spp", None) is None else args.spp
    bounces = bounces_default if getattr(args, "bounces", None) is None else args.bounces
    downsample = getattr(args, "downsample", None) or 1
    return RenderConfig(spp=spp, max_bounces=bounces, seed=seed, downsample=downsample)


def _write_image(prefix: str, pixels: np.ndarray) -> None:
    Path(prefix).parent.mkdir(parents=True, exist_ok=True)
    formats.write_pfm(f"{prefix}.pfm", pixels)
    formats.write_png(f"{prefix}.png", pixels)


def _render_camera(bundle, camera: Camera, config: RenderConfig) -> np.ndarray:
    render.validate_config(camera, config)
    bvh = accel.build_bvh(bundle.scene.mesh)
    return render.render(bundle.scene, bvh, camera, config).pixels


def cmd_render(args) -> int:
    bundle = scenefile.load_scene(args.scene)
    if not 0 <= args.camera < len(bundle.views):
        raise SceneError(f"camera index {args.camera} out of range (scene has {len(bundle.views)} views)",
                         "--camera")
    config = _config(bundle, args)
    t0 = time.perf_counter()
    pixels = _render_camera(bundle, bundle.views[args.camera].camera, config)
    _write_image(args.out, pixels)
    print(f"rendered camera {args.camera} spp={config.spp} bounces={config.max_bounces} seed={config.seed} "
          f"downsample={config.downsample} in {time.perf_counter() - t0:.2f}s -> {args.out}.pfm")
    return EXIT_OK


def _relative_images(bundle, target_dir: Path) -> list:
    src = Path(bundle.path).parent
    out = []
    for img, mask in scenefile.view_file_paths(bundle):
        out.append(tuple(None if p is None else os.path.relpath(src / p, target_dir) for p in (img, mask)))
    return out


def _save_bundle_copy(bundle, scene, path: Path, config=None) -> None:
    scenefile.save_scene(scene, bundle.views, config or bundle.config, path, held_out=bundle.held_out,
                         image_paths=_relative_images(bundle, path.parent))


def cmd_optimize(args) -> int:
    bundle = scenefile.load_scene(args.scene)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if len(bundle.views) < 2:
        log.warning("only one view: the geometry stage is disabled")
    config = RenderConfig(spp=args.spp, max_bounces=args.bounces,
                          seed=bundle.config.seed if args.seed is None else args.seed, downsample=args.downsample)
    for v in bundle.views:
        render.validate_config(v.camera, config)
    held = bundle.held_out if args.held_out is None else args.held_out
    if held is not None and not 0 <= held < len(bundle.views):
        raise SceneError("held-out index out of range", "--held-out")
    if held is None and len(bundle.views) >= 3:
        held = len(bundle.views) - 1
    final_path = out_dir / "scene.json"
    if args.cycles == 0:
        _save_bundle_copy(bundle, bundle.scene, final_path)
        print(f"cycles=0: scene copied unchanged to {final_path}")
        return EXIT_OK
    rates = {"diffuse": args.lr_diffuse, "geometry": args.lr_geometry, "lights": args.lr_lights,
             "specular": args.lr_specular}
    schedule = optim.Schedule(stage_order=tuple(args.stages.split(",")), inner_iterations=args.inner,
                              outer_cycles=args.cycles, view_batch=args.view_batch, learning_rates=rates,
                              laplacian_weight=args.laplacian, eval_spp=args.eval_spp)
    print("optimize: " + ", ".join(f"lr_{k}={v}" for k, v in rates.items())
          + f", spp={config.spp}, bounces={config.max_bounces}, downsample={config.downsample}"
          + f", inner={args.inner}, cycles={args.cycles}, held_out={held}")
    ckpt_dir = out_dir / "checkpoints"

    def checkpoint(scene, label):
        ckpt_dir.mkdir(exist_ok=True)
        _save_bundle_copy(bundle, scene, ckpt_dir / f"{label}.json")

    result = optim.optimize(bundle.scene, bundle.views, schedule, config, np.random.default_rng(args.seed or 0),
                            held_out=held, checkpoint=checkpoint)
    _save_bundle_copy(bundle, result.scene, final_path)
    optim.write_trace(out_dir / "trace.csv", result.trace)
    with (out_dir / "stages.csv").open("w") as fh:
        fh.write("stage,heldOutPSNR\n")
        for label, value in result.stage_psnr:
            fh.write(f"{label},{value:.6f}\n")
    if result.final is not None:
        with (out_dir / "metrics.csv").open("w") as fh:
            fh.write(result.final.csv_header() + "\n" + result.final.csv_row() + "\n")
        print(f"held-out PSNR {result.initial.psnr:.2f} -> {result.final.psnr:.2f} dB, "
              f"SSIM {result.final.ssim:.4f}")
    print(f"finished in {result.seconds:.1f}s; scene written to {final_path}")
    return EXIT_OK


def _parse_pose(tokens) -> np.ndarray:
    values = [float(x) for tok in tokens for x in tok.replace(",", " ").split()]
    if len(values) != 12:
        raise SceneError(f"pose needs 12 values, got {len(values)}", "--pose")
    return np.asarray(values, dtype=np.float64).reshape(3, 4)


def cmd_novel_view(args) -> int:
    bundle = scenefile.load_scene(args.scene)
    if not bundle.views:
        raise SceneError("scene has no camera to take intrinsics from", "views")
    if not 0 <= args.camera < len(bundle.views):
        raise SceneError(f"camera index {args.camera} out of range", "--camera")
    camera = bundle.views[args.camera].camera.with_pose(_parse_pose(args.pose))
    config = _config(bundle, args)
    pixels = _render_camera(bundle, camera, config)
    _write_image(args.out, pixels)
    print(f"novel view rendered -> {args.out}.pfm")
    return EXIT_OK


def cmd_relight(args) -> int:
    bundle = scenefile.load_scene(args.scene)
    lights = scenefile.load_lights(args.lights)
    indices = range(len(bundle.views)) if args.views is None else args.views
    for i in indices:
        if not 0 <= i < len(bundle.views):
            raise SceneError(f"view index {i} out of range", "--views")
    scene = bundle.scene.with_lights(lights)
    config = _config(bundle, args)
    bvh = accel.build_bvh(scene.mesh)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in indices:
        cam = bundle.views[i].camera
        render.validate_config(cam, config)
        pixels = render.render(scene, bvh, cam, config).pixels
        _write_image(str(out / f"view_{i:03d}"), pixels)
    print(f"relit {len(indices)} view(s) with {len(lights)} light(s) -> {out}")
    return EXIT_OK


def _grad_check_indices(grads: np.ndarray, count: int) -> list:
    """The ``count`` entries with largest analytic magnitude (ties by index)."""
    flat = np.abs(grads).ravel()
    order = np.lexsort((np.arange(flat.size), -flat))[:count]
    order = [i for i in order if flat[i] > 0.0] or list(order[:1])
    return [np.unravel_index(i, grads.shape) for i in order]


def run_grad_check(scene, views, config, groups, step=None, samples=6):
    """Rows of (group, max rel, mean rel, rel L2, tolerance, passed)."""
    bvh = accel.build_bvh(scene.mesh)
    res = grad.backward(scene, views, config, groups=groups, bvh=bvh)
    rows = []
    for g in groups:
        analytic_all = res.gradients.group(g)
        idx = _grad_check_indices(analytic_all, samples)
        h = grad.default_step(scene, g) if step is None else step
        fd = grad.finite_difference_gradient(scene, g, idx, h, views, config)
        an = np.array([analytic_all[i] for i in idx])
        scale = np.maximum(np.abs(fd), 1e-300)
        rel = np.abs(an - fd) / scale
        norm = np.linalg.norm(fd)
        l2 = float(np.linalg.norm(an - fd) / norm) if norm > 0 else float(np.linalg.norm(an))
        tol = GRAD_TOLERANCES[g]
        rows.append((g, float(rel.max()), float(rel.mean()), l2, tol, l2 < tol))
    return rows


def cmd_grad_check(args) -> int:
    bundle = scenefile.load_scene(args.scene)
    groups = list(grad.GROUPS) if args.group == "all" else [args.group]
    config = RenderConfig(spp=args.spp, max_bounces=args.bounces, seed=bundle.config.seed if args.seed is None
                          else args.seed, downsample=args.downsample)
    idx = [0] if args.views is None else args.views
    views = []
    for i in idx:
        if not 0 <= i < len(bundle.views):
            raise SceneError(f"view index {i} out of range", "--views")
        render.validate_config(bundle.views[i].camera, config)
        views.append(bundle.views[i].downsampled(config.downsample))
    config = RenderConfig(config.spp, config.max_bounces, config.seed, 1)
    rows = run_grad_check(bundle.scene, views, config, groups, args.step, args.samples)
    print(f"{'group':<10} {'max rel':>12} {'mean rel':>12} {'rel L2':>12} {'tolerance':>10}  result")
    ok = True
    for g, mx, mean, l2, tol, passed in rows:
        ok &= passed
        print(f"{g:<10} {mx:12.3e} {mean:12.3e} {l2:12.3e} {tol:10.1e}  {'pass' if passed else 'FAIL'}")
    return EXIT_OK if ok else EXIT_TOLERANCE


def cmd_metrics(args) -> int:
    a = formats.load_image(args.image)
    b = formats.load_image(args.reference)
    mask = None if args.mask is None else formats.load_mask(args.mask)
    report = metrics.compare(a, b, mask)
    print(report.csv_header())
    print(report.csv_row())
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    if args.views < 2:
        raise SceneError("need at least 2 views", "--views")
    if args.resolution % args.downsample:
        raise SceneError("downsample must divide the resolution", "--downsample")
    t0 = time.perf_counter()
    data = synthetic.make_synthetic(args.preset, args.views, args.resolution, args.spp, args.bounces, args.seed,
                                    args.downsample)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    truth_path = out / "truth.json"
    scenefile.save_scene(data.truth, data.views, data.config, truth_path, held_out=data.held_out)
    paths = [(f"images/truth_{i:03d}.pfm", f"masks/truth_{i:03d}.png") for i in range(len(data.views))]
    scenefile.save_scene(data.start, data.views, data.config, out / "start.json", held_out=data.held_out,
                         image_paths=paths)
    evaluator = optim.HeldOutEvaluator(data.views[data.held_out], data.config)
    truth_rep = evaluator.evaluate(data.truth)[1]
    start_rep = evaluator.evaluate(data.start)[1]
    print(f"wrote {truth_path} and {out / 'start.json'} ({args.views} views, {args.resolution}px) "
          f"in {time.perf_counter() - t0:.1f}s")
    print(f"held-out view {data.held_out}: truth PSNR {truth_rep.psnr:.2f} dB, start PSNR {start_rep.psnr:.2f} dB")
    return EXIT_OK


def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="invrender", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def render_flags(sp, spp=None, bounces=None):
        sp.add_argument("--spp", type=int, default=spp, help="samples per pixel (default 16)")
        sp.add_argument("--bounces", type=int, default=bounces, help="maximum bounces T (default 3)")
        sp.add_argument("--seed", type=int, default=None, help="RNG seed (default: scene file)")
        sp.add_argument("--downsample", type=int, default=1, help="integer resolution divisor")

    sp = sub.add_parser("render", help="render one camera of a scene")
    sp.add_argument("scene")
    sp.add_argument("camera", type=int, nargs="?", default=0)
    render_flags(sp, 16, 3)
    sp.add_argument("--out", required=True, help="output prefix; writes <out>.pfm and <out>.png")
    sp.set_defaults(func=cmd_render)

    sp = sub.add_parser("optimize", help="alternating inverse-rendering optimization")
    sp.add_argument("scene")
    sp.add_argument("--cycles", type=int, default=1)
    sp.add_argument("--inner", type=int, default=400, help="iterations per stage")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--spp", type=int, default=1)
    sp.add_argument("--bounces", type=int, default=3)
    sp.add_argument("--downsample", type=int, default=8)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--held-out", type=int, default=None)
    sp.add_argument("--stages", default=",".join(optim.DEFAULT_STAGE_ORDER))
    sp.add_argument("--view-batch", type=int, default=1)
    sp.add_argument("--eval-spp", type=int, default=16)
    sp.add_argument("--laplacian", type=float, default=0.1, help="Laplacian regularizer weight")
    for g, lr in optim.DEFAULT_LEARNING_RATES.items():
        sp.add_argument(f"--lr-{g}", type=float, default=lr)
    sp.set_defaults(func=cmd_optimize)

    sp = sub.add_parser("novel-view", help="render from a new camera pose")
    sp.add_argument("scene")
    sp.add_argument("--pose", nargs="+", required=True, metavar="F",
                    help="world-to-camera [R|t], 12 row-major floats; use --pose=a,b,... when a value "
                         "is negative with an exponent")
    sp.add_argument("--camera", type=int, default=0, help="view whose intrinsics are used")
    render_flags(sp, 16, 3)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_novel_view)

    sp = sub.add_parser("relight", help="render views under a replacement light set")
    sp.add_argument("scene")
    sp.add_argument("lights", help="JSON light list")
    sp.add_argument("--views", type=_int_list, default=None)
    render_flags(sp, 16, 3)
    sp.add_argument("--out", required=True, help="output directory")
    sp.set_defaults(func=cmd_relight)

    sp = sub.add_parser("grad-check", help="compare analytic gradients with finite differences")
    sp.add_argument("scene")
    sp.add_argument("--group", choices=list(grad.GROUPS) + ["all"], default="all")
    sp.add_argument("--step", type=float, default=None)
    sp.add_argument("--samples", type=int, default=6, help="parameters checked per group")
    sp.add_argument("--spp", type=int, default=4)
    sp.add_argument("--bounces", type=int, default=1)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--downsample", type=int, default=4)
    sp.add_argument("--views", type=_int_list, default=None)
    sp.set_defaults(func=cmd_grad_check)

    sp = sub.add_parser("metrics", help="PSNR/SSIM of an image against a reference")
    sp.add_argument("image")
    sp.add_argument("reference")
    sp.add_argument("--mask", default=None)
    sp.set_defaults(func=cmd_metrics)

    sp = sub.add_parser("make-synthetic", help="write a ground-truth scene, its views and a perturbed start")
    sp.add_argument("--preset", choices=synthetic.PRESETS, default="sphere-plane")
    sp.add_argument("--views", type=int, default=13)
    sp.add_argument("--resolution", type=int, default=256)
    sp.add_argument("--spp", type=int, default=64)
    sp.add_argument("--bounces", type=int, default=2)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--downsample", type=int, default=8, help="stored as the scene's optimization divisor")
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_make_synthetic)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (SceneError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
