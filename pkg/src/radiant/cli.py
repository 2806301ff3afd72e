"""Command-line entry point: ``radiant {synth,reconstruct,evaluate,noise-sweep,reparam-check}``.

Exit codes: 0 success, 1 property failure, 2 usage/config error, 3 I/O error,
4 degraded reconstruction (fewer than half of the masked pixels valid).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_DEGRADED = 4

THREADS_ENV = "RADIANT_SWEEP_THREADS"
MIN_VALID_FRACTION = 0.5

logger = logging.getLogger("radiant")


class UsageError(Exception):
    pass


def configure_threads(threads: int | None) -> None:
    """Fix the compiled kernels' thread count; must run before numba is imported to exceed the CPU count."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        threads = int(env) if env else None
    if threads is None:
        return
    if threads < 1:
        raise UsageError("--threads must be at least 1")
    if "numba" not in sys.modules:
        os.environ["NUMBA_NUM_THREADS"] = str(threads)
    import numba

    numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))


# -- synth -----------------------------------------------------------------


def cmd_synth(args) -> int:
    from .errors import InsufficientViews
    from .io import read_cameras, write_benchmark
    from .synth import Benchmark, BenchmarkConfig, NoiseSpec, generate_benchmark, render_view

    try:
        if args.config:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            config = BenchmarkConfig.from_dict(doc)
        else:
            config = BenchmarkConfig.default()
        if args.views is not None:
            config.camera_count = args.views
        if args.resolution is not None:
            config = config.with_resolution(args.resolution)
        if args.seed is not None:
            config.seed = args.seed
        noise = NoiseSpec(args.normal_noise, args.reflectance_noise, config.seed)
        if args.cameras:
            cams = read_cameras(args.cameras)
            views = [render_view(config.surface, config.reflectance, p, i) for i, p in cams]
            bench = Benchmark(views, [p for _, p in cams], [i for i, _ in cams], config)
        else:
            bench = generate_benchmark(config)
    except InsufficientViews as exc:
        raise UsageError(str(exc)) from exc
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid benchmark config: {exc}") from exc

    if noise.normal_sigma_deg or noise.reflectance_sigma_frac:
        bench = bench.with_noise(noise)
    write_benchmark(
        args.out,
        bench.views,
        list(zip(bench.intrinsics, bench.poses)),
        config.to_dict(),
        config.seed,
        noise={"normal_sigma_deg": noise.normal_sigma_deg, "reflectance_sigma_frac": noise.reflectance_sigma_frac},
    )
    print(f"wrote {len(bench.views)} views to {args.out}")
    return EXIT_OK


# -- reconstruct -------------------------------------------------------------


def _load_views(bench_dir):
    from .io import read_benchmark
    from .sweeping import View

    views, cameras, manifest = read_benchmark(bench_dir)
    return [View(m, p, i) for m, (i, p) in zip(views, cameras)], manifest


def _z_range(args, manifest) -> tuple[float, float]:
    if args.zrange:
        return tuple(args.zrange)
    if not manifest.config:
        raise UsageError("benchmark has no generation config; pass --zrange")
    from .synth import BenchmarkConfig

    return BenchmarkConfig.from_dict(manifest.config).z_range()


def _sweep_config(args, manifest, zrange=None):
    from .sweeping import Loss, PatchModel, SweepConfig

    loss = Loss(args.loss)
    if loss is Loss.COMBINED and args.mu is None:
        raise UsageError("--loss combined requires --mu")
    z_min, z_max = zrange or _z_range(args, manifest)
    try:
        return SweepConfig(
            z_min,
            z_max,
            coarse_samples=args.coarse_samples,
            refine_tol=args.refine_tol,
            patch_radius=args.patch_radius,
            model=PatchModel(args.model),
            loss=loss,
            mu=args.mu,
            min_valid_views=args.min_valid_views,
            lighting=args.lighting,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def backproject_depth(view, depth, valid) -> np.ndarray:
    """World points of the valid pixels of a reference depth raster."""
    v, u = np.nonzero(valid)
    cam = depth[v, u][:, None] * view.intr.rays(u.astype(float), v.astype(float))
    return view.pose.to_world(cam)


def cmd_reconstruct(args) -> int:
    from .io import ensure_dir, write_json, write_pfm, write_ply_points
    from .metrics import mean_depth_error
    from .sweeping import reconstruct_depth_map

    views, manifest = _load_views(args.benchmark)
    config = _sweep_config(args, manifest)
    if config.model.needs_normals and not manifest.has_normals:
        raise UsageError(f"--model {config.model.value} needs normal maps in the benchmark")
    if not 0 <= args.ref < len(views):
        raise UsageError(f"--ref must be in [0, {len(views) - 1}]")

    start = time.perf_counter()
    result = reconstruct_depth_map(args.ref, views, config)
    runtime_ms = (time.perf_counter() - start) * 1000.0

    out = ensure_dir(args.out)
    ref = views[args.ref]
    write_pfm(out / "depth.pfm", np.where(result.valid, result.depth, 0.0))
    write_pfm(out / "cost.pfm", np.where(result.valid, result.cost, 0.0))
    write_pfm(out / "valid.pfm", result.valid.astype(np.float32))
    write_ply_points(
        out / "points.ply", backproject_depth(ref, result.depth, result.valid), result.cost[result.valid]
    )
    masked = int(ref.maps.mask.sum())
    valid_frac = float(result.valid.sum()) / masked if masked else 0.0
    summary = {
        "ref": args.ref,
        "model": config.model.value,
        "loss": config.loss.value,
        "mu": config.mu,
        "patch_radius": config.patch_radius,
        "z_range": [config.z_min, config.z_max],
        "coarse_samples": config.coarse_samples,
        "refine_tol": config.refine_tol,
        "valid_frac": valid_frac,
        "runtime_ms": runtime_ms,
    }
    if ref.maps.gt_depth is not None and result.valid.any():
        err = mean_depth_error(result, ref.maps.gt_depth, ref.maps.mask)
        summary.update(mean_depth_err=err.mean, median=err.median, std=err.std)
        summary["mean_gt_depth"] = float(np.nanmean(ref.maps.gt_depth[ref.maps.mask]))
    write_json(out / "summary.json", summary)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if valid_frac < MIN_VALID_FRACTION:
        print(f"degraded reconstruction: only {valid_frac:.1%} of pixels valid", file=sys.stderr)
        return EXIT_DEGRADED
    return EXIT_OK


# -- evaluate ----------------------------------------------------------------


def cmd_evaluate(args) -> int:
    from .io import read_pfm, write_json
    from .metrics import chamfer_distance, mean_depth_error

    views, _ = _load_views(args.benchmark)
    ref = views[args.ref]
    if ref.maps.gt_depth is None:
        raise UsageError("benchmark has no ground-truth depth")
    recon = Path(args.reconstruction)
    valid = read_pfm(recon / "valid.pfm").data > 0.5
    depth = np.where(valid, read_pfm(recon / "depth.pfm").data.astype(float), np.nan)
    depth_err = mean_depth_error(depth, ref.maps.gt_depth, ref.maps.mask)
    gt_valid = ref.maps.mask & np.isfinite(ref.maps.gt_depth)
    chamfer = chamfer_distance(
        backproject_depth(ref, depth, valid & gt_valid),
        backproject_depth(ref, ref.maps.gt_depth, gt_valid),
    )
    report = {"depth_error": depth_err.to_dict(), "chamfer": chamfer.to_dict()}
    if args.out:
        write_json(args.out, report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# -- noise-sweep -------------------------------------------------------------


@dataclass
class ExperimentPlan:
    noise_sigmas_deg: list
    models: list
    losses: list  # (loss, mu) pairs
    seeds: list
    reflectance_noise_frac: float = 0.0
    benchmark: dict = field(default_factory=dict)
    resolution: int | None = None
    sweep: dict = field(default_factory=dict)
    ref: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        sigmas = [float(s) for s in d.get("noise_sigmas_deg", [])]
        models = list(d.get("models", ["surface"]))
        seeds = [int(s) for s in d.get("seeds", [0])]
        losses = []
        for entry in d.get("losses", [{"loss": "reparam"}]):
            if entry["loss"] == "combined":
                mus = entry.get("mu")
                if mus is None:
                    raise UsageError("combined loss entries need a mu grid")
                mus = mus if isinstance(mus, list) else [mus]
                if not mus:
                    raise UsageError("empty mu grid")
                losses.extend(("combined", float(m)) for m in mus)
            elif entry["loss"] == "reparam":
                losses.append(("reparam", None))
            else:
                raise UsageError(f"unknown loss {entry['loss']!r}")
        if not sigmas or not models or not seeds or not losses:
            raise UsageError("noise grid, models, seeds and losses must be non-empty")
        if any(s < 0 for s in sigmas):
            raise UsageError("noise sigmas must be nonnegative")
        unknown = set(models) - {"fronto", "slanted", "surface"}
        if unknown:
            raise UsageError(f"unknown patch models {sorted(unknown)}")
        return cls(
            sigmas,
            models,
            losses,
            seeds,
            float(d.get("reflectance_noise_frac", 0.0)),
            d.get("benchmark", {}),
            d.get("resolution"),
            d.get("sweep", {}),
            int(d.get("ref", 0)),
        )


def run_plan(plan: ExperimentPlan):
    """Run every (sigma, seed, model, loss, mu) combination; yields result rows and timings."""
    from .errors import RadiantError
    from .metrics import mean_depth_error
    from .sweeping import Loss, PatchModel, SweepConfig, View, reconstruct_depth_map
    from .synth import BenchmarkConfig, NoiseSpec, generate_benchmark

    config = BenchmarkConfig.from_dict(plan.benchmark) if plan.benchmark else BenchmarkConfig.default()
    if plan.resolution:
        config = config.with_resolution(int(plan.resolution))
    clean = generate_benchmark(config)
    z_min, z_max = plan.sweep.get("zrange", config.z_range())
    gt = clean.views[plan.ref].gt_depth
    mask = clean.views[plan.ref].mask
    rows, timings = [], []
    for sigma in plan.noise_sigmas_deg:
        for seed in plan.seeds:
            noisy = clean.with_noise(NoiseSpec(sigma, plan.reflectance_noise_frac, seed))
            views = [View(m, p, i) for m, p, i in zip(noisy.views, noisy.poses, noisy.intrinsics)]
            for model in plan.models:
                for loss, mu in plan.losses:
                    exp_id = f"s{sigma:g}_seed{seed}_{model}_{loss}" + ("" if mu is None else f"_mu{mu:g}")
                    row = {
                        "experiment_id": exp_id,
                        "seed": seed,
                        "noise_sigma_deg": sigma,
                        "patch_model": model,
                        "loss": loss,
                        "mu": "" if mu is None else mu,
                    }
                    start = time.perf_counter()
                    try:
                        cfg = SweepConfig(
                            z_min,
                            z_max,
                            coarse_samples=int(plan.sweep.get("coarse_samples", 256)),
                            refine_tol=float(plan.sweep.get("refine_tol", 1e-6)),
                            patch_radius=int(plan.sweep.get("patch_radius", 3)),
                            model=PatchModel(model),
                            loss=Loss(loss),
                            mu=mu,
                        )
                        result = reconstruct_depth_map(plan.ref, views, cfg)
                        err = mean_depth_error(result, gt, mask)
                        row.update(
                            mean_depth_err=err.mean,
                            median=err.median,
                            std=err.std,
                            valid_frac=float(result.valid.sum()) / float(mask.sum()),
                            error="",
                        )
                    except (RadiantError, ValueError) as exc:
                        row.update(error=f"{type(exc).__name__}: {exc}")
                    runtime_ms = (time.perf_counter() - start) * 1000.0
                    logger.info("%s done in %.0f ms", exp_id, runtime_ms)
                    rows.append(row)
                    timings.append({"experiment_id": exp_id, "runtime_ms": runtime_ms})
    return rows, timings


def cmd_noise_sweep(args) -> int:
    from .io import ensure_dir, write_results_csv
    from .metrics import RESULT_FIELDS

    try:
        doc = json.loads(Path(args.plan).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"invalid plan: {exc}") from exc
    try:
        plan = ExperimentPlan.from_dict(doc)
    except (KeyError, TypeError, ValueError) as exc:
        raise UsageError(f"invalid plan: {exc}") from exc
    rows, timings = run_plan(plan)
    out = ensure_dir(args.out)
    write_results_csv(out / "results.csv", rows, RESULT_FIELDS)
    write_results_csv(out / "timings.csv", timings, ("experiment_id", "runtime_ms"))
    print(f"wrote {len(rows)} rows to {out / 'results.csv'}")
    return EXIT_OK


# -- reparam-check -----------------------------------------------------------


def reparam_properties(trials: int, seed: int, inject_singular: bool = False) -> dict:
    """Max residual of each re-parametrisation property over ``trials`` random draws."""
    from .errors import ReparamError
    from .metrics import condition_number
    from .reparam import (
        LightTriplet,
        canonical_triplet,
        invert_reparam_q1,
        invert_reparam_q3,
        optimal_triplet,
        render_pbr,
    )

    rng = np.random.default_rng(seed)
    worst = {"round_trip_q1": 0.0, "round_trip_q3": 0.0, "orthogonality": 0.0, "supernormal": 0.0}
    for k in range(trials):
        n = rng.normal(size=3)
        n /= np.linalg.norm(n)
        L = optimal_triplet(n, 1.0)
        if inject_singular and k == 0:
            L = LightTriplet(np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 1.0, 0]]))
        try:
            r1 = rng.uniform(0.01, 1.0, 1)
            rr, nn = invert_reparam_q1(render_pbr(r1, n, L), L)
            worst["round_trip_q1"] = max(worst["round_trip_q1"], abs(rr - r1).max(), abs(nn - n).max())
            r3 = rng.uniform(0.01, 1.0, 3)
            rr, nn = invert_reparam_q3(render_pbr(r3, n, L), L)
            worst["round_trip_q3"] = max(worst["round_trip_q3"], abs(rr - r3).max(), abs(nn - n).max())
        except ReparamError:
            worst["round_trip_q1"] = math.inf
            worst["round_trip_q3"] = math.inf
        ortho = abs(L.matrix @ L.matrix.T - np.eye(3)).max()
        worst["orthogonality"] = max(worst["orthogonality"], ortho, abs(condition_number(L) - 1.0))
        sn = render_pbr([1.0], n, canonical_triplet())[:, 0]
        worst["supernormal"] = max(worst["supernormal"], abs(sn - n).max())
    return worst


def cmd_reparam_check(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    worst = reparam_properties(args.trials, args.seed, args.inject_singular)
    failed = []
    for name, value in worst.items():
        ok = value < args.tol
        print(f"{name:16s} max residual {value:.3e}  {'ok' if ok else 'FAIL'}")
        if not ok:
            failed.append(name)
    if failed:
        print("failed properties: " + ", ".join(failed), file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def _add_sweep_flags(p):
    p.add_argument("--model", choices=("fronto", "slanted", "surface"), default="surface")
    p.add_argument("--loss", choices=("reparam", "combined"), default="reparam")
    p.add_argument("--mu", type=float, default=None, help="weight of the reflectance term (combined loss)")
    p.add_argument("--patch-radius", type=int, default=3)
    p.add_argument("--zrange", type=float, nargs=2, metavar=("ZMIN", "ZMAX"))
    p.add_argument("--coarse-samples", type=int, default=256)
    p.add_argument("--refine-tol", type=float, default=1e-6)
    p.add_argument("--min-valid-views", type=int, default=1)
    p.add_argument("--lighting", choices=("optimal", "canonical"), default="optimal")
    p.add_argument("--ref", type=int, default=0, help="reference view index")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="radiant", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help=f"worker threads (env {THREADS_ENV})")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render the synthetic benchmark")
    p.add_argument("--config", help="benchmark config JSON (default: bundled config)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--views", type=int, help="override the camera count")
    p.add_argument("--resolution", type=int, help="square raster size")
    p.add_argument("--cameras", help="calibration JSON to use instead of the camera ring")
    p.add_argument("--normal-noise", type=float, default=0.0, help="normal noise std (degrees)")
    p.add_argument("--reflectance-noise", type=float, default=0.0, help="reflectance noise (fraction of max)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reconstruct", help="sweep a depth map for the reference view")
    p.add_argument("benchmark")
    p.add_argument("--out", required=True)
    _add_sweep_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="compare a reconstruction with ground truth")
    p.add_argument("reconstruction")
    p.add_argument("benchmark")
    p.add_argument("--ref", type=int, default=0)
    p.add_argument("--out", help="write the report as JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("noise-sweep", help="run a noise-robustness experiment plan")
    p.add_argument("plan")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("reparam-check", help="verify re-parametrisation properties")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-9)
    p.add_argument("--inject-singular", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_reparam_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    from .errors import IOFormatError, RadiantError

    try:
        configure_threads(args.threads)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, IOFormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except RadiantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
