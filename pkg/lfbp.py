#!/usr/bin/env python3
"""
lfbp - light-field backprojection tool.

Subcommands:
    transform   H -> H' (or H' -> H with --inverse)
    verify      fast transform against the brute-force oracle
    synth       synthetic PSF arrays (rect / hex / hex3 lenslet layouts)
    project     forward projection or backprojection of a volume / image
    deconv      Richardson-Lucy deconvolution
    export      16-bit PGM of a summed plane or a slice
    bench       timing table and CSV

Images and volumes use the LF5 container with degenerate dims:
(N_S, N_T, 1, 1, 1) for images, (N_X, N_Y, 1, 1, N_Z) for volumes.

Settings come from flags, then a ``--config`` file (flat ``key = value``),
then the environment (a ``.env`` file is loaded too), then defaults.
"""

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from dotenv import dotenv_values, load_dotenv

import bench
import lf_array
from errors import InvalidDims, LightFieldError
from lf_array import BackprojArray, Dims5, Image, PsfArray, Volume
from oracle import first_difference, oracle_backprojection
from projector import adjoint_mismatch, backproject_via_ht, forward_project, rl_run
from psf_synth import MlaLayout, SpotOptics, load_layout_config, normalization_error, random_psf, synth_psf
from transform import compute_backprojection, compute_psf_from_backprojection

logger = logging.getLogger("lfbp")

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_ERROR = 2

DEFAULTS = {
    "threads": 1,
    "log_level": "INFO",
    "iters": 20,
    "eps": 1e-12,
    "repeats": 3,
    "seed": 0,
    "bench_max_mb": 2048.0,
}

ENV_KEYS = {
    "threads": "LFBP_THREADS",
    "log_level": "LFBP_LOG_LEVEL",
    "bench_max_mb": "LFBP_BENCH_MAX_MB",
}


def load_settings(config_path=None, environ=None):
    """Merge config file, environment and defaults (flags are applied by the caller).

    Returns:
        dict with the DEFAULTS keys plus ``config`` holding the raw file values
    """
    environ = os.environ if environ is None else environ
    file_values = {}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise FileNotFoundError(f"config file not found: {config_path}")
        file_values = {k.lower(): v for k, v in dotenv_values(path).items() if v not in (None, "")}

    settings = {}
    for key, default in DEFAULTS.items():
        value = default
        env_key = ENV_KEYS.get(key)
        if env_key and environ.get(env_key):
            value = environ[env_key]
        if key in file_values:
            value = file_values[key]
        try:
            settings[key] = type(default)(value)
        except ValueError as e:
            raise InvalidDims(f"setting {key}={value!r} is not a valid {type(default).__name__}") from e
    settings["config"] = file_values
    return settings


def pick(flag, settings, key):
    return settings[key] if flag is None else flag


def configure_logging(level):
    logging.basicConfig(
        level=getattr(logging, str(level).upper(), logging.INFO),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
        force=True,
    )


def status(message):
    print(message, file=sys.stderr)


def cmd_transform(args, settings):
    threads = pick(args.threads, settings, "threads")
    start = time.perf_counter()
    if args.inverse:
        Ht = lf_array.load(args.input, kind=BackprojArray)
        result = compute_psf_from_backprojection(Ht, literal_bounds=args.literal_bounds, threads=threads)
    else:
        H = lf_array.load(args.input, kind=PsfArray)
        result = compute_backprojection(H, literal_bounds=args.literal_bounds, threads=threads)
    elapsed = time.perf_counter() - start
    lf_array.save(result, args.output)
    what = "H" if args.inverse else "H'"
    status(f"✓ {what} with dims {result.dims.shape} written to {args.output} in {elapsed:.3f}s")
    return EXIT_OK


def cmd_verify(args, settings):
    H = lf_array.load(args.input, kind=PsfArray)
    if args.ht:
        fast = lf_array.load(args.ht, kind=BackprojArray)
        if fast.dims.shape != H.dims.shape:
            print(f"FAIL dims {fast.dims.shape} differ from {H.dims.shape}")
            return EXIT_FAIL
    else:
        fast = compute_backprojection(H, threads=pick(args.threads, settings, "threads"))
    slow = oracle_backprojection(H, progress=args.progress)
    where = first_difference(fast, slow)
    if where is None:
        print(f"PASS {H.dims.shape}")
        return EXIT_OK
    print(f"FAIL first difference at (s',t',x',y',z)={where}")
    return EXIT_FAIL


def _layout_from(args, settings):
    if args.layout_config:
        layout, optics = load_layout_config(args.layout_config)
    elif settings["config"].get("layout") or settings["config"].get("pitch"):
        layout, optics = load_layout_config(args.config)
    else:
        layout, optics = MlaLayout(), SpotOptics()
    if args.layout or args.pitch:
        layout = MlaLayout(kind=args.layout or layout.kind, pitch=args.pitch or layout.pitch,
                           type_scales=layout.type_scales)
    return layout, optics


def cmd_synth(args, settings):
    dims = Dims5.parse(args.dims)
    if args.random:
        H = random_psf(dims, density=args.density, seed=pick(args.seed, settings, "seed"))
        lf_array.save(H, args.output)
        status(f"✓ random PSF {dims.shape} (density {args.density}) written to {args.output}")
        return EXIT_OK

    layout, optics = _layout_from(args, settings)
    H = synth_psf(layout, dims, optics)
    lf_array.save(H, args.output)
    print(f"normalization error: {normalization_error(H):.3e}")
    status(f"✓ {layout.kind} PSF {dims.shape} written to {args.output}")
    return EXIT_OK


def cmd_project(args, settings):
    rng = np.random.default_rng(pick(args.seed, settings, "seed"))
    if args.forward:
        H = lf_array.load(args.array, kind=PsfArray)
        g = lf_array.load(args.input, kind=Volume)
        result = forward_project(H, g)
        if args.check_adjoint:
            f = rng.random(result.shape)
            print(f"adjoint relative error: {adjoint_mismatch(H, compute_backprojection(H), g, f):.3e}")
    else:
        Ht = lf_array.load(args.array, kind=BackprojArray)
        f = lf_array.load(args.input, kind=Image)
        result = backproject_via_ht(Ht, f)
        if args.check_adjoint:
            H = compute_psf_from_backprojection(Ht)
            g = rng.random(result.shape)
            print(f"adjoint relative error: {adjoint_mismatch(H, Ht, g, f):.3e}")
    lf_array.save(result, args.output)
    status(f"✓ {'image' if args.forward else 'volume'} {result.shape} written to {args.output}")
    return EXIT_OK


def cmd_deconv(args, settings):
    H = lf_array.load(args.psf, kind=PsfArray)
    f = lf_array.load(args.image, kind=Image)
    if args.ht:
        Ht = lf_array.load(args.ht, kind=BackprojArray)
    else:
        Ht = compute_backprojection(H, threads=pick(args.threads, settings, "threads"))

    def report(state):
        print(f"iter {state.k:4d}  mse {state.history[-1]:.6e}  divergence {state.divergence[-1]:.6e}")

    g, state = rl_run(H, Ht, f,
                      iters=pick(args.iters, settings, "iters"),
                      eps=pick(args.eps, settings, "eps"),
                      callback=report)
    lf_array.save(g, args.output)
    if args.reprojection:
        lf_array.save(forward_project(H, g), args.reprojection)
    status(f"✓ volume {g.shape} after {state.k} iterations written to {args.output}")
    return EXIT_OK


def cmd_export(args, settings):
    z = args.plane
    if args.slice:
        container = lf_array.load(args.input, kind=PsfArray)
        if container.dims.n_x != 1 or container.dims.n_y != 1:
            raise InvalidDims(f"--slice needs an image or volume container, got dims {container.dims.shape}")
        if not 1 <= z <= container.dims.n_z:
            raise IndexError(f"z={z} outside 1..{container.dims.n_z}")
        plane = container.data[:, :, 0, 0, z - 1]
    elif args.sum_backward:
        plane = lf_array.sum_backward_plane(lf_array.load(args.input, kind=BackprojArray), z)
    else:
        plane = lf_array.sum_forward_plane(lf_array.load(args.input, kind=PsfArray), z)
    lf_array.export_pgm(plane, args.output)
    status(f"✓ plane z={z} ({plane.shape[0]}x{plane.shape[1]}) written to {args.output}")
    return EXIT_OK


def cmd_bench(args, settings):
    if args.sizes in bench.PRESETS:
        cases = bench.preset_cases(args.sizes)
    else:
        cases = bench.read_sizes(args.sizes)
    threads = pick(args.threads, settings, "threads")
    report = bench.run_benchmark(
        cases,
        repeats=pick(args.repeats, settings, "repeats"),
        seed=pick(args.seed, settings, "seed"),
        threads=threads,
        constant=args.constant,
        max_mb=pick(args.max_mb, settings, "bench_max_mb"),
        progress=args.progress,
    )
    print(report.table())
    if args.output:
        report.to_csv(args.output)
    if report.failed:
        status(f"✗ {len(report.failed)} case(s) failed verification")
        return EXIT_FAIL
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="lfbp", description="Light-field backprojection arrays, projection and deconvolution")
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--threads", type=int, help="worker threads (LFBP_THREADS)")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("transform", help="compute H' from H")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--inverse", action="store_true", help="recover H from H'")
    p.add_argument("--literal-bounds", action="store_true", help="loop m over 1..n_s only")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("verify", help="compare the fast transform with the oracle")
    p.add_argument("input")
    p.add_argument("--ht", help="check this H' file instead of computing one")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("synth", help="write a synthetic PSF array")
    p.add_argument("output")
    p.add_argument("--dims", required=True, help="n_s,n_t,n_x,n_y,n_z")
    p.add_argument("--layout", choices=["rect", "hex", "hex3"])
    p.add_argument("--pitch", type=int)
    p.add_argument("--layout-config", help="layout/optics key = value file")
    p.add_argument("--random", action="store_true", help="seeded random array instead of the spot model")
    p.add_argument("--density", type=float, default=1.0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("project", help="forward projection or backprojection")
    mode = p.add_mutually_exclusive_group(required=True)
    mode.add_argument("--forward", action="store_true", help="H and a volume -> image")
    mode.add_argument("--backward", action="store_true", help="H' and an image -> volume")
    p.add_argument("array")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--check-adjoint", action="store_true", help="print the dot-product test error")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("deconv", help="Richardson-Lucy deconvolution")
    p.add_argument("psf")
    p.add_argument("image")
    p.add_argument("output")
    p.add_argument("--iters", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--ht", help="precomputed H'")
    p.add_argument("--reprojection", help="also write H g of the result")
    p.set_defaults(func=cmd_deconv)

    p = sub.add_parser("export", help="write a plane as 16-bit PGM")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--plane", type=int, default=1)
    which = p.add_mutually_exclusive_group()
    which.add_argument("--sum-forward", action="store_true", help="sum of H over x,y (default)")
    which.add_argument("--sum-backward", action="store_true", help="sum of H' over x',y'")
    which.add_argument("--slice", action="store_true", help="plane z of an image/volume container")
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("bench", help="time fast transform against the oracle")
    p.add_argument("output", nargs="?", help="CSV file")
    p.add_argument("--sizes", default="smoke", help=f"preset ({', '.join(bench.PRESETS)}) or CSV size file")
    p.add_argument("--repeats", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--constant", action="store_true", help="all-ones input")
    p.add_argument("--max-mb", type=float, help="memory budget per case (LFBP_BENCH_MAX_MB)")
    p.add_argument("--progress", action="store_true")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None):
    try:
        load_dotenv()
    except Exception:
        pass  # no .env is fine

    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(args.config)
        level = "DEBUG" if args.verbose else "WARNING" if args.quiet else settings["log_level"]
        configure_logging(level)
        logger.debug(f"settings: { {k: v for k, v in settings.items() if k != 'config'} }")
        return args.func(args, settings)
    except (LightFieldError, OSError, IndexError, ValueError) as e:
        status(f"✗ {type(e).__name__}: {e}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
