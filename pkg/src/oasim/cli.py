"""``oasim`` command line: phantom -> forward -> recon -> eval, plus tools.

Exit codes: 0 success, 1 validation error, 2 I/O error, 3 numeric-contract
violation. Every command writes its effective configuration next to its
output as ``<out>.config.json``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, _kernels
from .dataio import ContainerReader, ContainerWriter, make_split, SPLIT_KINDS
from .forward import ImageGrid, PhysicsConfig, SignalMatrix, check_time_window, point_source, simulate_signals
from .geometry import ARRAY_KINDS, make_array, mask_tag, parse_mask
from .metrics import (DEFAULT_DATA_RANGE, IMAGE_METRICS, SEG_METRICS, MetricReport, image_metrics_row,
                      label_metrics_row)
from .phantom import PhantomParams, generate_batch
from .recon import MODES, DEFAULT_BAND, NumericContractError, ReconConfig, normalize_clip, reconstruct, to_uint8

log = logging.getLogger("oasim")

EXIT_OK, EXIT_VALIDATION, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _physics(args) -> PhysicsConfig:
    return PhysicsConfig(args.sos_mps, args.fs_hz, args.n_samples, args.grueneisen)


def _grid(args) -> ImageGrid:
    return ImageGrid(args.grid_n, args.pitch_um * 1e-6)


def _parse_band(text: str):
    if text in ("none", ""):
        return None
    lo, _, hi = text.partition(":")
    return float(lo), float(hi)


def _split_ref(ref: str, default: str | None = None) -> tuple[str, str | None]:
    """``path[:dataset]``; the suffix only counts if ``path`` exists without it."""
    if os.path.exists(ref):
        return ref, default
    path, sep, name = ref.rpartition(":")
    if sep and path:
        return path, name
    return ref, default


def _pick_dataset(reader: ContainerReader, name: str | None, hint: str) -> str:
    if name is not None:
        reader.info(name)
        return name
    names = reader.names()
    candidates = [n for n in names if n.endswith(hint)] or names
    if len(candidates) != 1:
        raise ValueError(f"{reader.path}: choose a dataset with PATH:NAME among {names}")
    return candidates[0]


def _echo_config(out: str, command: str, args, extra: dict | None = None) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg["command"] = command
    cfg["version"] = __version__
    cfg["backend"] = args.backend or _kernels.BACKEND
    if extra:
        cfg.update(extra)
    with open(f"{out}.config.json", "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _threads(args) -> int:
    if args.threads < 1:
        raise ValueError("--threads must be >= 1")
    return _kernels.set_threads(args.threads)


# --------------------------------------------------------------------------
# commands


def cmd_phantom(args) -> int:
    if args.n < 0:
        raise ValueError("--n must be >= 0")
    params = PhantomParams.for_size(args.grid_n)
    _echo_config(args.out, "phantom", args, {"phantom_params": params.to_dict()})
    n = params.image_n
    meta = {"seed": str(args.seed), "phantom_params": json.dumps(params.to_dict(), sort_keys=True)}
    with ContainerWriter(args.out, meta) as w:
        gt = w.create("ground_truth", np.float32, (n, n))
        labels = w.create("labels", np.uint8, (n, n))
        for p in generate_batch(args.n, args.seed, params, threads=args.threads):
            gt.append(p.pressure.astype(np.float32))
            labels.append(p.labels)
        w.add_array("sliceID", np.arange(args.n, dtype=np.int64))
    log.info("wrote %d phantoms to %s", args.n, args.out)
    return EXIT_OK


def cmd_forward(args) -> int:
    geom = make_array(args.array)
    physics, grid = _physics(args), _grid(args)
    check_time_window(geom, grid, physics)
    eff = _threads(args)
    path, name = _split_ref(args.input)
    with ContainerReader(path) as r:
        name = _pick_dataset(r, name, "ground_truth")
        info = r.info(name)
        if info.shape[1:] != (grid.n, grid.n):
            raise ValueError(f"{name} records are {info.shape[1:]}, grid is {grid.n}x{grid.n}")
        _echo_config(args.out, "forward", args, {"effective_threads": eff, "dataset_in": name})
        out_name = f"{geom.short_name}_raw"
        meta = {"array": geom.name, "speed_of_sound": repr(physics.speed_of_sound),
                "sampling_rate": repr(physics.sampling_rate), "n_samples": str(physics.n_samples),
                "pitch_m": repr(grid.pitch_m)}

        def records():
            for pmap in r.iter_records(name):
                sig = simulate_signals(pmap.astype(np.float64), geom, physics, grid, args.backend).values
                if not np.all(np.isfinite(sig)):
                    raise NumericContractError("forward produced non-finite signals")
                yield sig.astype(np.float32)

        with ContainerWriter(args.out, meta) as w:
            w.add(out_name, records(), np.float32, (physics.n_samples, geom.n_elements))
            if "sliceID" in r:
                w.add_array("sliceID", r.read_dataset("sliceID"))
    return EXIT_OK


def _recon_name(geom, mask_spec: str) -> str:
    if mask_spec == "linear":
        return "linear_BP"
    return f"{geom.short_name}{mask_tag(mask_spec)}_BP"


def cmd_recon(args) -> int:
    geom = make_array(args.array)
    physics, grid = _physics(args), _grid(args)
    mask = parse_mask(geom, args.mask)
    band = _parse_band(args.band)
    config = ReconConfig(grid=grid, mode=args.mode, band=band, mask=mask)
    if band is not None and band[1] > physics.sampling_rate / 2:
        raise ValueError(f"band {band} exceeds Nyquist {physics.sampling_rate / 2}")
    check_time_window(geom, grid, physics)
    eff = _threads(args)
    path, name = _split_ref(args.input)
    with ContainerReader(path) as r:
        name = _pick_dataset(r, name, "_raw")
        info = r.info(name)
        if info.shape[1:] != (physics.n_samples, geom.n_elements):
            raise ValueError(f"{name} records are {info.shape[1:]}, expected "
                             f"({physics.n_samples}, {geom.n_elements}) for {geom.name}")
        out_name = _recon_name(geom, args.mask)
        _echo_config(args.out, "recon", args, {"effective_threads": eff, "dataset_in": name,
                                               "dataset_out": out_name})

        def records():
            for sig in r.iter_records(name):
                img = reconstruct(SignalMatrix(sig.astype(np.float64), physics, geom), geom, config, args.backend)
                if not np.all(np.isfinite(img)):
                    raise NumericContractError("reconstruction produced non-finite pixels")
                yield img.astype(np.float32)

        meta = {"array": geom.name, "mask": args.mask, "mode": args.mode, "band": args.band}
        with ContainerWriter(args.out, meta) as w:
            w.add(out_name, records(), np.float32, (grid.n, grid.n))
            if "sliceID" in r:
                w.add_array("sliceID", r.read_dataset("sliceID"))
    return EXIT_OK


def cmd_eval(args) -> int:
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    img_m = [m for m in metrics if m in IMAGE_METRICS]
    seg_m = [m for m in metrics if m in SEG_METRICS]
    unknown = set(metrics) - set(img_m) - set(seg_m)
    if unknown:
        raise ValueError(f"unknown metrics {sorted(unknown)}")
    if seg_m and not args.labels:
        raise ValueError("segmentation metrics need --labels")
    if img_m and not args.target:
        raise ValueError("image metrics need --target")
    classes = tuple(int(c) for c in args.classes.split(","))

    readers = []
    try:
        pred_path, pred_name = _split_ref(args.pred)
        pr = ContainerReader(pred_path)
        readers.append(pr)
        pred_name = _pick_dataset(pr, pred_name, "_BP")
        n = len(pr.info(pred_name))
        tr = lr = None
        if img_m:
            tpath, tname = _split_ref(args.target)
            tr = ContainerReader(tpath)
            readers.append(tr)
            tname = _pick_dataset(tr, tname, "_BP")
            if tr.info(tname).shape != pr.info(pred_name).shape:
                raise ValueError(f"pred {pr.info(pred_name).shape} and target {tr.info(tname).shape} differ")
        if seg_m:
            lpath, lname = _split_ref(args.labels)
            lr = ContainerReader(lpath)
            readers.append(lr)
            lname = _pick_dataset(lr, lname, "labels")
            if lr.info(lname).shape != pr.info(pred_name).shape:
                raise ValueError(f"pred {pr.info(pred_name).shape} and labels {lr.info(lname).shape} differ")
        _echo_config(args.out, "eval", args)

        report = MetricReport()
        for i in range(n):
            p = pr.read_record(pred_name, i).astype(np.float64)
            row = {}
            if img_m:
                t = tr.read_record(tname, i).astype(np.float64)
                if not args.no_normalize:
                    p_img, t = normalize_clip(p), normalize_clip(t)
                else:
                    p_img = p
                row.update(image_metrics_row(p_img, t, img_m, args.data_range))
            if seg_m:
                lab = lr.read_record(lname, i)
                row.update(label_metrics_row(np.rint(p).astype(np.int64), lab, seg_m, classes, args.spacing))
            report.add(i, row)
    finally:
        for rd in readers:
            rd.close()
    report.to_csv(f"{args.out}.csv")
    report.to_json(f"{args.out}.json")
    for name, s in report.summary().items():
        print(f"{name}: mean={s['mean']} std={s['std']} (n={s['n_defined']}/{s['n']})")
    return EXIT_OK


def _checksum(img: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(img, dtype=np.float64).tobytes()).hexdigest()


def run_bench(array: str, grid_n: int, threads: int, repeat: int, backend=None, mode="derivative_bp",
              pitch_um: float = 100.0) -> dict:
    """Time one reconstruction ``repeat`` times; compare to a 1-thread run."""
    geom = make_array(array)
    grid = ImageGrid(grid_n, pitch_um * 1e-6)
    physics = PhysicsConfig()
    half = grid.n * grid.pitch_m / 2
    img = point_source(grid, 0.4 * half, -0.2 * half)
    sig = simulate_signals(img, geom, physics, grid, backend)
    config = ReconConfig(grid=grid, mode=mode)

    _kernels.set_threads(1)
    ref = _checksum(reconstruct(sig, geom, config, backend))
    eff = _kernels.set_threads(threads)
    reconstruct(sig, geom, config, backend)  # warm-up / compile
    timings = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = reconstruct(sig, geom, config, backend)
        timings.append(time.perf_counter() - t0)
    median = float(np.median(timings))
    work = grid.n * grid.n * geom.n_elements
    return {
        "array": array, "grid": grid_n, "mode": mode,
        "backend": backend or _kernels.BACKEND,
        "threads_requested": threads, "threads_effective": eff,
        "timings_s": timings, "median_s": median,
        "pixel_channels_per_s": work / median if median > 0 else None,
        "checksum": _checksum(out), "checksum_1thread": ref,
        "identical_across_threads": _checksum(out) == ref,
    }


def cmd_bench(args) -> int:
    if args.repeat < 1 or args.grid < 2 or args.threads < 1:
        raise ValueError("--repeat, --threads must be >= 1 and --grid >= 2")
    if args.out:
        _echo_config(args.out, "bench", args)
    report = run_bench(args.array, args.grid, args.threads, args.repeat, args.backend, args.mode, args.pitch_um)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    if not report["identical_across_threads"]:
        raise NumericContractError("reconstruction differs between thread counts")
    return EXIT_OK


def write_pgm(path, img8: np.ndarray) -> None:
    h, w = img8.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(img8, dtype=np.uint8).tobytes())


def cmd_export_png(args) -> int:
    path, name = _split_ref(args.input)
    suffix = Path(args.out).suffix.lower()
    if suffix not in (".png", ".pgm"):
        raise ValueError("--out must end in .png or .pgm")
    with ContainerReader(path) as r:
        name = _pick_dataset(r, name, "_BP")
        img = r.read_record(name, args.index).astype(np.float64)
    if img.ndim != 2:
        raise ValueError(f"{name} records are not images: shape {img.shape}")
    img8 = to_uint8(normalize_clip(img))
    if suffix == ".pgm":
        write_pgm(args.out, img8)
    else:
        from PIL import Image

        Image.fromarray(img8, mode="L").save(args.out)
    return EXIT_OK


def cmd_split(args) -> int:
    pop = args.population
    population = [int(p) for p in pop.split(",")] if "," in pop else int(pop)
    spec = make_split(args.kind, population)
    text = json.dumps(spec.to_dict())
    if args.out:
        _echo_config(args.out, "split", args)
        Path(args.out).write_text(text + "\n")
    else:
        print(text)
    return EXIT_OK


# --------------------------------------------------------------------------


def _add_physics(p, grid=True):
    p.add_argument("--sos-mps", type=float, default=1510.0, help="speed of sound [m/s]")
    p.add_argument("--fs-hz", type=float, default=40e6, help="sampling rate [Hz]")
    p.add_argument("--n-samples", type=int, default=2030)
    p.add_argument("--grueneisen", type=float, default=1.0)
    if grid:
        p.add_argument("--grid-n", type=int, default=256, help="pixels per side")
        p.add_argument("--pitch-um", type=float, default=100.0, help="pixel pitch [um]")


def _add_common(p):
    p.add_argument("--threads", type=int, default=1, help="max worker threads")
    p.add_argument("--backend", choices=("numba", "numpy"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="oasim", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("phantom", help="generate pressure maps and labels")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid-n", type=int, default=256)
    _add_common(p)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("forward", help="simulate raw signals")
    p.add_argument("--in", dest="input", required=True, help="PATH[:DATASET]")
    p.add_argument("--array", choices=ARRAY_KINDS, required=True)
    p.add_argument("--out", required=True)
    _add_physics(p)
    _add_common(p)
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("recon", help="reconstruct images")
    p.add_argument("--in", dest="input", required=True, help="PATH[:DATASET]")
    p.add_argument("--array", choices=ARRAY_KINDS, required=True)
    p.add_argument("--mask", default="none", help="none | sparse:K | limited:K | linear")
    p.add_argument("--mode", choices=MODES, default="derivative_bp")
    p.add_argument("--band", default=f"{DEFAULT_BAND[0]:g}:{DEFAULT_BAND[1]:g}", help="LOW:HIGH in Hz, or none")
    p.add_argument("--out", required=True)
    _add_physics(p)
    _add_common(p)
    p.set_defaults(func=cmd_recon)

    p = sub.add_parser("eval", help="compute metrics")
    p.add_argument("--pred", required=True, help="PATH[:DATASET]")
    p.add_argument("--target", help="PATH[:DATASET]")
    p.add_argument("--labels", help="PATH[:DATASET] with ground-truth label maps")
    p.add_argument("--metrics", default="mae,rmse,psnr,ssim")
    p.add_argument("--classes", default="1,2")
    p.add_argument("--data-range", type=float, default=DEFAULT_DATA_RANGE)
    p.add_argument("--spacing", type=float, default=1.0, help="HD95 units per pixel")
    p.add_argument("--no-normalize", action="store_true", help="skip max-scaling and -0.2 clipping")
    p.add_argument("--out", required=True, help="output prefix for .csv/.json")
    p.set_defaults(func=cmd_eval, threads=1, backend=None)

    p = sub.add_parser("bench", help="reconstruction throughput")
    p.add_argument("--array", choices=ARRAY_KINDS, default="virtual_circle")
    p.add_argument("--grid", type=int, default=256)
    p.add_argument("--pitch-um", type=float, default=100.0)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--mode", choices=MODES, default="derivative_bp")
    p.add_argument("--out")
    _add_common(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("export-png", help="write one image as 8-bit PNG/PGM")
    p.add_argument("--in", dest="input", required=True, help="PATH[:DATASET]")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_png, threads=1, backend=None)

    p = sub.add_parser("split", help="print a standard train/val/test split")
    p.add_argument("--kind", choices=SPLIT_KINDS, required=True)
    p.add_argument("--population", required=True, help="sample count or comma-separated IDs")
    p.add_argument("--out")
    p.set_defaults(func=cmd_split, threads=1, backend=None)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericContractError as exc:
        print(f"oasim: numeric contract violated: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"oasim: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, IndexError, RuntimeError) as exc:
        print(f"oasim: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
