"""``inpaint`` command line.

Exit codes: 0 success, 1 I/O or image/mask mismatch, 2 usage or invalid
configuration, 3 empty dictionary (no fully known patch).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io as _io
import json
import os
import sys

from .dictionary import (
    QUERY_MODES,
    SCALE_MODES,
    ConfigError,
    EmptyDictionaryError,
    IndexConfig,
    load_indices,
    save_indices,
)
from .engine import InpaintResult, MultiIndex, acceleration_error, inpaint
from .image_core import check_pair
from .io import read_image, read_mask, write_image
from .zcurve import Norm

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_EMPTY = 3

SWEEP_AXES = {"D": ("D", int), "k": ("k", int), "mu": ("mu", int), "nu": ("nu", int),
              "c": ("c", float), "norm": ("norm", Norm.parse)}

STATS_FIELDS = ("iteration", "row", "col", "layout_id", "candidates", "source_x", "source_y",
                "filled", "z_error", "bf_error", "seconds")


class _UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="inpaint",
        description="Exemplar inpainting with z-curve patch indices.",
        epilog="Texture synthesis: pass an enlarged canvas whose new border is UNKNOWN in the mask.")
    p.add_argument("--image", required=True, help="input image (PNG, PGM/PPM)")
    p.add_argument("--mask", required=True,
                   help="mask image; values >= 128 are known, lower values are filled")
    p.add_argument("--out", help="completed image (required unless --sweep)")
    d = IndexConfig()
    p.add_argument("--patch-size", "-K", dest="K", type=int, default=d.K, help="patch size K (odd)")
    p.add_argument("--dims", "-D", dest="D", type=int, default=d.D, help="principal dimensions D")
    p.add_argument("--knn", "-k", dest="k", type=int, default=d.k, help="candidates per query")
    p.add_argument("--mu", type=int, default=d.mu, help="leaf threshold")
    p.add_argument("--nu", type=int, default=d.nu, help="parallel job threshold")
    p.add_argument("--coverage", "-c", dest="c", type=float, default=d.c,
                   help="fraction of patch pixels per subset layout")
    p.add_argument("--norm", choices=("l2", "l1"), default="l2")
    p.add_argument("--query", choices=QUERY_MODES, default=d.query,
                   help="unknown layout pixels in the query: least-squares fit or PCA mean")
    p.add_argument("--scale", choices=SCALE_MODES, default=d.scale,
                   help="quantizer range shared by all dimensions or per axis")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--oracle", action="store_true",
                   help="also run the exhaustive search each iteration and report the acceleration error")
    p.add_argument("--stats", metavar="PATH", help="per-iteration CSV")
    p.add_argument("--save-index", metavar="PATH")
    p.add_argument("--load-index", metavar="PATH")
    p.add_argument("--sweep", metavar="AXIS=V1,V2,...",
                   help="one run per value of D, k, mu, nu, c or norm; CSV on stdout")
    p.add_argument("--report", metavar="PATH", help="JSON run report")
    return p


def config_from_args(args) -> IndexConfig:
    return IndexConfig(K=args.K, c=args.c, D=args.D, k=args.k, mu=args.mu, nu=args.nu,
                       norm=Norm.parse(args.norm), query=args.query, scale=args.scale)


def parse_sweep(spec: str) -> tuple[str, list]:
    axis, sep, values = spec.partition("=")
    axis = axis.strip()
    if not sep or axis not in SWEEP_AXES:
        raise _UsageError(f"--sweep expects AXIS=v1,v2,... with AXIS in {sorted(SWEEP_AXES)}")
    _, conv = SWEEP_AXES[axis]
    try:
        out = [conv(v.strip()) for v in values.split(",") if v.strip()]
    except ValueError as exc:
        raise _UsageError(f"bad --sweep value: {exc}") from None
    if not out:
        raise _UsageError("--sweep needs at least one value")
    return axis, out


def sweep_config(cfg: IndexConfig, axis: str, value) -> IndexConfig:
    field_name, _ = SWEEP_AXES[axis]
    new = dataclasses.replace(cfg, **{field_name: value})
    if axis == "mu" and new.nu < new.mu:
        # the job threshold may not sit below the leaf threshold
        new = dataclasses.replace(new, nu=new.mu)
    return new


def _cfg_dict(cfg: IndexConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["norm"] = cfg.norm.name.lower()
    return d


def _ms(x: float) -> float:
    return round(float(x), 3)


def run_report(cfg: IndexConfig, result: InpaintResult, workers: int, oracle: bool,
               outputs: dict) -> dict:
    t = result.timings
    rep = {
        "config": _cfg_dict(cfg),
        "workers": workers,
        "dictionary_size": result.dictionary_size,
        "iterations": len(result.records),
        "index_seconds": _ms(t.get("index_seconds", 0.0)),
        "per_index_seconds": [_ms(s) for s in t.get("per_index_seconds", [])],
        "sort_seconds": _ms(t.get("sort_seconds", 0.0)),
        "inpaint_seconds": _ms(t["inpaint_seconds"]),
        "total_seconds": _ms(t["total_seconds"]),
        "outputs": outputs,
    }
    if oracle:
        ae = acceleration_error(result.records)
        rep["mean_ae_percent"] = ae.mean_percent
        rep["ae_contributing"] = ae.contributing
        rep["ae_zero_bf_excluded"] = ae.zero_bf_excluded
        rep["iteration_errors"] = [{"z_error": r.z_error, "bf_error": r.bf_error}
                                   for r in result.records]
    return rep


def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_stats(path, result: InpaintResult) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(STATS_FIELDS)
        for r in result.records:
            w.writerow([r.iteration, r.target[0], r.target[1], r.layout_id, r.candidates,
                        r.source.x, r.source.y, r.filled, _num(r.z_error), _num(r.bf_error),
                        f"{r.elapsed:.6f}"])


def _load_multi(path, image, mask) -> MultiIndex:
    return MultiIndex.from_loaded(load_indices(path, image.width), image, mask)


def _run_once(cfg, image, mask, args, multi=None) -> InpaintResult:
    return inpaint(image, mask, cfg, workers=args.workers, oracle=args.oracle, multi_index=multi)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _main(args)
    except _UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"inpaint: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"inpaint: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except EmptyDictionaryError as exc:
        print(f"inpaint: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"inpaint: {exc}", file=sys.stderr)
        return EXIT_IO


def _main(args) -> int:
    if args.workers < 1:
        raise _UsageError("--workers must be at least 1")
    sweep = parse_sweep(args.sweep) if args.sweep else None
    if sweep is None and not args.out:
        raise _UsageError("--out is required")
    if args.load_index and (sweep is not None and sweep[0] in ("D", "c")):
        raise _UsageError("a loaded index fixes D and c; sweep another axis")
    cfg = config_from_args(args)
    image = read_image(args.image)
    mask = read_mask(args.mask)
    check_pair(image, mask)
    multi = None
    if args.load_index:
        multi = _load_multi(args.load_index, image, mask)
        # the stored index decides K, c and D
        cfg = dataclasses.replace(cfg, K=multi.K, c=multi.c, D=multi.D)
    cfg.validate(image.channels)

    if sweep is None:
        result = _run_once(cfg, image, mask, args, multi)
        return _finish(args, cfg, result)

    axis, values = sweep
    configs = [sweep_config(cfg, axis, v) for v in values]
    for c in configs:
        c.validate(image.channels)
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["value", "seconds"] + (["mean_ae_percent"] if args.oracle else []))
    sys.stdout.write(buf.getvalue())
    runs = []
    result = None
    for v, c in zip(values, configs):
        result = _run_once(c, image, mask, args, multi)
        row = [v.name.lower() if isinstance(v, Norm) else v, f"{result.timings['total_seconds']:.3f}"]
        if args.oracle:
            row.append(_num(acceleration_error(result.records).mean_percent))
        buf = _io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow(row)
        sys.stdout.write(buf.getvalue())
        sys.stdout.flush()
        runs.append(run_report(c, result, args.workers, args.oracle, {}))
    return _finish(args, configs[-1], result, sweep_runs=(axis, runs))


def _finish(args, cfg, result: InpaintResult, sweep_runs=None) -> int:
    outputs = {}
    if args.out:
        write_image(args.out, result.image)
        outputs["image"] = args.out
    if args.stats:
        write_stats(args.stats, result)
        outputs["stats"] = args.stats
    if args.save_index:
        if result.multi_index is None:
            raise ValueError("no index to save")
        m = result.multi_index
        save_indices(args.save_index, m.indices, m.K, m.c, result.image.channels, result.image.width)
        outputs["index"] = args.save_index
    if args.report:
        outputs["report"] = args.report
        rep = run_report(cfg, result, args.workers, args.oracle, outputs)
        if sweep_runs is not None:
            rep["sweep_axis"] = sweep_runs[0]
            rep["sweep"] = sweep_runs[1]
        with open(args.report, "w") as f:
            json.dump(rep, f, indent=2)
            f.write("\n")
    return EXIT_OK


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
