"""Command-line surface: svdvals, accuracy, bench, tune.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure. All
commands honor --seed and are bit-reproducible for reference-backend
numeric outputs (not timings). BANDSVD_WORKERS sets the default parallel
worker count; --workers overrides it.
"""
from __future__ import annotations

import argparse
import sys

import numpy as np

from .bench import (BenchProtocol, TuneGrid, accuracy_table, bench_pipeline,
                    make_backend, run_tune)
from .errors import ConvergenceError
from .kernels import KernelConfig
from .matrix import read_matrix
from .precision import by_name
from .secondstage import svdvals

_VALUE_DIGITS = {4: ".9g", 8: ".17g"}


def _format_value(v) -> str:
    spec = _VALUE_DIGITS[np.dtype(v.dtype).itemsize]
    return format(float(v), spec)


def _add_global_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--precision", choices=["fp64", "fp32", "fp16"], default="fp64")
    p.add_argument("--tilesize", type=int, default=None)
    p.add_argument("--colperblock", type=int, default=None)
    p.add_argument("--splitk", type=int, default=1)
    p.add_argument("--backend", choices=["reference", "parallel"], default="reference")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fused", dest="fused", action="store_true", default=True)
    p.add_argument("--no-fused", dest="fused", action="store_false")
    p.add_argument("--output", type=str, default=None)


def _config_for(args, n: int) -> KernelConfig:
    if args.tilesize is None:
        base = KernelConfig.for_size(n)
        ts = base.tilesize
    else:
        ts = args.tilesize
    return KernelConfig(tilesize=ts, colperblock=args.colperblock,
                        splitk=args.splitk, fused=args.fused)


def _write_lines(lines, path):
    text = "\n".join(lines) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as f:
            f.write(text)


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def cmd_svdvals(args) -> int:
    m = read_matrix(args.input)
    cfg = _config_for(args, m.rows)
    backend = make_backend(args.backend, args.workers)
    try:
        vals = svdvals(m, cfg, backend)
    finally:
        backend.close()
    _write_lines([_format_value(v) for v in vals], args.output)
    return 0


def cmd_accuracy(args) -> int:
    sizes = _parse_int_list(args.sizes)
    precisions = [p.strip() for p in args.precisions.split(",") if p.strip()]
    for p in precisions:
        by_name(p)
    table = accuracy_table(sizes, precisions, args.seed,
                           per_distribution=args.per_distribution, jobs=args.jobs)
    lines = ["size," + ",".join(precisions)]
    for n in sizes:
        cells = []
        for p in precisions:
            v = table[(n, p)]
            cells.append(format(v, ".6e") if isinstance(v, float) else str(v).replace(",", ";"))
        lines.append(f"{n}," + ",".join(cells))
    _write_lines(lines, args.output)
    return 0


def cmd_bench(args) -> int:
    sizes = _parse_int_list(args.sizes)
    precision = by_name(args.precision)
    protocol = BenchProtocol(batch=args.batch, min_total=args.min_total)
    header = "size,precision,tilesize,colperblock,splitk,backend,workers,median_seconds,runs"
    if args.breakdown:
        header += ",panel,trailing,bidiagonal,diagonal"
    lines = [header]
    for n in sizes:
        cfg = _config_for(args, n)
        backend = make_backend(args.backend, args.workers)
        try:
            med, runs, phase = bench_pipeline(n, precision, cfg, backend, protocol,
                                              args.seed, breakdown=args.breakdown)
            workers = getattr(backend, "workers", 1)
        finally:
            backend.close()
        row = (f"{n},{args.precision},{cfg.tilesize},{cfg.colperblock},"
               f"{cfg.splitk},{args.backend},{workers},{med:.6e},{runs}")
        if args.breakdown:
            row += "," + ",".join(format(phase.get(k, 0.0), ".6e")
                                  for k in ("panel", "trailing", "bidiagonal", "diagonal"))
        lines.append(row)
    _write_lines(lines, args.output)
    return 0


def cmd_tune(args) -> int:
    grid = TuneGrid(
        tilesizes=tuple(_parse_int_list(args.tilesizes)),
        colperblocks=tuple(_parse_int_list(args.colperblocks)) if args.colperblocks else None,
        splitks=tuple(_parse_int_list(args.splitks)) if args.splitks else None,
        sizes=tuple(_parse_int_list(args.sizes)),
        precision=args.precision,
    )
    protocol = BenchProtocol(batch=args.batch, min_total=args.min_total)
    backend = make_backend(args.backend, args.workers)
    try:
        rows, argmins, deltas = run_tune(grid, backend, protocol, args.seed)
    finally:
        backend.close()
    lines = ["kind,size,tilesize,colperblock,splitk,median_seconds,is_argmin"]
    for n, cfg, med, _runs in rows:
        best = argmins[n][1] is cfg
        lines.append(f"result,{n},{cfg.tilesize},{cfg.colperblock},{cfg.splitk},"
                     f"{med:.6e},{int(best)}")
    lines.append("kind,size,varied_parameter,value,percent_vs_reference")
    for n, varied, value, pct in deltas:
        lines.append(f"delta,{n},{varied},{value},{pct:.2f}")
    _write_lines(lines, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bandsvd",
                                 description="Singular values via two-stage tiled QR reduction")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("svdvals", help="compute all singular values of a matrix file")
    p.add_argument("input", help="binary matrix file")
    _add_global_flags(p)
    p.set_defaults(func=cmd_svdvals)

    p = sub.add_parser("accuracy", help="max relative error over constructed test matrices")
    _add_global_flags(p)
    p.add_argument("--sizes", default="64,256")
    p.add_argument("--precisions", default="fp64,fp32,fp16")
    p.add_argument("--per-distribution", type=int, default=10, dest="per_distribution")
    p.add_argument("--jobs", type=int, default=1, help="worker processes across matrices")
    p.set_defaults(func=cmd_accuracy)

    p = sub.add_parser("bench", help="timing protocol over the full pipeline")
    _add_global_flags(p)
    p.add_argument("--sizes", default="256")
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--min-total", type=float, default=2.0, dest="min_total")
    p.add_argument("--breakdown", action="store_true",
                   help="report the four-phase split per run")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("tune", help="brute-force hyperparameter sweep")
    _add_global_flags(p)
    p.add_argument("--sizes", default="256")
    p.add_argument("--tilesizes", default="4,8,16,32,64,128")
    p.add_argument("--colperblocks", default=None)
    p.add_argument("--splitks", default=None)
    p.add_argument("--batch", type=int, default=20)
    p.add_argument("--min-total", type=float, default=2.0, dest="min_total")
    p.set_defaults(func=cmd_tune)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"bandsvd: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ValueError, IndexError, OSError) as exc:
        print(f"bandsvd: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
