"""Timing protocol, hyperparameter sweeps, and the accuracy table.

Measurements mirror the batched scheme: 20 runs timed end-to-end as one
batch (a single synchronization point), two discarded warmup batches, then
whole batches until at least 2 seconds of measured time accumulate. The
reported figure is the median of the per-run means across batches.
"""
from __future__ import annotations

import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .execmodel import ParallelBackend, ReferenceBackend
from .kernels import KernelConfig
from .matrix import DenseMatrix
from .precision import Precision, by_name
from .secondstage import svdvals
from .testgen import SeededRng, SpectrumSpec, make_test_matrix, max_relative_error

PHASE_KEYS = ("panel", "trailing", "bidiagonal", "diagonal")
SPECTRUM_KINDS_ORDER = ("arithmetic", "logarithmic", "quarter_circle")


@dataclass(frozen=True)
class BenchProtocol:
    batch: int = 20
    min_total: float = 2.0
    warmup: int = 2


@dataclass
class BenchResult:
    size: int
    precision: str
    config: KernelConfig
    backend: str
    workers: int
    median_seconds: float
    runs: int
    breakdown: dict = field(default_factory=dict)


def _gaussian_matrix(n: int, precision: Precision, seed: int) -> DenseMatrix:
    rng = SeededRng(seed, stream=0xBE7C)
    return DenseMatrix.from_array(rng.standard_normal((n, n)), precision)


def bench_pipeline(n: int, precision: Precision, cfg: KernelConfig, backend,
                   protocol: BenchProtocol = BenchProtocol(), seed: int = 0,
                   breakdown: bool = False) -> tuple[float, int, dict]:
    """(median_seconds, total measured runs, per-phase seconds per run)."""
    m = _gaussian_matrix(n, precision, seed)
    timers = defaultdict(float) if breakdown else None
    means = []
    runs = 0
    measured = 0.0
    batches = 0
    while batches < protocol.warmup or measured < protocol.min_total:
        t0 = time.perf_counter()
        for _ in range(protocol.batch):
            svdvals(m, cfg, backend, timers=timers)
        dt = time.perf_counter() - t0
        batches += 1
        if batches <= protocol.warmup:
            if timers is not None:
                timers.clear()
            continue
        measured += dt
        runs += protocol.batch
        means.append(dt / protocol.batch)
    phase = {}
    if timers is not None and runs:
        phase = {k: timers.get(k, 0.0) / runs for k in PHASE_KEYS}
    return float(np.median(means)), runs, phase


def make_backend(name: str, workers: int | None = None):
    if name == "reference":
        return ReferenceBackend()
    if name == "parallel":
        return ParallelBackend(workers)
    raise ConfigError(f"unknown backend {name!r}; expected reference or parallel")


@dataclass(frozen=True)
class TuneGrid:
    """Admissible (TILESIZE, COLPERBLOCK, SPLITK) triples for a sweep."""
    tilesizes: tuple = (4, 8, 16, 32, 64, 128)
    colperblocks: tuple | None = None   # None: all divisors of each tilesize
    splitks: tuple | None = None        # None: 1..min(ts, 1024//ts)
    sizes: tuple = (256,)
    precision: str = "fp64"

    def configs(self):
        out = []
        for ts in self.tilesizes:
            if not 4 <= ts <= 128:
                raise ConfigError(f"tilesize {ts} outside [4, 128]")
            cpbs = self.colperblocks or tuple(c for c in range(1, ts + 1) if ts % c == 0)
            kmax = min(ts, 1024 // ts)
            ks = self.splitks or tuple(range(1, kmax + 1))
            for cpb in cpbs:
                if not (1 <= cpb <= ts and ts % cpb == 0):
                    continue
                for k in ks:
                    if not 1 <= k <= kmax:
                        continue
                    out.append(KernelConfig(tilesize=ts, colperblock=cpb, splitk=k))
        return out


REFERENCE_TUNE_CONFIG = dict(tilesize=32, colperblock=32, splitk=8)


def run_tune(grid: TuneGrid, backend, protocol: BenchProtocol = BenchProtocol(),
             seed: int = 0):
    """Benchmark every admissible config per size; returns (rows, argmins,
    deltas). Deltas report the percent slowdown of configs that differ from
    the reference config (TS=32, CPB=32, K=8) in exactly one parameter."""
    configs = grid.configs()
    if not configs:
        raise ConfigError("empty admissible tuning grid")
    precision = by_name(grid.precision)
    rows = []
    for n in grid.sizes:
        for cfg in configs:
            med, runs, _ = bench_pipeline(n, precision, cfg, backend, protocol, seed)
            rows.append((n, cfg, med, runs))
    argmins = {}
    for n in grid.sizes:
        cand = [r for r in rows if r[0] == n]
        argmins[n] = min(cand, key=lambda r: r[2])
    deltas = []
    ref = REFERENCE_TUNE_CONFIG
    for n in grid.sizes:
        cand = {(c.tilesize, c.colperblock, c.splitk): med for (sz, c, med, _) in rows if sz == n}
        ref_key = (ref["tilesize"], ref["colperblock"], ref["splitk"])
        if ref_key not in cand:
            continue
        tref = cand[ref_key]
        for (ts, cpb, k), med in cand.items():
            diff = [name for name, a, b in
                    (("tilesize", ts, ref_key[0]), ("colperblock", cpb, ref_key[1]),
                     ("splitk", k, ref_key[2])) if a != b]
            if len(diff) != 1:
                continue
            varied = diff[0]
            value = {"tilesize": ts, "colperblock": cpb, "splitk": k}[varied]
            deltas.append((n, varied, value, 100.0 * (med - tref) / tref))
    return rows, argmins, deltas


# ---------------------------------------------------------------------------
# accuracy table

def _accuracy_task(kind, n, precision_name, seed, stream, tilesize):
    precision = by_name(precision_name)
    cfg = KernelConfig.for_size(n) if tilesize is None else KernelConfig(tilesize=tilesize)
    rng = SeededRng(seed, stream=stream)
    matrix, sigma = make_test_matrix(SpectrumSpec(kind, n), rng, precision)
    # single-worker parallel backend: same lockstep schedule as the
    # reference backend (bitwise-identical values) without its checker
    with ParallelBackend(1) as backend:
        vals = svdvals(matrix, cfg, backend)
    return max_relative_error(vals, sigma)


def accuracy_cell(n: int, precision_name: str, seed: int, per_distribution: int = 10,
                  jobs: int = 1, tilesize: int | None = None) -> float:
    """Max relative error over per_distribution matrices of each of the
    three spectrum kinds (matrices are independent, so they can be farmed
    out to worker processes)."""
    tasks = []
    stream = 0
    for kind in SPECTRUM_KINDS_ORDER:
        for _ in range(per_distribution):
            tasks.append((kind, n, precision_name, seed, stream, tilesize))
            stream += 1
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            errs = list(pool.map(_accuracy_task_star, tasks))
    else:
        errs = [_accuracy_task(*t) for t in tasks]
    return max(errs)


def _accuracy_task_star(t):
    return _accuracy_task(*t)


def accuracy_table(sizes, precision_names, seed: int, per_distribution: int = 10,
                   jobs: int = 1):
    """{(n, precision): max relative error or exception message}."""
    table = {}
    for n in sizes:
        for pname in precision_names:
            try:
                table[(n, pname)] = accuracy_cell(n, pname, seed, per_distribution, jobs)
            except Exception as exc:  # keep filling the rest of the table
                table[(n, pname)] = f"FAILED: {type(exc).__name__}: {exc}"
    return table
