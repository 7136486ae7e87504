"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line per criterion (run with -s to see them as they complete)."""
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from bandsvd import (DenseMatrix, KernelConfig, ParallelBackend,
                     ReferenceBackend, SeededRng, TauStore, banddiag, geqrt,
                     geqrt_splitk, max_relative_error, oracle_svdvals, svdvals,
                     tsmqr_fused, tsqrt, tsqrt_chain, tsqrt_splitk, unmqr)
from bandsvd.bench import accuracy_cell
from _oracles import q_from_geqrt, q_from_tsqrt
from test_bandreduce import fused_launches, unfused_launches

EPS = np.finfo(np.float64).eps
JOBS = min(2, os.cpu_count() or 1)


def _report(num, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE {num} ({name}): {status}{'  [' + detail + ']' if detail else ''}")
    assert ok, f"criterion {num} ({name}) failed: {detail}"


def _gaussian(n, seed):
    return SeededRng(seed, stream=0xACCE).standard_normal((n, n))


def _oracle_gap_task(args):
    n, seed = args
    a = _gaussian(n, seed)
    with ParallelBackend(1) as backend:
        vals = svdvals(DenseMatrix.from_array(a), KernelConfig.for_size(n), backend)
    return max_relative_error(vals, oracle_svdvals(a))


def test_criterion_1_oracle_equivalence():
    sizes = (8, 32, 64, 128, 256)
    tasks = [(n, 1000 + s) for n in sizes for s in range(50)]
    with ProcessPoolExecutor(max_workers=JOBS) as pool:
        errs = list(pool.map(_oracle_gap_task, tasks, chunksize=16))
    worst = max(errs)
    _report(1, "oracle equivalence", worst <= 1e-12,
            f"50 matrices per n in {sizes}, worst rel err {worst:.3e}")


def test_criterion_2_accuracy_table():
    t0 = time.perf_counter()
    cells = {}
    bounds = {}
    for n, bound in ((64, 1e-14), (256, 1e-14), (1024, 5e-14)):
        cells[(n, "fp64")] = accuracy_cell(n, "fp64", seed=2024, jobs=JOBS)
        bounds[(n, "fp64")] = bound
    for n in (64, 256, 1024):
        cells[(n, "fp32")] = accuracy_cell(n, "fp32", seed=2024, jobs=JOBS)
        bounds[(n, "fp32")] = 1e-6
    cells[(256, "fp16")] = accuracy_cell(256, "fp16", seed=2024, jobs=JOBS)
    bounds[(256, "fp16")] = 2e-2
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in cells.items() if v > bounds[k]}
    detail = "; ".join(f"n={k[0]} {k[1]}: {v:.2e} (<= {bounds[k]:.0e})"
                       for k, v in sorted(cells.items(), key=str))
    _report(2, "accuracy table", not bad and elapsed <= 600,
            f"{detail}; elapsed {elapsed:.0f}s (budget 600s)")


def test_criterion_3_kernel_reconstruction():
    worst_fact = 0.0
    worst_orth = 0.0
    for ts in (4, 8, 16, 32):
        cfg = KernelConfig(tilesize=ts)
        be = ParallelBackend(1)
        rng = np.random.default_rng(30 + ts)
        ld = np.longdouble
        for trial in range(100):
            a = rng.standard_normal((ts, ts))
            m = DenseMatrix.from_array(a)
            tau = np.zeros(ts)
            geqrt(m.view(), tau, cfg, be)
            q = q_from_geqrt(m.array, tau, dtype=ld)
            resid = float(np.linalg.norm(q @ np.triu(m.array).astype(ld) - a.astype(ld))
                          / np.linalg.norm(a))
            orth = float(np.linalg.norm(q.T @ q - np.eye(ts, dtype=ld)))
            worst_fact = max(worst_fact, resid / (50 * EPS))
            worst_orth = max(worst_orth, orth / (50 * EPS))

            r_in = np.triu(rng.standard_normal((ts, ts)))
            b_in = rng.standard_normal((ts, ts))
            stack = np.vstack([r_in, b_in]).astype(ld)
            rm, bm = DenseMatrix.from_array(r_in), DenseMatrix.from_array(b_in)
            tau2 = np.zeros(ts)
            tsqrt(rm.view(), bm.view(), tau2, cfg, be)
            q2 = q_from_tsqrt(bm.array, tau2, dtype=ld)
            rebuilt = q2 @ np.vstack([np.triu(rm.array),
                                      np.zeros((ts, ts))]).astype(ld)
            resid2 = float(np.linalg.norm(rebuilt - stack) / np.linalg.norm(stack))
            orth2 = float(np.linalg.norm(q2.T @ q2 - np.eye(2 * ts, dtype=ld)))
            worst_fact = max(worst_fact, resid2 / (50 * EPS))
            worst_orth = max(worst_orth, orth2 / (50 * EPS))
        be.close()
    _report(3, "kernel reconstruction", worst_fact <= 1.0 and worst_orth <= 1.0,
            f"worst ||QR-A||/(50 eps ||A||) = {worst_fact:.2f}, "
            f"worst ||Q'Q-I||/(50 eps) = {worst_orth:.2f}")


def test_criterion_4_fusion_equivalence():
    ok = True
    details = []
    for nbtiles in (2, 4, 8):
        for ts in (8, 16, 32):
            n = nbtiles * ts
            a = _gaussian(n, 4000 + n)
            bands = []
            counts = []
            for fused in (True, False):
                m = DenseMatrix.from_array(a)
                tau = TauStore(ts, nbtiles)
                be = ReferenceBackend()
                banddiag(m, tau, nbtiles, KernelConfig(tilesize=ts, fused=fused), be)
                bands.append(m.array.copy())
                counts.append(be.stats.launches)
            bitwise = np.array_equal(bands[0], bands[1])
            expect = (fused_launches(nbtiles), unfused_launches(nbtiles))
            counted = tuple(counts) == expect
            ok = ok and bitwise and counted
            if not (bitwise and counted):
                details.append(f"nbtiles={nbtiles} ts={ts}: bitwise={bitwise} "
                               f"counts={tuple(counts)} expected={expect}")
    _report(4, "fusion equivalence", ok,
            "; ".join(details) if details else
            "bands bitwise identical; launch counts match closed forms")


def test_criterion_5_config_robustness():
    n, ts = 256, 32
    a = _gaussian(n, 5000)
    base = None
    cpb_ok = True
    for cpb in (1, 2, 4, 8, 16, 32):
        with ParallelBackend(1) as be:
            v = svdvals(DenseMatrix.from_array(a),
                        KernelConfig(tilesize=ts, colperblock=cpb), be)
        if base is None:
            base = v
        elif not np.array_equal(base, v):
            cpb_ok = False
    k_worst = 0.0
    kbase = None
    for k in (1, 2, 4, 8):
        with ParallelBackend(1) as be:
            v = svdvals(DenseMatrix.from_array(a),
                        KernelConfig(tilesize=ts, splitk=k), be)
        if kbase is None:
            kbase = v
        else:
            k_worst = max(k_worst, max_relative_error(v, kbase))
    _report(5, "config robustness", cpb_ok and k_worst <= 1e-13,
            f"CPB sweep bitwise identical: {cpb_ok}; "
            f"split-K worst rel err {k_worst:.3e} (<= 1e-13)")


def test_criterion_6_backend_equivalence():
    ok = True
    details = []
    for n in (128, 512):
        a = _gaussian(n, 6000 + n)
        cfg = KernelConfig.for_size(n)
        ref = svdvals(DenseMatrix.from_array(a), cfg, ReferenceBackend())
        for workers in (1, 2, os.cpu_count() or 1):
            with ParallelBackend(workers) as be:
                par = svdvals(DenseMatrix.from_array(a), cfg, be)
            same = np.array_equal(ref, par)
            ok = ok and same
            if not same:
                details.append(f"n={n} workers={workers}")
    _report(6, "backend equivalence", ok,
            "; ".join(details) if details else
            "reference vs parallel bitwise identical for n in (128, 512)")


def test_criterion_7_degenerate_inputs():
    problems = []

    vals = svdvals(np.zeros((32, 32)), KernelConfig(tilesize=8))
    if not np.all(vals == 0):
        problems.append("zero matrix not exactly zero")

    rng = np.random.default_rng(7000)
    u = rng.standard_normal(48)
    v = rng.standard_normal(48)
    vals = svdvals(np.outer(u, v), KernelConfig(tilesize=16))
    top = np.linalg.norm(u) * np.linalg.norm(v)
    if abs(vals[0] - top) > 100 * EPS * top or np.any(vals[1:] > 100 * EPS * top):
        problems.append("rank-1 values off")

    vals = svdvals(np.eye(32), KernelConfig(tilesize=8))
    if not np.allclose(vals, 1.0, rtol=4 * EPS, atol=0):
        problems.append("identity values off")

    tiny = rng.standard_normal((16, 16)) * (EPS / 10)  # columns under 10*eps
    vals = svdvals(tiny, KernelConfig(tilesize=8))
    if not np.all(np.isfinite(vals)):
        problems.append("tiny-norm input produced NaN/Inf")

    mixed = rng.standard_normal((16, 16))
    mixed[:, 3] = EPS / 100.0
    vals = svdvals(mixed, KernelConfig(tilesize=8))
    if not np.all(np.isfinite(vals)):
        problems.append("mixed tiny column produced NaN/Inf")

    _report(7, "degenerate inputs", not problems, "; ".join(problems))


def test_criterion_8_race_and_barrier_checker():
    # the checked reference backend runs the whole kernel suite on random
    # inputs; any race or divergence raises
    rng = np.random.default_rng(8000)
    failures = []
    for ts in (4, 8, 16, 32, 64, 128):
        try:
            be = ReferenceBackend()
            cfg = KernelConfig(tilesize=ts)
            m = DenseMatrix.from_array(rng.standard_normal((ts, ts)))
            tau = np.zeros(ts)
            geqrt(m.view(), tau, cfg, be)

            kmax = min(ts, 1024 // ts, 8)
            cfg_k = KernelConfig(tilesize=ts, splitk=kmax)
            m2 = DenseMatrix.from_array(rng.standard_normal((ts, ts)))
            geqrt_splitk(m2.view(), np.zeros(ts), cfg_k, be)

            r = DenseMatrix.from_array(np.triu(rng.standard_normal((ts, ts))))
            bs = [DenseMatrix.from_array(rng.standard_normal((ts, ts))) for _ in range(3)]
            taus = [np.zeros(ts) for _ in range(3)]
            tsqrt_chain(r.view(), [b.view() for b in bs], taus, cfg, be)

            r2 = DenseMatrix.from_array(np.triu(rng.standard_normal((ts, ts))))
            b2 = DenseMatrix.from_array(rng.standard_normal((ts, ts)))
            tsqrt_splitk(r2.view(), b2.view(), np.zeros(ts), cfg_k, be)

            x = DenseMatrix.from_array(rng.standard_normal((ts, 4 * ts)))
            unmqr(m.view(), tau, x.view(), cfg, be)

            y = DenseMatrix.from_array(rng.standard_normal((ts, 4 * ts)))
            xs = [DenseMatrix.from_array(rng.standard_normal((ts, 4 * ts)))
                  for _ in range(3)]
            tsmqr_fused(y.view(), [xx.view() for xx in xs],
                        [b.view() for b in bs], taus, cfg, be)

            for cpb in (1, ts // 2, ts):
                cfg_c = KernelConfig(tilesize=ts, colperblock=max(1, cpb))
                x2 = DenseMatrix.from_array(rng.standard_normal((ts, 4 * ts)))
                unmqr(m.view(), tau, x2.view(), cfg_c, be)

            if ts <= 32:  # whole-driver pass, including the transposed sweeps
                n = 4 * ts
                mm = DenseMatrix.from_array(rng.standard_normal((n, n)))
                banddiag(mm, TauStore(ts, 4), 4, cfg, be)
        except Exception as exc:  # any contract violation fails the criterion
            failures.append(f"ts={ts}: {type(exc).__name__}: {exc}")
    _report(8, "race/barrier checker", not failures, "; ".join(failures[:3]))


def _time_pipeline(n, workers, seed):
    a = _gaussian(n, seed)
    with ParallelBackend(workers) as be:
        m = DenseMatrix.from_array(a)
        t0 = time.perf_counter()
        svdvals(m, KernelConfig.for_size(n), be)
        return time.perf_counter() - t0


def test_criterion_9_performance_smoke():
    # warm all kernels/caches at a small size first
    _time_pipeline(256, 1, 9000)
    t1024 = _time_pipeline(1024, 1, 9001)
    t2048 = _time_pipeline(2048, 1, 9002)
    ratio = t2048 / t1024
    ratio_ok = 5.0 <= ratio <= 13.0
    cpus = os.cpu_count() or 1
    if cpus >= 4:
        t2048_par = _time_pipeline(2048, cpus, 9002)
        speedup = t2048 / t2048_par
        speed_ok = speedup >= 1.5
        detail = (f"t(1024)={t1024:.1f}s t(2048)={t2048:.1f}s ratio={ratio:.2f} "
                  f"(in [5, 13]); speedup x{speedup:.2f} at {cpus} workers (>= 1.5)")
        _report(9, "performance smoke", ratio_ok and speed_ok, detail)
    else:
        detail = (f"t(1024)={t1024:.1f}s t(2048)={t2048:.1f}s ratio={ratio:.2f} "
                  f"(in [5, 13]); speedup check skipped: {cpus} < 4 hardware threads")
        _report(9, "performance smoke", ratio_ok, detail)
