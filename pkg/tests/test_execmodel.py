import numpy as np
import pytest

from bandsvd import (BarrierDivergenceError, ConfigError, DenseMatrix,
                     ExecutionModelError, KernelConfig, LaunchSpec,
                     ParallelBackend, ReferenceBackend, SharedMemoryRaceError,
                     launch, run_lockstep, run_parallel, tsmqr_fused)
from bandsvd.kernels import tsmqr_kernel


def fill_kernel(ctx, out):
    out[ctx.group_id * 8 + ctx.local_id] = ctx.local_id
    return
    yield  # generator marker; kernel has no barrier


def tree_reduce_kernel(ctx, values, out):
    n = 16
    i = ctx.local_id
    sh = ctx.local_mem(n, np.float64)
    sh[i] = values[ctx.group_id * n + i]
    yield ctx.barrier()
    stride = n // 2
    while stride > 0:
        if i < stride:
            sh[i] = sh[i] + sh[i + stride]
        yield ctx.barrier()
        stride //= 2
    if i == 0:
        out[ctx.group_id] = sh[0]


def divergent_kernel(ctx, flags):
    sh = ctx.local_mem(4, np.float64)
    sh[ctx.local_id] = 1.0
    if ctx.local_id != 0:
        yield ctx.barrier()
    flags[ctx.local_id] = 1.0


def bare_yield_kernel(ctx, out):
    out[ctx.local_id] = 1.0
    yield


def write_write_race_kernel(ctx, out):
    sh = ctx.local_mem(4, np.float64)
    sh[0] = ctx.local_id
    yield ctx.barrier()
    out[ctx.local_id] = sh[0]


def write_read_race_kernel(ctx, out):
    sh = ctx.local_mem(4, np.float64)
    if ctx.local_id == 0:
        sh[1] = 3.0
    v = sh[1]
    yield ctx.barrier()
    out[ctx.local_id] = v


def over_shared_kernel(ctx):
    ctx.local_mem(64, np.float64)
    return
    yield


def over_private_kernel(ctx):
    ctx.private_mem(64, np.float64)
    return
    yield


def mismatched_alloc_kernel(ctx):
    if ctx.local_id == 0:
        ctx.local_mem(4, np.float64)
    else:
        ctx.local_mem(8, np.float64)
    yield ctx.barrier()


def test_fill_kernel():
    out = np.full(8, -1.0)
    run_lockstep(fill_kernel, LaunchSpec(1, 8), (out,))
    assert np.array_equal(out, np.arange(8.0))


def test_tree_reduction_bitwise():
    # integer-valued doubles: every partial sum is exact, so the tree total
    # must equal the serial total bitwise
    rng = np.random.default_rng(0)
    values = rng.integers(-1000, 1000, size=3 * 16).astype(np.float64)
    out = np.zeros(3)
    be = ReferenceBackend()
    spec = LaunchSpec(3, 16, shared_bytes=16 * 8)
    launch(tree_reduce_kernel, spec, (values, out), be)
    serial = np.array([sum(float(v) for v in values[g * 16:(g + 1) * 16]) for g in range(3)])
    assert np.array_equal(out, serial)


def test_barrier_divergence_detected():
    flags = np.zeros(4)
    with pytest.raises(BarrierDivergenceError, match="group 0"):
        run_lockstep(divergent_kernel, LaunchSpec(1, 4, shared_bytes=32), (flags,))


def test_bare_yield_rejected():
    out = np.zeros(4)
    with pytest.raises(ExecutionModelError, match="barrier"):
        run_lockstep(bare_yield_kernel, LaunchSpec(1, 4), (out,))


def test_write_write_race_detected():
    out = np.zeros(4)
    with pytest.raises(SharedMemoryRaceError) as err:
        run_lockstep(write_write_race_kernel, LaunchSpec(1, 4, shared_bytes=32), (out,))
    msg = str(err.value)
    assert "wrote" in msg and "location 0" in msg


def test_write_read_race_detected():
    out = np.zeros(4)
    with pytest.raises(SharedMemoryRaceError) as err:
        run_lockstep(write_read_race_kernel, LaunchSpec(1, 4, shared_bytes=32), (out,))
    msg = str(err.value)
    assert "wrote" in msg and "read" in msg


def test_shared_budget_enforced():
    with pytest.raises(ExecutionModelError, match="shared"):
        run_lockstep(over_shared_kernel, LaunchSpec(1, 2, shared_bytes=8), ())


def test_private_budget_enforced():
    with pytest.raises(ExecutionModelError, match="private"):
        run_lockstep(over_private_kernel, LaunchSpec(1, 2, private_bytes=8), ())


def test_mismatched_shared_allocation():
    with pytest.raises(ExecutionModelError, match="allocation"):
        run_lockstep(mismatched_alloc_kernel, LaunchSpec(1, 2, shared_bytes=128), ())


def test_group_size_limit():
    be = ReferenceBackend()
    with pytest.raises(ConfigError, match="1024"):
        launch(fill_kernel, LaunchSpec(1, 2048), (np.zeros(2048 * 8),), be)


def test_lockstep_determinism():
    rng = np.random.default_rng(1)
    values = rng.standard_normal(2 * 16)
    out1 = np.zeros(2)
    out2 = np.zeros(2)
    spec = LaunchSpec(2, 16, shared_bytes=16 * 8)
    run_lockstep(tree_reduce_kernel, spec, (values, out1))
    run_lockstep(tree_reduce_kernel, spec, (values, out2))
    assert np.array_equal(out1, out2)


def _tsmqr_inputs(rng, ts, nbrows, ncols_tiles, dtype=np.float64):
    # standalone trailing-update inputs: y slab, body rows, reflector tiles
    cfg = KernelConfig(tilesize=ts)
    y = DenseMatrix.from_array(rng.standard_normal((ts, ncols_tiles * ts)).astype(dtype))
    xs = [DenseMatrix.from_array(rng.standard_normal((ts, ncols_tiles * ts)).astype(dtype))
          for _ in range(nbrows)]
    vs = [DenseMatrix.from_array(rng.standard_normal((ts, ts)).astype(dtype))
          for _ in range(nbrows)]
    taus = [np.abs(rng.standard_normal(ts)) for _ in range(nbrows)]
    return cfg, y, xs, vs, taus


def test_group_order_is_unobservable():
    rng = np.random.default_rng(2)
    cfg, y, xs, vs, taus = _tsmqr_inputs(rng, 8, 2, 4)
    y2 = y.copy()
    xs2 = [x.copy() for x in xs]
    be_fwd = ReferenceBackend()
    be_rev = ReferenceBackend(group_order=lambda n: range(n - 1, -1, -1))
    tsmqr_fused(y.view(), [x.view() for x in xs], [v.view() for v in vs], taus, cfg, be_fwd)
    tsmqr_fused(y2.view(), [x.view() for x in xs2], [v.view() for v in vs], taus, cfg, be_rev)
    assert np.array_equal(y.array, y2.array)
    for x1, x2 in zip(xs, xs2):
        assert np.array_equal(x1.array, x2.array)


def test_parallel_worker_counts_bitwise():
    # 64 independent groups, 1 vs 8 workers, through real shared memory
    rng = np.random.default_rng(3)
    ts, ncols_tiles = 8, 64
    cfg, y, xs, vs, taus = _tsmqr_inputs(rng, ts, 2, ncols_tiles)
    results = []
    for workers in (1, 8):
        with ParallelBackend(workers) as be:
            ym = DenseMatrix.zeros(ts, ncols_tiles * ts, array_factory=be.alloc_array)
            ym.array[:, :] = y.array
            xms = []
            for x in xs:
                xm = DenseMatrix.zeros(ts, ncols_tiles * ts, array_factory=be.alloc_array)
                xm.array[:, :] = x.array
                xms.append(xm)
            tsmqr_fused(ym.view(), [x.view() for x in xms],
                        [v.view() for v in vs], taus, cfg, be)
            results.append((ym.array.copy(), [x.array.copy() for x in xms]))
    assert np.array_equal(results[0][0], results[1][0])
    for a, b in zip(results[0][1], results[1][1]):
        assert np.array_equal(a, b)


def test_worker_count_zero_rejected():
    with pytest.raises(ConfigError):
        run_parallel(fill_kernel, LaunchSpec(1, 8), (np.zeros(8),), 0)
    with pytest.raises(ConfigError):
        ParallelBackend(0)


def test_workers_env_default(monkeypatch):
    monkeypatch.setenv("BANDSVD_WORKERS", "3")
    be = ParallelBackend()
    assert be.workers == 3
    be.close()
    monkeypatch.setenv("BANDSVD_WORKERS", "zebra")
    with pytest.raises(ConfigError):
        ParallelBackend()


def test_stats_monotonic_and_delta():
    be = ReferenceBackend()
    out = np.zeros(8)
    d1 = launch(fill_kernel, LaunchSpec(1, 8), (out,), be)
    assert d1.launches == 1
    values = np.arange(16.0)
    d2 = launch(tree_reduce_kernel, LaunchSpec(1, 16, shared_bytes=128), (values, np.zeros(1)), be)
    assert d2.launches == 1
    assert d2.barriers == 5  # load + four tree levels
    assert be.stats.launches == 2
    assert be.stats.shared_traffic > 0


def test_launch_returns_delta_not_totals():
    be = ReferenceBackend()
    out = np.zeros(8)
    launch(fill_kernel, LaunchSpec(1, 8), (out,), be)
    d = launch(fill_kernel, LaunchSpec(1, 8), (out,), be)
    assert d.launches == 1
