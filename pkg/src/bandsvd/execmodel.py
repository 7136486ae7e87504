"""Abstract data-parallel execution model and its two backends.

A kernel is a generator function ``kernel(ctx, *args)`` describing the work
of one work-item. Work-items of a group share scratch obtained from
``ctx.local_mem`` and synchronize by suspending with ``yield ctx.barrier()``.
Between two consecutive barriers, a shared location written by one
work-item may not be read or written by another; the reference backend
enforces this.

Both backends run every group with the same lockstep schedule: all
work-items advance phase-by-phase between barriers, in ascending local_id
order within each phase. For fixed inputs and configuration the two
backends are therefore bitwise identical; the parallel backend only
distributes whole groups (which touch disjoint data by kernel contract)
across worker processes.
"""
from __future__ import annotations

import multiprocessing
import os
from dataclasses import dataclass
from multiprocessing import shared_memory

import numpy as np

from .errors import (BarrierDivergenceError, ConfigError, ExecutionModelError,
                     SharedMemoryRaceError)

WORKERS_ENV_VAR = "BANDSVD_WORKERS"

MAX_GROUP_SIZE = 1024

_BARRIER = object()
_DONE = object()


@dataclass(frozen=True)
class LaunchSpec:
    """Grid description: num_groups groups of group_size work-items each,
    with declared shared and per-item private scratch footprints (bytes)."""
    num_groups: int
    group_size: int
    shared_bytes: int = 0
    private_bytes: int = 0


@dataclass
class LaunchStats:
    launches: int = 0
    barriers: int = 0
    shared_traffic: int = 0  # bytes, reference backend only

    def delta_since(self, other: "LaunchStats") -> "LaunchStats":
        return LaunchStats(self.launches - other.launches,
                           self.barriers - other.barriers,
                           self.shared_traffic - other.shared_traffic)

    def copy(self) -> "LaunchStats":
        return LaunchStats(self.launches, self.barriers, self.shared_traffic)


def _validate_spec(spec: LaunchSpec) -> None:
    if spec.num_groups < 1:
        raise ConfigError(f"num_groups must be >= 1, got {spec.num_groups}")
    if spec.group_size < 1:
        raise ConfigError(f"group_size must be >= 1, got {spec.group_size}")
    if spec.group_size > MAX_GROUP_SIZE:
        raise ConfigError(f"group_size {spec.group_size} exceeds the {MAX_GROUP_SIZE} limit")


class _AccessTracker:
    """Per-group log of shared-memory accesses, checked at each barrier.

    Accesses are recorded as (array, item, start, stop, step, is_write)
    tuples; conflicts are only possible in phases containing a write, so
    the elementwise check runs only then.
    """

    __slots__ = ("accesses", "nwrites", "current_item", "kernel_name", "group_id", "phase", "stats")

    def __init__(self, kernel_name, group_id, stats):
        self.accesses = []
        self.nwrites = 0
        self.current_item = 0
        self.kernel_name = kernel_name
        self.group_id = group_id
        self.phase = 0
        self.stats = stats

    def record(self, aid, start, stop, step, itemsize, is_write):
        if stop > start:
            self.stats.shared_traffic += ((stop - start + step - 1) // step) * itemsize
        self.accesses.append((aid, self.current_item, start, stop, step, is_write))
        if is_write:
            self.nwrites += 1

    def end_phase(self):
        if self.nwrites:
            self._check()
        self.accesses.clear()
        self.nwrites = 0
        self.phase += 1

    def _check(self):
        writers = {}
        for acc in self.accesses:
            aid, item, start, stop, step, is_write = acc
            if not is_write:
                continue
            for loc in range(start, stop, step):
                prev = writers.get((aid, loc))
                if prev is not None and prev[0] != item:
                    self._raise(prev[1], acc, loc)
                writers[(aid, loc)] = (item, acc)
        for acc in self.accesses:
            aid, item, start, stop, step, is_write = acc
            if is_write:
                continue
            for loc in range(start, stop, step):
                prev = writers.get((aid, loc))
                if prev is not None and prev[0] != item:
                    self._raise(prev[1], acc, loc)

    def _raise(self, acc_a, acc_b, loc):
        def fmt(acc):
            aid, item, start, stop, step, is_write = acc
            kind = "wrote" if is_write else "read"
            span = f"[{start}:{stop}]" if step == 1 else f"[{start}:{stop}:{step}]"
            return f"work-item {item} {kind} shared array #{aid} {span}"
        raise SharedMemoryRaceError(
            f"kernel {self.kernel_name}, group {self.group_id}, phase {self.phase}: "
            f"conflict at shared location {loc}: {fmt(acc_a)}; {fmt(acc_b)}")


class _SharedProxy:
    """Recording wrapper around a shared scratch array (checked mode).

    Slice reads return read-only views: downstream arithmetic sees the same
    values the fast path sees, and a kernel trying to write shared memory
    through a read faults instead of slipping past the checker.
    """

    __slots__ = ("_arr", "_tracker", "_aid")

    def __init__(self, arr, tracker, aid):
        self._arr = arr
        self._tracker = tracker
        self._aid = aid

    @property
    def shape(self):
        return self._arr.shape

    @property
    def dtype(self):
        return self._arr.dtype

    def __len__(self):
        return len(self._arr)

    def _span(self, idx):
        n = self._arr.shape[0]
        if type(idx) is slice:
            if idx.start is None and idx.stop is None and idx.step is None:
                return 0, n, 1
            return idx.indices(n)
        i = int(idx)
        if i < 0:
            i += n
        return i, i + 1, 1

    def __getitem__(self, idx):
        start, stop, step = self._span(idx)
        self._tracker.record(self._aid, start, stop, step, self._arr.itemsize, False)
        if type(idx) is slice:
            out = self._arr[idx]
            out.flags.writeable = False
            return out
        return self._arr[idx]

    def __setitem__(self, idx, value):
        start, stop, step = self._span(idx)
        self._tracker.record(self._aid, start, stop, step, self._arr.itemsize, True)
        self._arr[idx] = value


class _GroupState:
    """Allocation bookkeeping for one group's execution."""

    __slots__ = ("spec", "checked", "tracker", "shared", "cursors", "private_used")

    def __init__(self, spec, group_size, checked, tracker):
        self.spec = spec
        self.checked = checked
        self.tracker = tracker
        self.shared = []
        self.cursors = [0] * group_size
        self.private_used = [0] * group_size

    def local_alloc(self, item, size, dtype):
        idx = self.cursors[item]
        self.cursors[item] += 1
        if idx < len(self.shared):
            arr, proxy = self.shared[idx]
            if arr.shape[0] != size or arr.dtype != np.dtype(dtype):
                raise ExecutionModelError(
                    f"work-item {item} requested shared allocation #{idx} as "
                    f"({size}, {dtype}), group created it as ({arr.shape[0]}, {arr.dtype})")
            return proxy if self.checked else arr
        arr = np.zeros(size, dtype=dtype)
        if self.checked:
            used = sum(a.nbytes for a, _ in self.shared) + arr.nbytes
            if used > self.spec.shared_bytes:
                raise ExecutionModelError(
                    f"shared allocations ({used} bytes) exceed the declared "
                    f"shared_bytes={self.spec.shared_bytes}")
            proxy = _SharedProxy(arr, self.tracker, idx)
        else:
            proxy = None
        self.shared.append((arr, proxy))
        return proxy if self.checked else arr

    def private_alloc(self, item, size, dtype):
        arr = np.zeros(size, dtype=dtype)
        if self.checked:
            self.private_used[item] += arr.nbytes
            if self.private_used[item] > self.spec.private_bytes:
                raise ExecutionModelError(
                    f"work-item {item} private allocations ({self.private_used[item]} bytes) "
                    f"exceed the declared private_bytes={self.spec.private_bytes}")
        return arr


class KernelContext:
    """Per-work-item handle: ids, scratch allocators, and the barrier token.

    ``local_mem(size, dtype)`` returns workgroup-shared scratch (the same
    array for every work-item of the group, matched by allocation order);
    ``private_mem(size, dtype)`` returns zeroed per-item scratch. Barriers
    are expressed as ``yield ctx.barrier()``.
    """

    __slots__ = ("group_id", "local_id", "_group")

    def __init__(self, group_id, local_id, group):
        self.group_id = group_id
        self.local_id = local_id
        self._group = group

    def barrier(self):
        return _BARRIER

    def local_mem(self, size, dtype):
        return self._group.local_alloc(self.local_id, size, dtype)

    def private_mem(self, size, dtype):
        return self._group.private_alloc(self.local_id, size, dtype)


def _execute_group(kernel, spec, args, group_id, checked, stats):
    name = getattr(kernel, "__name__", repr(kernel))
    tracker = _AccessTracker(name, group_id, stats) if checked else None
    group = _GroupState(spec, spec.group_size, checked, tracker)
    gens = []
    for lid in range(spec.group_size):
        gens.append(kernel(KernelContext(group_id, lid, group), *args))
    n = spec.group_size
    while True:
        ndone = 0
        for lid in range(n):
            if checked:
                tracker.current_item = lid
            try:
                v = next(gens[lid])
            except StopIteration:
                ndone += 1
                continue
            if v is not _BARRIER:
                raise ExecutionModelError(
                    f"kernel {name}, group {group_id}: work-item {lid} yielded "
                    f"{v!r}; barriers must be expressed as 'yield ctx.barrier()'")
        if ndone == n:
            if checked:
                tracker.end_phase()
            return
        if ndone:
            raise BarrierDivergenceError(
                f"kernel {name}, group {group_id}: {ndone} of {n} work-items "
                f"skipped a barrier the others reached")
        if checked:
            tracker.end_phase()
        stats.barriers += 1


class ReferenceBackend:
    """Deterministic lockstep interpreter with full contract checking.

    Groups run serially; within a group, work-items advance between
    barriers in ascending local_id order, so every floating-point
    reduction order is reproducible bit-for-bit across runs.
    """

    checked = True

    def __init__(self, group_order=None):
        self.stats = LaunchStats()
        self._group_order = group_order  # test hook; groups are independent

    def alloc_array(self, size, dtype) -> np.ndarray:
        return np.zeros(size, dtype=dtype)

    def free_array(self, arr) -> None:
        pass

    def launch(self, kernel, spec: LaunchSpec, args) -> LaunchStats:
        _validate_spec(spec)
        before = self.stats.copy()
        order = range(spec.num_groups) if self._group_order is None \
            else self._group_order(spec.num_groups)
        for gid in order:
            _execute_group(kernel, spec, args, gid, True, self.stats)
        self.stats.launches += 1
        return self.stats.delta_since(before)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


@dataclass(frozen=True)
class _ShmRef:
    """Pickled stand-in for an ndarray view into a registered shared segment."""
    name: str
    offset: int
    shape: tuple
    strides: tuple
    dtype: str


def _array_extent(arr):
    addr = arr.__array_interface__["data"][0]
    lo = hi = addr
    for length, stride in zip(arr.shape, arr.strides):
        if length == 0:
            return addr, addr
        if stride >= 0:
            hi += (length - 1) * stride
        else:
            lo += (length - 1) * stride
    return lo, hi + arr.itemsize


def _translate(obj, segments):
    """Map ndarrays onto shared-segment descriptors; None if one is unregistered."""
    if isinstance(obj, np.ndarray):
        lo, hi = _array_extent(obj)
        for base, end, name in segments:
            if base <= lo and hi <= end:
                return _ShmRef(name, lo - base, obj.shape, obj.strides, obj.dtype.str)
        return None
    if isinstance(obj, (list, tuple)):
        out = []
        for item in obj:
            t = _translate(item, segments)
            if t is None:
                return None
            out.append(t)
        return type(obj)(out)
    return obj


_WORKER_SEGMENTS: dict = {}


def _resolve(obj):
    if isinstance(obj, _ShmRef):
        shm = _WORKER_SEGMENTS.get(obj.name)
        if shm is None:
            shm = shared_memory.SharedMemory(name=obj.name)
            _WORKER_SEGMENTS[obj.name] = shm
        return np.ndarray(obj.shape, dtype=np.dtype(obj.dtype), buffer=shm.buf,
                          offset=obj.offset, strides=obj.strides)
    if isinstance(obj, (list, tuple)):
        return type(obj)(_resolve(item) for item in obj)
    return obj


def _worker_run(kernel, spec, trans_args, g0, g1):
    args = _resolve(trans_args)
    stats = LaunchStats()
    for gid in range(g0, g1):
        _execute_group(kernel, spec, args, gid, False, stats)
    return stats.barriers


class ParallelBackend:
    """Distributes groups over worker processes; per-group schedule is the
    reference backend's, so outputs are bitwise identical to it.

    Matrices must be allocated through alloc_array (POSIX shared memory)
    for launches to actually fan out; launches whose arguments reference
    other storage still run correctly, in-process. The default worker
    count comes from the BANDSVD_WORKERS environment variable, else the
    machine's CPU count.
    """

    checked = False

    def __init__(self, workers: int | None = None):
        if workers is None:
            env = os.environ.get(WORKERS_ENV_VAR)
            if env is not None:
                try:
                    workers = int(env)
                except ValueError:
                    raise ConfigError(f"{WORKERS_ENV_VAR}={env!r} is not an integer") from None
            else:
                workers = os.cpu_count() or 1
        if not isinstance(workers, int) or workers < 1:
            raise ConfigError(f"worker count must be a positive integer, got {workers!r}")
        self.workers = workers
        self.stats = LaunchStats()
        self._segments = []      # (base_addr, end_addr, name)
        self._shms = {}          # name -> SharedMemory
        self._pool = None
        self._fallback_launches = 0

    def alloc_array(self, size, dtype) -> np.ndarray:
        dtype = np.dtype(dtype)
        nbytes = max(1, int(size) * dtype.itemsize)
        shm = shared_memory.SharedMemory(create=True, size=nbytes)
        arr = np.ndarray((int(size),), dtype=dtype, buffer=shm.buf)
        arr[:] = 0
        base = arr.__array_interface__["data"][0]
        self._segments.append((base, base + nbytes, shm.name))
        self._shms[shm.name] = shm
        return arr

    def free_array(self, arr) -> None:
        lo, hi = _array_extent(arr)
        for i, (base, end, name) in enumerate(self._segments):
            if base <= lo and hi <= end:
                del self._segments[i]
                shm = self._shms.pop(name)
                shm.close()
                shm.unlink()
                return

    def _ensure_pool(self):
        if self._pool is None:
            try:
                ctx = multiprocessing.get_context("fork")
            except ValueError:
                ctx = multiprocessing.get_context("spawn")
            self._pool = ctx.Pool(processes=self.workers)
        return self._pool

    def launch(self, kernel, spec: LaunchSpec, args) -> LaunchStats:
        _validate_spec(spec)
        before = self.stats.copy()
        trans = None
        if self.workers > 1 and spec.num_groups > 1:
            trans = _translate(args, self._segments)
        if trans is None:
            if self.workers > 1 and spec.num_groups > 1:
                self._fallback_launches += 1
            for gid in range(spec.num_groups):
                _execute_group(kernel, spec, args, gid, False, self.stats)
        else:
            pool = self._ensure_pool()
            nchunks = min(self.workers, spec.num_groups)
            bounds = [spec.num_groups * i // nchunks for i in range(nchunks + 1)]
            tasks = [(kernel, spec, trans, bounds[i], bounds[i + 1]) for i in range(nchunks)]
            for nbarriers in pool.starmap(_worker_run, tasks):
                self.stats.barriers += nbarriers
        self.stats.launches += 1
        return self.stats.delta_since(before)

    def close(self):
        if self._pool is not None:
            self._pool.terminate()
            self._pool.join()
            self._pool = None
        for name, shm in list(self._shms.items()):
            try:
                shm.close()
                shm.unlink()
            except FileNotFoundError:
                pass
        self._shms.clear()
        self._segments.clear()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def launch(kernel, spec: LaunchSpec, args, backend) -> LaunchStats:
    """Run a kernel over the grid described by spec; synchronous at the
    driver level (all kernel writes are visible on return)."""
    return backend.launch(kernel, spec, args)


def run_lockstep(kernel, spec: LaunchSpec, args, backend: ReferenceBackend | None = None) -> None:
    """Execute on the deterministic checked reference backend."""
    (backend or ReferenceBackend()).launch(kernel, spec, args)


def run_parallel(kernel, spec: LaunchSpec, args, worker_count: int) -> None:
    """Execute with groups distributed across worker_count processes."""
    if not isinstance(worker_count, int) or worker_count < 1:
        raise ConfigError(f"worker count must be a positive integer, got {worker_count!r}")
    with ParallelBackend(worker_count) as backend:
        backend.launch(kernel, spec, args)
