"""Stage one: reduction of a padded square matrix to upper-band form.

Each sweep k runs an RQ pass (annihilate tile column k below the diagonal)
followed by an LQ pass, which is the identical code applied to the lazy
transpose of the matrix (no transposed copies are ever materialized). The
trailing updates touch only tiles strictly right of the panel column, and
sweeps are strictly ordered, so all concurrent writes within a launch hit
disjoint columns.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, TileRangeError
from .kernels import KernelConfig, geqrt, tsmqr_fused, tsqrt_chain, unmqr
from .matrix import DenseMatrix, MatrixView, TauStore


@dataclass
class BandForm:
    """Upper-band result: bandwidth superdiagonals, reflector storage cleared."""
    matrix: DenseMatrix
    bandwidth: int
    nbtiles: int
    tau: TauStore


def getsmqrt(a: MatrixView, tau: TauStore, k: int, nbtiles: int, cfg: KernelConfig,
             backend, lq: bool = False, timers=None) -> None:
    """Panel factorization plus trailing update for sweep k.

    RQ passes factor the diagonal tile (k, k); LQ passes run on the
    transposed view with the panel head one tile lower, which annihilates
    the original row right of the first superdiagonal block.
    """
    if not 0 <= k < nbtiles:
        raise TileRangeError(f"sweep index {k} out of range for nbtiles={nbtiles}")
    ts = cfg.tilesize
    side = 1 if lq else 0
    top = k + 1 if lq else k
    if top >= nbtiles:
        return
    diag = a.tile(top, k, ts)

    t0 = time.perf_counter() if timers is not None else 0.0
    geqrt(diag, tau.col(k, top, side), cfg, backend)
    if timers is not None:
        timers["panel"] += time.perf_counter() - t0

    ntrail = nbtiles - 1 - k
    if ntrail > 0:
        top_slab = a.block(top * ts, (k + 1) * ts, ts, ntrail * ts)
        t0 = time.perf_counter() if timers is not None else 0.0
        unmqr(diag, tau.col(k, top, side), top_slab, cfg, backend)
        if timers is not None:
            timers["trailing"] += time.perf_counter() - t0

    rows = range(top + 1, nbtiles)
    if not rows:
        return
    v_tiles = [a.tile(l, k, ts) for l in rows]
    tau_cols = [tau.col(k, l, side) for l in rows]
    if cfg.fused:
        t0 = time.perf_counter() if timers is not None else 0.0
        tsqrt_chain(diag, v_tiles, tau_cols, cfg, backend)
        if timers is not None:
            timers["panel"] += time.perf_counter() - t0
        if ntrail > 0:
            body = [a.block(l * ts, (k + 1) * ts, ts, ntrail * ts) for l in rows]
            t0 = time.perf_counter() if timers is not None else 0.0
            tsmqr_fused(top_slab, body, v_tiles, tau_cols, cfg, backend)
            if timers is not None:
                timers["trailing"] += time.perf_counter() - t0
    else:
        for idx, l in enumerate(rows):
            t0 = time.perf_counter() if timers is not None else 0.0
            tsqrt_chain(diag, [v_tiles[idx]], [tau_cols[idx]], cfg, backend)
            if timers is not None:
                timers["panel"] += time.perf_counter() - t0
            if ntrail > 0:
                body = a.block(l * ts, (k + 1) * ts, ts, ntrail * ts)
                t0 = time.perf_counter() if timers is not None else 0.0
                tsmqr_fused(top_slab, [body], [v_tiles[idx]], [tau_cols[idx]], cfg, backend)
                if timers is not None:
                    timers["trailing"] += time.perf_counter() - t0


def banddiag(a: DenseMatrix, tau: TauStore, nbtiles: int, cfg: KernelConfig,
             backend, timers=None) -> BandForm:
    """Reduce a padded square matrix to upper-band form in place.

    Sweeps run RQ then LQ for k < nbtiles-1 and a final RQ at the last
    tile; afterwards the reflector storage outside the band is zeroed
    (vectors would only be needed for singular vectors)."""
    ts = cfg.tilesize
    n = nbtiles * ts
    if a.rows != a.cols or a.rows != n:
        raise ShapeError(f"matrix is {a.rows}x{a.cols}, expected {n}x{n} "
                         f"(nbtiles={nbtiles} tiles of {ts})")
    v = a.view()
    vt = a.t()
    for k in range(nbtiles - 1):
        getsmqrt(v, tau, k, nbtiles, cfg, backend, lq=False, timers=timers)
        getsmqrt(vt, tau, k, nbtiles, cfg, backend, lq=True, timers=timers)
    getsmqrt(v, tau, nbtiles - 1, nbtiles, cfg, backend, lq=False, timers=timers)
    _clear_outside_band(a, ts)
    return BandForm(a, ts, nbtiles, tau)


def _clear_outside_band(a: DenseMatrix, bandwidth: int) -> None:
    arr = a.array
    n = a.rows
    for r in range(n):
        if r > 0:
            arr[r, :r] = 0
        if r + bandwidth + 1 < n:
            arr[r, r + bandwidth + 1:] = 0


def band_structure_ok(band: BandForm) -> bool:
    """Exact structural zero check outside the band."""
    arr = band.matrix.array
    n = band.matrix.rows
    bw = band.bandwidth
    for r in range(n):
        if np.any(arr[r, :r] != 0):
            return False
        if r + bw + 1 < n and np.any(arr[r, r + bw + 1:] != 0):
            return False
    return True
