"""Tile kernels: panel factorizations (GEQRT/TSQRT) and trailing updates
(UNMQR/TSMQR), plus split-K panel variants.

Each kernel is a work-item generator against the execution model. Panel
kernels run as a single workgroup (one work-item per tile column, times
SPLITK segments); update kernels run one workgroup per COLPERBLOCK
columns. Chained variants (lists of tile rows in one launch) keep the top
tile row resident in private memory, so a fused chain is bitwise identical
to the row-by-row launches for storage-width compute types.

Reflectors are stored in place: upper triangle R, strictly-lower part the
Householder vectors scaled by 1/x, with the unit pivot implied. The
normalized coefficient tau-hat satisfies H = I - tau*v*v^T and lies in
[0, 2]; columns of norm below 10*eps take the degenerate branch (x = 10*eps,
tau = 2). All per-item arithmetic runs in the compute dtype: serially
ordered sums and elementwise updates, so results are reproducible
bit-for-bit on both backends.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigError, ShapeError
from .execmodel import LaunchSpec, launch
from .matrix import MatrixView
from .precision import compute_dtype


@dataclass(frozen=True)
class KernelConfig:
    """Tunables: TILESIZE (tile edge and panel work-items), COLPERBLOCK
    (columns per update workgroup), SPLITK (work-items per panel column),
    and whether chained launches are fused."""
    tilesize: int = 32
    colperblock: int | None = None
    splitk: int = 1
    fused: bool = True

    def __post_init__(self):
        ts = self.tilesize
        if not isinstance(ts, int) or not 4 <= ts <= 128:
            raise ConfigError(f"tilesize must be an integer in [4, 128], got {ts}")
        if self.colperblock is None:
            object.__setattr__(self, "colperblock", ts)
        cpb = self.colperblock
        if not isinstance(cpb, int) or not 1 <= cpb <= ts or ts % cpb:
            raise ConfigError(f"colperblock must divide tilesize and lie in [1, {ts}], got {cpb}")
        kmax = min(ts, 1024 // ts)
        if not isinstance(self.splitk, int) or not 1 <= self.splitk <= kmax:
            raise ConfigError(
                f"splitk must lie in [1, min(TILESIZE, 1024/TILESIZE)] = [1, {kmax}], "
                f"got {self.splitk}")

    @staticmethod
    def for_size(n: int) -> "KernelConfig":
        """Default tuned for this backend: larger tiles amortize scheduling
        overhead, small matrices keep padding waste down."""
        ts = 4
        while ts < 128 and ts * 8 < n:
            ts *= 2
        return KernelConfig(tilesize=ts)


# ---------------------------------------------------------------------------
# per-item arithmetic (compute-dtype scalars are passed in; numba promotes
# mixed literals, so no numeric literals appear in these bodies)

@njit(cache=True)
def _norm2_tail(v, lo, zero):
    s = zero
    for j in range(lo, v.shape[0]):
        s += v[j] * v[j]
    return s


@njit(cache=True)
def _dot_tail(a, b, lo, zero):
    s = zero
    for j in range(lo, a.shape[0]):
        s += a[j] * b[j]
    return s


@njit(cache=True)
def _dot_seg(seg, col, s0, lo, zero):
    # seg holds rows [s0, s0+len); accumulate over global rows [lo, s0+len)
    s = zero
    for j in range(lo, s0 + seg.shape[0]):
        s += seg[j - s0] * col[j]
    return s


@njit(cache=True)
def _reflector_scalars(piv, sigma, aik, rho, eps10, two):
    """x, tau, and the column update coefficient rho' for one reflector.

    piv is the pivot of the reflected column, sigma the squared norm below
    it, aik the pivot-row element of the column being updated, rho its dot
    product with the stored vector tail.
    """
    zero = eps10 - eps10
    if piv < zero:
        x = piv - np.sqrt(piv * piv + sigma)
    else:
        x = piv + np.sqrt(piv * piv + sigma)
    if abs(x) < eps10:
        x = eps10
        tau = two
        rhop = two * (aik + rho / x)
    else:
        tau = two * x * x / (x * x + sigma)
        rhop = (tau / x) * (aik * x + rho)
    return x, tau, rhop


@njit(cache=True)
def _geqrt_item(ai, ak, i, k, sigma, eps10, two):
    zero = eps10 - eps10
    rho = _dot_tail(ai, ak, k + 1, zero)
    x, tau, rhop = _reflector_scalars(ak[k], sigma, ai[k], rho, eps10, two)
    ai[k] = ai[k] - rhop
    if i > k:
        for j in range(k + 1, ai.shape[0]):
            ai[j] = ai[j] - rhop * (ak[j] / x)
    elif i == k:
        for j in range(k + 1, ai.shape[0]):
            ai[j] = ai[j] / x
    return tau


@njit(cache=True)
def _geqrt_seg_update(seg, col, s0, lo, x, rhop, owner):
    if owner:
        for j in range(lo, s0 + seg.shape[0]):
            seg[j - s0] = seg[j - s0] / x
    else:
        for j in range(lo, s0 + seg.shape[0]):
            seg[j - s0] = seg[j - s0] - rhop * (col[j] / x)


@njit(cache=True)
def _tsqrt_item(ri, bi, bk, i, k, sigma, rkk, eps10, two):
    zero = eps10 - eps10
    rho = _dot_tail(bi, bk, 0, zero)
    x, tau, rhop = _reflector_scalars(rkk, sigma, ri[k], rho, eps10, two)
    ri[k] = ri[k] - rhop
    if i > k:
        for j in range(bi.shape[0]):
            bi[j] = bi[j] - rhop * (bk[j] / x)
    else:
        for j in range(bi.shape[0]):
            bi[j] = bi[j] / x
    return tau


@njit(cache=True)
def _tsqrt_seg_update(seg, col, s0, x, rhop, owner):
    if owner:
        for j in range(seg.shape[0]):
            seg[j] = seg[j] / x
    else:
        for j in range(seg.shape[0]):
            seg[j] = seg[j] - rhop * (col[s0 + j] / x)


@njit(cache=True)
def _unmqr_item(xi, ak, tauk, k, zero):
    s = zero
    for j in range(k + 1, xi.shape[0]):
        s += xi[j] * ak[j]
    rho = tauk * (xi[k] + s)
    xi[k] = xi[k] - rho
    for j in range(k + 1, xi.shape[0]):
        xi[j] = xi[j] - rho * ak[j]


@njit(cache=True)
def _tsmqr_item(xi, yi, ak, tkk, k, zero):
    s = zero
    for j in range(xi.shape[0]):
        s += ak[j] * xi[j]
    s = (s + yi[k]) * tkk
    yi[k] = yi[k] - s
    for j in range(xi.shape[0]):
        xi[j] = xi[j] - s * ak[j]


def _pairwise_sum(parts):
    """Ascending-index pairwise reduction, deterministic for any length."""
    vals = list(parts)
    while len(vals) > 1:
        nxt = [vals[j] + vals[j + 1] for j in range(0, len(vals) - 1, 2)]
        if len(vals) % 2:
            nxt.append(vals[-1])
        vals = nxt
    return vals[0]


# ---------------------------------------------------------------------------
# kernels (work-item generators)

def geqrt_kernel(ctx, a, tau, zero, two, eps10):
    """Tile QR, one work-item per column; the owner of column k broadcasts
    it through shared memory, everyone at or right of k applies the
    reflector, and row k is written back collaboratively each iteration."""
    ts = a.shape[0]
    i = ctx.local_id
    dt = zero.dtype
    ai = ctx.private_mem(ts, dt)
    ai[:] = a[:, i]
    col = ctx.local_mem(ts, dt)
    nrm = ctx.local_mem(1, dt)
    tau_i = zero
    for k in range(ts - 1):
        if i == k:
            col[:] = ai
            nrm[0] = _norm2_tail(ai, k + 1, zero)
        yield ctx.barrier()
        if i >= k:
            ak = col[:]
            t = _geqrt_item(ai, ak, i, k, nrm[0], eps10, two)
            if i == k:
                tau_i = t
        a[k, i] = ai[k]
        yield ctx.barrier()
    a[ts - 1, i] = ai[ts - 1]
    tau[i] = tau_i if i < ts - 1 else zero


def geqrt_splitk_kernel(ctx, a, tau, nsplit, zero, two, eps10):
    """Tile QR with each column divided among nsplit work-items; dot
    products and norms are combined from per-segment partials by
    ascending-index pairwise reduction through shared memory."""
    ts = a.shape[0]
    i = ctx.local_id % ts
    t = ctx.local_id // ts
    s0 = t * ts // nsplit
    s1 = (t + 1) * ts // nsplit
    dt = zero.dtype
    seg = ctx.private_mem(s1 - s0, dt)
    seg[:] = a[s0:s1, i]
    col = ctx.local_mem(ts, dt)
    nparts = ctx.local_mem(nsplit, dt)
    pivots = ctx.local_mem(ts, dt)
    rparts = ctx.local_mem(ts * nsplit, dt)
    tau_i = zero
    for k in range(ts - 1):
        if i == k:
            col[s0:s1] = seg
            lo = k + 1 if k + 1 > s0 else s0
            nparts[t] = _norm2_tail(seg, lo - s0, zero) if lo < s1 else zero
        if s0 <= k < s1:
            pivots[i] = seg[k - s0]
        yield ctx.barrier()
        if i >= k:
            lo = k + 1 if k + 1 > s0 else s0
            if lo < s1:
                rparts[i * nsplit + t] = _dot_seg(seg, col[:], s0, lo, zero)
            else:
                rparts[i * nsplit + t] = zero
        yield ctx.barrier()
        if i >= k:
            sigma = _pairwise_sum(nparts[:])
            rho = _pairwise_sum(rparts[i * nsplit:(i + 1) * nsplit])
            ck = col[:]
            x, tau_k, rhop = _reflector_scalars(ck[k], sigma, pivots[i], rho, eps10, two)
            if i == k:
                tau_i = tau_k
            lo = k + 1 if k + 1 > s0 else s0
            if lo < s1:
                _geqrt_seg_update(seg, ck, s0, lo, x, rhop, i == k)
            if s0 <= k < s1:
                seg[k - s0] = pivots[i] - rhop
        if s0 <= k < s1:
            a[k, i] = seg[k - s0]
        yield ctx.barrier()
    if s0 <= ts - 1 < s1:
        a[ts - 1, i] = seg[ts - 1 - s0]
    if t == 0:
        tau[i] = tau_i if i < ts - 1 else zero


def tsqrt_kernel(ctx, r, bs, taus, zero, two, eps10):
    """Structured QR of the [R; B] stack for each tile row in bs, chained;
    R's columns stay in private memory across the whole chain."""
    ts = r.shape[0]
    i = ctx.local_id
    dt = zero.dtype
    ri = ctx.private_mem(ts, dt)
    bi = ctx.private_mem(ts, dt)
    ri[:] = r[:, i]
    bcol = ctx.local_mem(ts, dt)
    scal = ctx.local_mem(2, dt)
    for b, tau in zip(bs, taus):
        bi[:] = b[:, i]
        tau_i = zero
        for k in range(ts):
            if i == k:
                bcol[:] = bi
                scal[0] = _norm2_tail(bi, 0, zero)
                scal[1] = ri[k]
            yield ctx.barrier()
            if i >= k:
                t = _tsqrt_item(ri, bi, bcol[:], i, k, scal[0], scal[1], eps10, two)
                if i == k:
                    tau_i = t
            yield ctx.barrier()
        b[:, i] = bi
        tau[i] = tau_i
    r[:, i] = ri


def tsqrt_splitk_kernel(ctx, r, bs, taus, nsplit, zero, two, eps10):
    """[R; B] stack QR with B columns divided among nsplit work-items;
    the t=0 item of each column owns the R column."""
    ts = r.shape[0]
    i = ctx.local_id % ts
    t = ctx.local_id // ts
    s0 = t * ts // nsplit
    s1 = (t + 1) * ts // nsplit
    dt = zero.dtype
    ri = ctx.private_mem(ts if t == 0 else 1, dt)
    if t == 0:
        ri[:] = r[:, i]
    seg = ctx.private_mem(s1 - s0, dt)
    bcol = ctx.local_mem(ts, dt)
    nparts = ctx.local_mem(nsplit, dt)
    pivots = ctx.local_mem(ts, dt)
    rparts = ctx.local_mem(ts * nsplit, dt)
    for b, tau in zip(bs, taus):
        seg[:] = b[s0:s1, i]
        tau_i = zero
        for k in range(ts):
            if i == k:
                bcol[s0:s1] = seg
                nparts[t] = _norm2_tail(seg, 0, zero)
            if t == 0:
                pivots[i] = ri[k]
            yield ctx.barrier()
            if i >= k:
                rparts[i * nsplit + t] = _dot_seg(seg, bcol[:], s0, s0, zero)
            yield ctx.barrier()
            if i >= k:
                sigma = _pairwise_sum(nparts[:])
                rho = _pairwise_sum(rparts[i * nsplit:(i + 1) * nsplit])
                rik = pivots[i]
                x, tau_k, rhop = _reflector_scalars(pivots[k], sigma, rik, rho, eps10, two)
                if i == k:
                    tau_i = tau_k
                _tsqrt_seg_update(seg, bcol[:], s0, x, rhop, i == k)
                if t == 0:
                    ri[k] = rik - rhop
            yield ctx.barrier()
        b[s0:s1, i] = seg
        if t == 0:
            tau[i] = tau_i
    if t == 0:
        r[:, i] = ri


def unmqr_kernel(ctx, panel, tau, x, cpb, zero):
    """Apply a geqrt panel's reflectors (Q^T) to cpb columns per group; the
    panel column and tau values are loaded into shared memory
    cooperatively, each work-item keeps its own column in private memory."""
    ts = panel.shape[0]
    i = ctx.local_id
    c = ctx.group_id * cpb + i
    dt = zero.dtype
    xi = ctx.private_mem(ts, dt)
    xi[:] = x[:, c]
    ak = ctx.local_mem(ts, dt)
    tk = ctx.local_mem(ts, dt)
    one_per_item = cpb == ts  # interleaved load degenerates to one element
    if one_per_item:
        tk[i] = tau[i]
    else:
        tk[i::cpb] = tau[i::cpb]
    for k in range(ts - 1):
        if one_per_item:
            ak[i] = panel[i, k]
        else:
            ak[i::cpb] = panel[i::cpb, k]
        yield ctx.barrier()
        _unmqr_item(xi, ak[:], tk[k], k, zero)
        yield ctx.barrier()
    x[:, c] = xi


def tsmqr_kernel(ctx, y, xs, vs, taus, cpb, zero):
    """Apply tsqrt reflector chains to the trailing columns: the top tile
    row Y stays in private memory across all body rows and is written back
    once at the end; each body row X is loaded and written per row."""
    ts = y.shape[0]
    i = ctx.local_id
    c = ctx.group_id * cpb + i
    dt = zero.dtype
    yi = ctx.private_mem(ts, dt)
    xi = ctx.private_mem(ts, dt)
    yi[:] = y[:, c]
    ak = ctx.local_mem(ts, dt)
    tk = ctx.local_mem(ts, dt)
    one_per_item = cpb == ts  # interleaved load degenerates to one element
    for x, v, tau in zip(xs, vs, taus):
        xi[:] = x[:, c]
        if one_per_item:
            tk[i] = tau[i]
        else:
            tk[i::cpb] = tau[i::cpb]
        for k in range(ts):
            if one_per_item:
                ak[i] = v[i, k]
            else:
                ak[i::cpb] = v[i::cpb, k]
            yield ctx.barrier()
            _tsmqr_item(xi, yi, ak[:], tk[k], k, zero)
            yield ctx.barrier()
        x[:, c] = xi
    y[:, c] = yi


# ---------------------------------------------------------------------------
# launchers

def _as_arr(x):
    return x.arr if isinstance(x, MatrixView) else np.asarray(x)


def _consts(storage_dtype):
    dt = compute_dtype(storage_dtype)
    eps = np.finfo(dt).eps
    return dt.type(0), dt.type(2), dt.type(10) * eps


def _check_tile(a, ts, what):
    if a.shape != (ts, ts):
        raise ShapeError(f"{what} has shape {a.shape}, expected ({ts}, {ts})")


def geqrt(tile, tau_out, cfg: KernelConfig, backend) -> None:
    """In-place tile QR: upper triangle R, strictly-lower scaled vectors,
    tau_out[k] the normalized coefficient (0 in the last slot)."""
    a = _as_arr(tile)
    ts = cfg.tilesize
    _check_tile(a, ts, "geqrt tile")
    if tau_out.shape[0] != ts:
        raise ShapeError(f"tau output has length {tau_out.shape[0]}, expected {ts}")
    zero, two, eps10 = _consts(a.dtype)
    isz = zero.dtype.itemsize
    if cfg.splitk == 1:
        spec = LaunchSpec(1, ts, shared_bytes=(ts + 1) * isz, private_bytes=ts * isz)
        launch(geqrt_kernel, spec, (a, tau_out, zero, two, eps10), backend)
    else:
        geqrt_splitk(tile, tau_out, cfg, backend)


def geqrt_splitk(tile, tau_out, cfg: KernelConfig, backend) -> None:
    """Split-K tile QR; identical mathematics to geqrt, K partial sums per
    column combined pairwise (bitwise equal to geqrt at K = 1)."""
    a = _as_arr(tile)
    ts, k = cfg.tilesize, cfg.splitk
    _check_tile(a, ts, "geqrt tile")
    zero, two, eps10 = _consts(a.dtype)
    isz = zero.dtype.itemsize
    segmax = max((t + 1) * ts // k - t * ts // k for t in range(k))
    spec = LaunchSpec(1, k * ts, shared_bytes=(2 * ts + k + ts * k) * isz,
                      private_bytes=segmax * isz)
    launch(geqrt_splitk_kernel, spec, (a, tau_out, k, zero, two, eps10), backend)


def tsqrt(r_tile, b_tile, tau_out, cfg: KernelConfig, backend) -> None:
    """Structured QR of the stacked [R; B]: R's diagonal is updated, B is
    overwritten with the scaled reflector vectors."""
    tsqrt_chain(r_tile, [b_tile], [tau_out], cfg, backend)


def tsqrt_splitk(r_tile, b_tile, tau_out, cfg: KernelConfig, backend) -> None:
    """Split-K stacked QR (bitwise equal to tsqrt at K = 1)."""
    _tsqrt_chain_splitk(r_tile, [b_tile], [tau_out], cfg, backend)


def tsqrt_chain(r_tile, b_tiles, tau_outs, cfg: KernelConfig, backend) -> None:
    """One launch factoring the whole [R; B_l] chain (the fused panel)."""
    if len(b_tiles) != len(tau_outs):
        raise ShapeError(f"{len(b_tiles)} tiles but {len(tau_outs)} tau columns")
    if cfg.splitk > 1:
        _tsqrt_chain_splitk(r_tile, b_tiles, tau_outs, cfg, backend)
        return
    r = _as_arr(r_tile)
    ts = cfg.tilesize
    _check_tile(r, ts, "tsqrt R tile")
    bs = [_as_arr(b) for b in b_tiles]
    for b in bs:
        _check_tile(b, ts, "tsqrt B tile")
    zero, two, eps10 = _consts(r.dtype)
    isz = zero.dtype.itemsize
    spec = LaunchSpec(1, ts, shared_bytes=(ts + 2) * isz, private_bytes=2 * ts * isz)
    launch(tsqrt_kernel, spec, (r, bs, list(tau_outs), zero, two, eps10), backend)


def _tsqrt_chain_splitk(r_tile, b_tiles, tau_outs, cfg: KernelConfig, backend) -> None:
    r = _as_arr(r_tile)
    ts, k = cfg.tilesize, cfg.splitk
    _check_tile(r, ts, "tsqrt R tile")
    bs = [_as_arr(b) for b in b_tiles]
    for b in bs:
        _check_tile(b, ts, "tsqrt B tile")
    zero, two, eps10 = _consts(r.dtype)
    isz = zero.dtype.itemsize
    segmax = max((t + 1) * ts // k - t * ts // k for t in range(k))
    spec = LaunchSpec(1, k * ts, shared_bytes=(2 * ts + k + ts * k) * isz,
                      private_bytes=(ts + segmax) * isz)
    launch(tsqrt_splitk_kernel, spec, (r, bs, list(tau_outs), k, zero, two, eps10), backend)


def unmqr(panel, tau, x_tiles, cfg: KernelConfig, backend) -> None:
    """Apply Q^T from a geqrt panel to the columns of x_tiles in place."""
    pa = _as_arr(panel)
    xa = _as_arr(x_tiles)
    ts, cpb = cfg.tilesize, cfg.colperblock
    _check_tile(pa, ts, "unmqr panel")
    if xa.shape[0] != ts:
        raise ShapeError(f"unmqr target has {xa.shape[0]} rows, expected {ts}")
    ncols = xa.shape[1]
    if ncols == 0 or ncols % cpb:
        raise ShapeError(f"unmqr column count {ncols} is not a positive multiple of {cpb}")
    zero, _, _ = _consts(pa.dtype)
    isz = zero.dtype.itemsize
    spec = LaunchSpec(ncols // cpb, cpb, shared_bytes=2 * ts * isz, private_bytes=ts * isz)
    launch(unmqr_kernel, spec, (pa, tau, xa, cpb, zero), backend)


def tsmqr_fused(top_row, body_rows, v_tiles, taus, cfg: KernelConfig, backend) -> None:
    """Apply the tsqrt chain reflectors to the trailing columns; with one
    body row this is exactly one unfused TSMQR application."""
    if not (len(body_rows) == len(v_tiles) == len(taus)):
        raise ShapeError(
            f"row count mismatch: {len(body_rows)} X rows, {len(v_tiles)} reflector "
            f"tiles, {len(taus)} tau columns")
    ya = _as_arr(top_row)
    xs = [_as_arr(x) for x in body_rows]
    vs = [_as_arr(v) for v in v_tiles]
    ts, cpb = cfg.tilesize, cfg.colperblock
    if ya.shape[0] != ts:
        raise ShapeError(f"tsmqr top row has {ya.shape[0]} rows, expected {ts}")
    for v in vs:
        _check_tile(v, ts, "tsmqr reflector tile")
    ncols = ya.shape[1]
    for x in xs:
        if x.shape != ya.shape:
            raise ShapeError(f"tsmqr body row shape {x.shape} != top row shape {ya.shape}")
    if ncols == 0 or ncols % cpb:
        raise ShapeError(f"tsmqr column count {ncols} is not a positive multiple of {cpb}")
    zero, _, _ = _consts(ya.dtype)
    isz = zero.dtype.itemsize
    spec = LaunchSpec(ncols // cpb, cpb, shared_bytes=2 * ts * isz, private_bytes=2 * ts * isz)
    launch(tsmqr_kernel, spec, (ya, xs, vs, list(taus), cpb, zero), backend)
