"""Stage two: band form to bidiagonal (serial bulge chasing) and bidiagonal
to singular values (implicit zero-shift QR iteration).

The bulge chase annihilates each entry beyond the first superdiagonal with
a right plane rotation and chases the created bulge down the band with
alternating left/right rotations until it exits. The value iteration is
the Demmel-Kahan scheme: zero-shift sweeps whenever the shift would cost
relative accuracy (or a diagonal entry vanishes), the standard shifted
Golub-Kahan step otherwise, with sweep direction chosen by grading.
Deflation uses |e[i]| <= eps*(|d[i]| + |d[i+1]|).
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .bandreduce import BandForm, banddiag
from .errors import ConvergenceError, ShapeError, ValidationError
from .execmodel import ReferenceBackend
from .kernels import KernelConfig
from .matrix import DenseMatrix, TauStore, pad_to_tiles


@dataclass
class BidiagonalMatrix:
    """Upper-bidiagonal matrix: main diagonal d (length n) and
    superdiagonal e (length n-1); every other entry is structurally zero."""
    d: np.ndarray
    e: np.ndarray

    @property
    def n(self) -> int:
        return self.d.shape[0]


@dataclass(frozen=True)
class GivensRotation:
    """Plane rotation acting on indices (i, j); c*c + s*s == 1 to roundoff."""
    c: float
    s: float
    i: int
    j: int

    def apply_left(self, a: np.ndarray) -> None:
        ti = self.c * a[self.i, :] + self.s * a[self.j, :]
        tj = self.c * a[self.j, :] - self.s * a[self.i, :]
        a[self.i, :] = ti
        a[self.j, :] = tj

    def apply_right(self, a: np.ndarray) -> None:
        ti = self.c * a[:, self.i] + self.s * a[:, self.j]
        tj = self.c * a[:, self.j] - self.s * a[:, self.i]
        a[:, self.i] = ti
        a[:, self.j] = tj


def plane_rotation(f, g):
    """(c, s, r) with c*f + s*g = r and c*g - s*f = 0."""
    if g == 0:
        return 1.0, 0.0, f
    if f == 0:
        return 0.0, 1.0, g
    if abs(f) > abs(g):
        t = g / f
        tt = np.sqrt(1.0 + t * t)
        c = 1.0 / tt
        return c, t * c, f * tt
    t = f / g
    tt = np.sqrt(1.0 + t * t)
    s = 1.0 / tt
    return t * s, s, g * tt


@njit(cache=True)
def _rotg(f, g, zero, one):
    # c*f + s*g = r, c*g - s*f = 0; scaled so f*f + g*g cannot overflow
    if g == zero:
        return one, zero, f
    if f == zero:
        return zero, one, g
    f1 = abs(f)
    g1 = abs(g)
    scale = f1 if f1 > g1 else g1
    fs = f / scale
    gs = g / scale
    dd = scale * np.sqrt(fs * fs + gs * gs)
    c = f1 / dd
    r = dd if f >= zero else -dd
    return c, g / r, r


@njit(cache=True)
def _chase_band(a, bw, zero, one):
    """In-place reduction of an upper-band matrix to upper-bidiagonal."""
    n = a.shape[0]
    for i in range(n - 2):
        jhi = i + bw if i + bw <= n - 1 else n - 1
        for j in range(jhi, i + 1, -1):
            g = a[i, j]
            if g == zero:
                continue
            # right rotation on columns (j-1, j) kills (i, j)
            c, s, _r = _rotg(a[i, j - 1], g, zero, one)
            a[i, j - 1] = _r
            a[i, j] = zero
            rhi = j if j <= n - 1 else n - 1
            for rr in range(i + 1, rhi + 1):
                t1 = a[rr, j - 1]
                t2 = a[rr, j]
                a[rr, j - 1] = c * t1 + s * t2
                a[rr, j] = c * t2 - s * t1
            brow = j
            while True:
                bcol = brow - 1
                g1 = a[brow, bcol]
                if g1 != zero:
                    # left rotation on rows (brow-1, brow) kills the bulge
                    c, s, _r = _rotg(a[brow - 1, bcol], g1, zero, one)
                    a[brow - 1, bcol] = _r
                    a[brow, bcol] = zero
                    chi = brow + bw if brow + bw <= n - 1 else n - 1
                    for cc in range(bcol + 1, chi + 1):
                        t1 = a[brow - 1, cc]
                        t2 = a[brow, cc]
                        a[brow - 1, cc] = c * t1 + s * t2
                        a[brow, cc] = c * t2 - s * t1
                newcol = brow + bw
                if newcol > n - 1:
                    break
                g2 = a[brow - 1, newcol]
                if g2 == zero:
                    break
                # right rotation on columns (newcol-1, newcol) kills the fill
                c, s, _r = _rotg(a[brow - 1, newcol - 1], g2, zero, one)
                a[brow - 1, newcol - 1] = _r
                a[brow - 1, newcol] = zero
                rhi = newcol if newcol <= n - 1 else n - 1
                for rr in range(brow, rhi + 1):
                    t1 = a[rr, newcol - 1]
                    t2 = a[rr, newcol]
                    a[rr, newcol - 1] = c * t1 + s * t2
                    a[rr, newcol] = c * t2 - s * t1
                brow = newcol


@njit(cache=True)
def _las2_min(f, g, h, zero, one, two):
    """Smallest singular value of the 2x2 upper triangular [[f, g], [0, h]]."""
    fa = abs(f)
    ga = abs(g)
    ha = abs(h)
    fhmn = fa if fa < ha else ha
    fhmx = fa if fa > ha else ha
    if fhmn == zero:
        return zero
    if ga < fhmx:
        as_ = one + fhmn / fhmx
        at = (fhmx - fhmn) / fhmx
        au = (ga / fhmx) * (ga / fhmx)
        c = two / (np.sqrt(as_ * as_ + au) + np.sqrt(at * at + au))
        return fhmn * c
    au = fhmx / ga
    if au == zero:
        return fhmn * fhmx / ga
    as_ = one + fhmn / fhmx
    at = (fhmx - fhmn) / fhmx
    t1 = as_ * au
    t2 = at * au
    c = one / (np.sqrt(one + t1 * t1) + np.sqrt(one + t2 * t2))
    return (fhmn * c) * au * two


@njit(cache=True)
def _lasv2_values(f, g, h, eps, zero, one, two):
    """Both singular values of the 2x2 upper triangular [[f, g], [0, h]],
    to full relative precision: (ssmin, ssmax)."""
    half = one / two
    fa = abs(f)
    ha = abs(h)
    ft = f
    ht = h
    if ha > fa:
        ft, ht = ht, ft
        fa, ha = ha, fa
    ga = abs(g)
    if ga == zero:
        return ha, fa
    gasmal = True
    if ga > fa:
        if fa / ga < eps:
            gasmal = False
            ssmax = ga
            if ha > one:
                ssmin = fa / (ga / ha)
            else:
                ssmin = (fa / ga) * ha
            return ssmin, ssmax
    if gasmal:
        dd = fa - ha
        if dd == fa:
            ll = one
        else:
            ll = dd / fa
        mm_ = g / ft
        tt_ = two - ll
        mm2 = mm_ * mm_
        tt2 = tt_ * tt_
        s = np.sqrt(tt2 + mm2)
        if ll == zero:
            r = abs(mm_)
        else:
            r = np.sqrt(ll * ll + mm2)
        a = half * (s + r)
        return ha / a, fa * a
    return zero, zero


@njit(cache=True)
def _bdsqr_values(d, e, eps, tol, thresh, ndt, maxit):
    """Iterate d, e to diagonal form in place; returns sweeps used, or -1
    when the sweep budget is exhausted.

    Deflation follows the relative-accuracy scheme of the bidiagonal QR
    iteration: an absolute floor (thresh, derived from a lower bound on the
    smallest singular value) plus the running-minimum recurrences, with 2x2
    blocks solved in closed form and zero-shift sweeps whenever a shift
    would cost relative accuracy."""
    n = d.shape[0]
    zero = eps - eps
    one = eps / eps
    two = one + one
    ten = two + two + two + two + two
    hndrth = one / (ten * ten)
    if n == 1:
        d[0] = abs(d[0])
        return 0
    iters = 0
    m = n - 1
    oldll = -2
    oldm = -2
    idir = 0
    while m > 0:
        # split at the first negligible superdiagonal below m
        ll = -1
        for lll in range(m - 1, -1, -1):
            if abs(e[lll]) <= thresh:
                ll = lll
                break
        if ll == m - 1:
            e[m - 1] = zero
            m -= 1
            continue
        ll += 1
        # block [ll, m] with every e above thresh
        if m == ll + 1:
            smin2, smax2 = _lasv2_values(d[ll], e[ll], d[m], eps, zero, one, two)
            d[ll] = smax2
            d[m] = smin2
            e[ll] = zero
            m = ll
            if m > 0:
                m -= 1
            continue
        if iters >= maxit:
            return -1

        if ll > oldm or m < oldll:
            idir = 1 if abs(d[ll]) >= abs(d[m]) else 2

        sminl = zero
        if idir == 1:
            if abs(e[m - 1]) <= tol * abs(d[m]):
                e[m - 1] = zero
                continue
            # running lower bound on the block's smallest singular value
            mu = abs(d[ll])
            sminl = mu
            conv = False
            for lll in range(ll, m):
                if abs(e[lll]) <= tol * mu:
                    e[lll] = zero
                    conv = True
                    break
                mu = abs(d[lll + 1]) * (mu / (mu + abs(e[lll])))
                if mu < sminl:
                    sminl = mu
            if conv:
                continue
        else:
            if abs(e[ll]) <= tol * abs(d[ll]):
                e[ll] = zero
                continue
            mu = abs(d[m])
            sminl = mu
            conv = False
            for lll in range(m - 1, ll - 1, -1):
                if abs(e[lll]) <= tol * mu:
                    e[lll] = zero
                    conv = True
                    break
                mu = abs(d[lll]) * (mu / (mu + abs(e[lll])))
                if mu < sminl:
                    sminl = mu
            if conv:
                continue
        oldll = ll
        oldm = m
        iters += 1

        smax = abs(d[m])
        for lll in range(ll, m):
            if abs(d[lll]) > smax:
                smax = abs(d[lll])
            if abs(e[lll]) > smax:
                smax = abs(e[lll])

        shift = zero
        use_zero = True
        if smax > zero and ndt * tol * (sminl / smax) > max(eps, hndrth * tol):
            if idir == 1:
                sll = abs(d[ll])
                shift = _las2_min(d[m - 1], e[m - 1], d[m], zero, one, two)
                dll = d[ll]
            else:
                sll = abs(d[m])
                shift = _las2_min(d[ll], e[ll], d[ll + 1], zero, one, two)
                dll = d[m]
            if shift > zero and sll > zero and dll != zero:
                t = shift / sll
                if t * t >= eps:
                    use_zero = False
        lo = ll
        hi = m
        down = idir == 1

        if use_zero and down:
            cs = one
            oldcs = one
            sn = zero
            oldsn = zero
            for i in range(lo, hi):
                c1, s1, r1 = _rotg(d[i] * cs, e[i], zero, one)
                cs = c1
                sn = s1
                if i > lo:
                    e[i - 1] = oldsn * r1
                c2, s2, r2 = _rotg(oldcs * r1, d[i + 1] * sn, zero, one)
                oldcs = c2
                oldsn = s2
                d[i] = r2
            h = d[hi] * cs
            e[hi - 1] = h * oldsn
            d[hi] = h * oldcs
        elif use_zero:
            cs = one
            oldcs = one
            sn = zero
            oldsn = zero
            for i in range(hi, lo, -1):
                c1, s1, r1 = _rotg(d[i] * cs, e[i - 1], zero, one)
                cs = c1
                sn = s1
                if i < hi:
                    e[i] = oldsn * r1
                c2, s2, r2 = _rotg(oldcs * r1, d[i - 1] * sn, zero, one)
                oldcs = c2
                oldsn = s2
                d[i] = r2
            h = d[lo] * cs
            e[lo] = h * oldsn
            d[lo] = h * oldcs
        elif down:
            f = (abs(d[lo]) - shift) * ((one if d[lo] >= zero else -one) + shift / d[lo])
            g = e[lo]
            for i in range(lo, hi):
                c1, s1, r1 = _rotg(f, g, zero, one)
                if i > lo:
                    e[i - 1] = r1
                f = c1 * d[i] + s1 * e[i]
                e[i] = c1 * e[i] - s1 * d[i]
                g = s1 * d[i + 1]
                d[i + 1] = c1 * d[i + 1]
                c2, s2, r2 = _rotg(f, g, zero, one)
                d[i] = r2
                f = c2 * e[i] + s2 * d[i + 1]
                d[i + 1] = c2 * d[i + 1] - s2 * e[i]
                if i < hi - 1:
                    g = s2 * e[i + 1]
                    e[i + 1] = c2 * e[i + 1]
            e[hi - 1] = f
        else:
            f = (abs(d[hi]) - shift) * ((one if d[hi] >= zero else -one) + shift / d[hi])
            g = e[hi - 1]
            for i in range(hi, lo, -1):
                c1, s1, r1 = _rotg(f, g, zero, one)
                if i < hi:
                    e[i] = r1
                f = c1 * d[i] + s1 * e[i - 1]
                e[i - 1] = c1 * e[i - 1] - s1 * d[i]
                g = s1 * d[i - 1]
                d[i - 1] = c1 * d[i - 1]
                c2, s2, r2 = _rotg(f, g, zero, one)
                d[i] = r2
                f = c2 * e[i - 1] + s2 * d[i - 1]
                d[i - 1] = c2 * d[i - 1] - s2 * e[i - 1]
                if i > lo + 1:
                    g = s2 * e[i - 2]
                    e[i - 2] = c2 * e[i - 2]
            e[lo] = f
        if down:
            if abs(e[hi - 1]) <= thresh:
                e[hi - 1] = zero
        elif abs(e[lo]) <= thresh:
            e[lo] = zero
    for i in range(n):
        d[i] = abs(d[i])
    return iters


def _dense_bidiagonalize(a: np.ndarray):
    """Householder bidiagonalization; fallback for bandwidth >= n."""
    A = a.copy()
    n = A.shape[0]
    for k in range(n):
        x = A[k:, k]
        nx = np.sqrt(np.dot(x, x))
        if nx > 0 and (x.shape[0] > 1):
            v = x.copy()
            v[0] += nx if x[0] >= 0 else -nx
            vv = np.dot(v, v)
            if vv > 0:
                w = (2.0 / vv) * (v @ A[k:, k:])
                A[k:, k:] -= np.outer(v, w)
        if k < n - 2:
            x = A[k, k + 1:]
            nx = np.sqrt(np.dot(x, x))
            if nx > 0 and x.shape[0] > 1:
                v = x.copy()
                v[0] += nx if x[0] >= 0 else -nx
                vv = np.dot(v, v)
                if vv > 0:
                    w = (2.0 / vv) * (A[k:, k + 1:] @ v)
                    A[k:, k + 1:] -= np.outer(w, v)
    d = np.diag(A).copy()
    e = np.diag(A, 1).copy()
    return d, e


def band_to_bidiagonal(band: BandForm) -> BidiagonalMatrix:
    """Chase the band down to the first superdiagonal; singular values are
    preserved (plane rotations are orthogonal)."""
    m = band.matrix
    dt = m.precision.compute_dtype
    arr = np.ascontiguousarray(m.array, dtype=dt)
    n = m.rows
    bw = band.bandwidth
    if n == 1:
        return BidiagonalMatrix(np.abs(arr[0, :1]).astype(dt), np.zeros(0, dt))
    if bw >= n:
        d, e = _dense_bidiagonalize(arr.astype(np.float64))
        return BidiagonalMatrix(d.astype(dt), e.astype(dt))
    zero = dt.type(0)
    one = dt.type(1)
    _chase_band(arr, bw, zero, one)
    d = np.ascontiguousarray(np.diag(arr))
    e = np.ascontiguousarray(np.diag(arr, 1))
    return BidiagonalMatrix(d, e)


def bidiagonal_values(b: BidiagonalMatrix) -> np.ndarray:
    """All n singular values, nonnegative and descending, in the input's
    dtype.

    The iteration itself always runs in float64: d and e are O(n) scalars,
    and rotation-based QR iteration native to float32 loses about a decade
    of accuracy on clustered spectra relative to running wide and rounding
    the final values once.
    """
    n = b.n
    if n < 1:
        raise ShapeError("bidiagonal matrix must have size >= 1")
    out_dtype = b.d.dtype
    d = np.ascontiguousarray(b.d, dtype=np.float64).copy()
    e = np.ascontiguousarray(b.e, dtype=np.float64).copy()
    eps = float(np.finfo(np.float64).eps)
    tol = max(10.0, min(100.0, eps ** -0.125)) * eps
    # lower bound on the smallest singular value (running-minimum recurrence)
    sminoa = mu = abs(float(d[0]))
    for i in range(1, n):
        if mu == 0.0:
            break
        mu = abs(float(d[i])) * (mu / (mu + abs(float(e[i - 1]))))
        sminoa = min(sminoa, mu)
    thresh = max(tol * sminoa / np.sqrt(n), 6.0 * n * n * float(np.finfo(np.float64).tiny))
    maxit = 30 * n * n
    swept = _bdsqr_values(d, e, np.float64(eps), np.float64(tol), np.float64(thresh),
                          np.float64(n), maxit)
    if swept < 0:
        residual = float(np.sum(np.abs(e)))
        raise ConvergenceError(
            f"bidiagonal value iteration exceeded {maxit} sweeps; "
            f"residual superdiagonal mass {residual:.3e}")
    d.sort()
    return d[::-1].astype(out_dtype, copy=True)


def svdvals(a, cfg: KernelConfig | None = None, backend=None, timers=None) -> np.ndarray:
    """All singular values of a square matrix, descending, in its compute
    precision: pad, reduce to band, chase to bidiagonal, iterate to values."""
    m = a if isinstance(a, DenseMatrix) else DenseMatrix.from_array(a)
    if m.rows != m.cols:
        raise ShapeError(f"matrix must be square, got {m.rows}x{m.cols}")
    if m.rows < 1:
        raise ShapeError("matrix must have size >= 1")
    if not np.all(np.isfinite(m.data.astype(np.float64))):
        raise ValidationError("input contains NaN or Inf entries")
    cfg = cfg if cfg is not None else KernelConfig.for_size(m.rows)
    backend = backend if backend is not None else ReferenceBackend()
    factory = backend.alloc_array
    orig_n = m.orig_n

    padded = pad_to_tiles(m, cfg.tilesize)
    nbtiles = padded.rows // cfg.tilesize
    work = padded.copy(array_factory=factory)
    tau = TauStore(cfg.tilesize, nbtiles, m.precision.compute_dtype, array_factory=factory)
    try:
        band = banddiag(work, tau, nbtiles, cfg, backend, timers=timers)
        t0 = time.perf_counter() if timers is not None else 0.0
        bid = band_to_bidiagonal(band)
        if timers is not None:
            timers["bidiagonal"] += time.perf_counter() - t0
            t0 = time.perf_counter()
        vals = bidiagonal_values(bid)
        if timers is not None:
            timers["diagonal"] += time.perf_counter() - t0
    finally:
        backend.free_array(work.data)
        backend.free_array(tau.values)
    return vals[:orig_n]
