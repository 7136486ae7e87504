"""Test matrices with known spectra, the independent value oracle, and the
error metric.

Matrices are built as A = U' diag(sigma) V with U', V independent Haar
orthogonal factors; sigma follows one of three distributions on [0, 1]:
arithmetic (i/n), logarithmic (log-spaced in [1e-6, 1]), or quarter-circle
(density proportional to sqrt(1 - x^2), sampled by accept-reject).

The oracle is one-sided Jacobi: orthogonalize column pairs by plane
rotations until every pairwise inner product is negligible, then read the
column norms. It shares no code with the value pipeline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConvergenceError, DegenerateInputError, ShapeError
from .matrix import DenseMatrix
from .precision import FP64, Precision

SPECTRUM_KINDS = ("arithmetic", "logarithmic", "quarter_circle")


class SeededRng:
    """Counter-based generator (numpy Philox-4x64) keyed on a 64-bit seed
    and a stream tag; identical keys give bit-identical streams on every
    platform."""

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        key = np.array([self.seed % (1 << 64), self.stream % (1 << 64)], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)

    def uniform(self, size):
        return self._gen.random(size)


@dataclass(frozen=True)
class SpectrumSpec:
    """Singular value distribution on [0, 1]."""
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in SPECTRUM_KINDS:
            raise ValueError(f"unknown spectrum kind {self.kind!r}, expected one of {SPECTRUM_KINDS}")
        if self.n < 1:
            raise ShapeError(f"spectrum size must be >= 1, got {self.n}")

    def values(self, rng: SeededRng | None = None) -> np.ndarray:
        """The sigma vector, descending, float64."""
        n = self.n
        if self.kind == "arithmetic":
            return (np.arange(n, 0, -1, dtype=np.float64)) / n
        if self.kind == "logarithmic":
            if n == 1:
                return np.ones(1)
            expo = -6.0 * (n - np.arange(1, n + 1, dtype=np.float64)) / (n - 1)
            return np.sort(10.0 ** expo)[::-1].copy()
        if rng is None:
            raise ValueError("quarter_circle sampling needs an rng")
        out = np.empty(0)
        while out.size < n:
            cand = rng.uniform(4 * n)
            keep = rng.uniform(4 * n) <= np.sqrt(1.0 - cand * cand)
            out = np.concatenate([out, cand[keep]])
        return np.sort(out[:n])[::-1].copy()


def random_orthogonal(n: int, rng: SeededRng) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of an iid standard-normal
    matrix with the R diagonal's signs absorbed into Q (R diagonal made
    nonnegative)."""
    if n < 1:
        raise ShapeError(f"size must be >= 1, got {n}")
    g = rng.standard_normal((n, n))
    q, r = np.linalg.qr(g)
    d = np.sign(np.diag(r))
    d[d == 0] = 1.0
    return q * d


def make_test_matrix(spec: SpectrumSpec, rng: SeededRng,
                     precision: Precision = FP64):
    """(matrix, known values): A = U' diag(sigma) V materialized in the
    requested precision; the comparison target stays the float64 sigma."""
    sigma = spec.values(rng)
    u = random_orthogonal(spec.n, rng)
    v = random_orthogonal(spec.n, rng)
    a = (u * sigma) @ v
    return DenseMatrix.from_array(a, precision), sigma


@njit(cache=True)
def _jacobi_orthogonalize(a, eps, max_sweeps):
    """Cyclic one-sided Jacobi; returns sweeps used, or -1 on no convergence."""
    m = a.shape[0]
    n = a.shape[1]
    sq = np.empty(n)
    for sweep in range(max_sweeps):
        for p in range(n):
            s = 0.0
            for r in range(m):
                s += a[r, p] * a[r, p]
            sq[p] = s
        rotated = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                g = 0.0
                for r in range(m):
                    g += a[r, p] * a[r, q]
                if abs(g) <= eps * np.sqrt(sq[p] * sq[q]):
                    continue
                rotated += 1
                zeta = (sq[q] - sq[p]) / (2.0 * g)
                t = 1.0 / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta < 0.0:
                    t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for r in range(m):
                    ap = a[r, p]
                    aq = a[r, q]
                    a[r, p] = c * ap - s * aq
                    a[r, q] = s * ap + c * aq
                sqp = c * c * sq[p] - 2.0 * c * s * g + s * s * sq[q]
                sqq = s * s * sq[p] + 2.0 * c * s * g + c * c * sq[q]
                sq[p] = sqp
                sq[q] = sqq
        if rotated == 0:
            return sweep + 1
    return -1


def oracle_svdvals(a) -> np.ndarray:
    """Brute-force singular values by one-sided Jacobi (float64, descending).
    Independent of the pipeline; desk-scale only (O(n^3) with a large
    constant)."""
    arr = a.array if isinstance(a, DenseMatrix) else np.asarray(a)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"oracle expects a square matrix, got {arr.shape}")
    if arr.shape[0] > 2048:
        raise ShapeError("oracle is desk-scale only (n <= 2048)")
    work = np.asfortranarray(arr, dtype=np.float64).copy(order="F")
    eps = float(np.finfo(np.float64).eps)
    swept = _jacobi_orthogonalize(work, eps, 30)
    if swept < 0:
        raise ConvergenceError("one-sided Jacobi did not converge in 30 sweeps")
    norms = np.sqrt(np.sum(work * work, axis=0))
    return np.sort(norms)[::-1].copy()


def max_relative_error(computed, reference) -> float:
    """Relative Frobenius-norm error between value vectors."""
    c = np.asarray(computed, dtype=np.float64)
    r = np.asarray(reference, dtype=np.float64)
    if c.shape != r.shape:
        raise ShapeError(f"value vectors differ in length: {c.shape} vs {r.shape}")
    denom = float(np.sqrt(np.sum(r * r)))
    if denom == 0.0:
        raise DegenerateInputError("all-zero reference values")
    return float(np.sqrt(np.sum((c - r) ** 2)) / denom)
