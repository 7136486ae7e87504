"""Singular values of dense square matrices via two-stage tiled QR
reduction, with the kernels expressed once against an abstract
data-parallel execution model."""

from .bandreduce import BandForm, banddiag, getsmqrt
from .errors import (BarrierDivergenceError, ConfigError, ConvergenceError,
                     DegenerateInputError, ExecutionModelError, FormatError,
                     ShapeError, SharedMemoryRaceError, TileRangeError,
                     ValidationError)
from .execmodel import (LaunchSpec, LaunchStats, KernelContext, ParallelBackend,
                        ReferenceBackend, launch, run_lockstep, run_parallel)
from .kernels import (KernelConfig, geqrt, geqrt_splitk, tsmqr_fused, tsqrt,
                      tsqrt_chain, tsqrt_splitk, unmqr)
from .matrix import (DenseMatrix, MatrixView, TauStore, pad_to_tiles,
                     read_matrix, tile_view, write_matrix)
from .precision import FP16, FP32, FP64, Precision
from .secondstage import (BidiagonalMatrix, GivensRotation, band_to_bidiagonal,
                          bidiagonal_values, plane_rotation, svdvals)
from .testgen import (SeededRng, SpectrumSpec, make_test_matrix,
                      max_relative_error, oracle_svdvals, random_orthogonal)

__version__ = "0.1.0"

__all__ = [
    "BandForm", "banddiag", "getsmqrt",
    "BarrierDivergenceError", "ConfigError", "ConvergenceError",
    "DegenerateInputError", "ExecutionModelError", "FormatError",
    "ShapeError", "SharedMemoryRaceError", "TileRangeError", "ValidationError",
    "LaunchSpec", "LaunchStats", "KernelContext", "ParallelBackend",
    "ReferenceBackend", "launch", "run_lockstep", "run_parallel",
    "KernelConfig", "geqrt", "geqrt_splitk", "tsmqr_fused", "tsqrt",
    "tsqrt_chain", "tsqrt_splitk", "unmqr",
    "DenseMatrix", "MatrixView", "TauStore", "pad_to_tiles",
    "read_matrix", "tile_view", "write_matrix",
    "FP16", "FP32", "FP64", "Precision",
    "BidiagonalMatrix", "GivensRotation", "band_to_bidiagonal",
    "bidiagonal_values", "plane_rotation", "svdvals",
    "SeededRng", "SpectrumSpec", "make_test_matrix", "max_relative_error",
    "oracle_svdvals", "random_orthogonal",
    "__version__",
]
