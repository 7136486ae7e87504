"""Storage/compute precision model.

fp64 and fp32 compute in their storage type. fp16-storage is storage-only:
matrix buffers hold IEEE half values, every arithmetic operation runs in
float32, and results are rounded back to half exactly when written to
matrix storage. The epsilon used inside kernels is always the compute
type's unit roundoff.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Precision:
    name: str
    storage_dtype: np.dtype
    compute_dtype: np.dtype

    @property
    def storage_width(self) -> int:
        return self.storage_dtype.itemsize

    @property
    def compute_width(self) -> int:
        return self.compute_dtype.itemsize

    @property
    def eps(self) -> float:
        return float(np.finfo(self.compute_dtype).eps)


FP64 = Precision("fp64", np.dtype(np.float64), np.dtype(np.float64))
FP32 = Precision("fp32", np.dtype(np.float32), np.dtype(np.float32))
FP16 = Precision("fp16-storage", np.dtype(np.float16), np.dtype(np.float32))

_BY_NAME = {
    "fp64": FP64,
    "fp32": FP32,
    "fp16": FP16,
    "fp16-storage": FP16,
}

_BY_STORAGE = {p.storage_dtype: p for p in (FP64, FP32, FP16)}


def by_name(name: str) -> Precision:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise ValueError(f"unknown precision {name!r}; expected one of fp64, fp32, fp16") from None


def from_storage_dtype(dtype) -> Precision:
    try:
        return _BY_STORAGE[np.dtype(dtype)]
    except KeyError:
        raise ValueError(f"unsupported element dtype {dtype!r}") from None


def compute_dtype(storage_dtype) -> np.dtype:
    """Dtype all arithmetic runs in for elements stored as `storage_dtype`."""
    return from_storage_dtype(storage_dtype).compute_dtype


def compute_eps(storage_dtype) -> float:
    return from_storage_dtype(storage_dtype).eps
