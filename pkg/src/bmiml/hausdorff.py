"""Hausdorff distances between bags of instances: the hot kernel.

dist(A, B) = max{ max_a min_b ||a - b||, max_b min_a ||b - a|| } with the
Euclidean base norm.  Pairwise distance matrices over all bags dominate the
runtime of bag clustering, so a compiled Cython kernel is used when the
extension built; a pure-numpy fallback is selected at import otherwise (or
when the ``BMIML_NO_EXT`` environment variable is set).

All functions operate on packed storage: one C-contiguous (total_instances,
D) float64 array plus an int64 offsets vector of length N+1, where bag i
occupies rows offsets[i]:offsets[i+1].
"""

import os

import numpy as np

from .errors import DimensionError

try:
    if os.environ.get("BMIML_NO_EXT"):
        _ext = None
    else:
        from . import _hausdorff_cy as _ext
except ImportError:
    _ext = None


def active_backend() -> str:
    """Name of the backend selected at import: ``cython`` or ``python``."""
    return "cython" if _ext is not None else "python"


def pack_bags(instance_arrays) -> tuple:
    """Pack a sequence of (n_i, D) arrays into (packed, offsets) storage."""
    arrays = [np.ascontiguousarray(a, dtype=np.float64) for a in instance_arrays]
    if not arrays:
        raise DimensionError("cannot pack an empty bag collection")
    d = arrays[0].shape[1]
    for a in arrays:
        if a.ndim != 2 or a.shape[0] < 1:
            raise DimensionError("every bag needs at least one instance")
        if a.shape[1] != d:
            raise DimensionError(f"instance dimension mismatch: {a.shape[1]} != {d}")
    offsets = np.zeros(len(arrays) + 1, dtype=np.int64)
    np.cumsum([a.shape[0] for a in arrays], out=offsets[1:])
    return np.concatenate(arrays, axis=0), offsets


def _check_pair(a: np.ndarray, b: np.ndarray):
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError("bags must be 2-D instance matrices")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise DimensionError("cannot compute Hausdorff distance with an empty bag")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(f"instance dimension mismatch: {a.shape[1]} != {b.shape[1]}")


def _py_hausdorff(a: np.ndarray, b: np.ndarray) -> float:
    diff = a[:, None, :] - b[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    forward = d2.min(axis=1).max()
    backward = d2.min(axis=0).max()
    # sqrt commutes with max/min, so one sqrt at the end is exact
    return float(np.sqrt(max(forward, backward)))


def _py_pairwise(packed: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    n = len(offsets) - 1
    out = np.zeros((n, n))
    views = [packed[offsets[i] : offsets[i + 1]] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d = _py_hausdorff(views[i], views[j])
            out[i, j] = d
            out[j, i] = d
    return out


def _py_cross(packed_a, offsets_a, packed_b, offsets_b) -> np.ndarray:
    na = len(offsets_a) - 1
    nb = len(offsets_b) - 1
    out = np.zeros((na, nb))
    rows = [packed_a[offsets_a[i] : offsets_a[i + 1]] for i in range(na)]
    cols = [packed_b[offsets_b[j] : offsets_b[j + 1]] for j in range(nb)]
    for i in range(na):
        for j in range(nb):
            out[i, j] = _py_hausdorff(rows[i], cols[j])
    return out


def hausdorff_arrays(a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two instance matrices."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    _check_pair(a, b)
    if _ext is not None:
        return _ext.hausdorff(a, b)
    return _py_hausdorff(a, b)


def pairwise_distances(packed: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Symmetric N x N Hausdorff matrix over packed bags (zero diagonal)."""
    if _ext is not None:
        return _ext.pairwise(packed, offsets)
    return _py_pairwise(packed, offsets)


def cross_distances(packed_a, offsets_a, packed_b, offsets_b) -> np.ndarray:
    """Na x Nb Hausdorff matrix between two packed bag collections."""
    if packed_a.shape[1] != packed_b.shape[1]:
        raise DimensionError(
            f"instance dimension mismatch: {packed_a.shape[1]} != {packed_b.shape[1]}"
        )
    if _ext is not None:
        return _ext.cross(packed_a, offsets_a, packed_b, offsets_b)
    return _py_cross(packed_a, offsets_a, packed_b, offsets_b)
