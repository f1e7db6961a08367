"""Versioned binary containers for forests and traces.

Everything is little-endian.

Forest container (magic ``BFORGE1\\0``)::

    offset  size            field
    0       8               magic b"BFORGE1\\0"
    8       4               uint32 max_depth D
    12      4               uint32 n_trees m
    16      4               uint32 n_axes p
    20      4*p             uint32 cutpoint count per axis
    ...     8*sum(counts)   float64 cutpoint values, axis by axis
    ...     4*m*2**(D-1)    axis matrix, uint32, row-major
    ...     4*m*2**(D-1)    cutpoint matrix, uint32, row-major
    ...     4*m*2**D        leaf-value matrix, float32, row-major

With 32-bit entries one tree costs ``4 * (2**(D-1) + 2**(D-1) + 2**D) =
2**(D+3)`` bytes of matrix payload.

Trace container (magic ``BFTRACE1``): an 8-byte magic, uint32 version,
uint32 JSON-header length, the JSON header (fit configuration, response
scaling, array shapes, grid cutpoint counts, presence flags), then the
arrays in this order: sigma (float64), yhat_train (float64), yhat_test
(float64, optional), accepted (uint8 0/1), mean_leaves (float64), x_test
(float64, optional), grid cutpoints (float64, axis by axis), and, when
retained, each chain's kept forests as (axis uint32, cutpoint uint32,
leaf_value float32) blocks in chain-major, draw-minor order.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from typing import BinaryIO

import numpy as np

from bforge.grid import CutpointGrid
from bforge.regression import FitConfig, Trace, YScale
from bforge.trees import Forest, heap_size, min_axis_dtype, split_slots

FOREST_MAGIC = b"BFORGE1\0"
TRACE_MAGIC = b"BFTRACE1"
TRACE_VERSION = 1

_U32 = np.dtype("<u4")
_F32 = np.dtype("<f4")
_F64 = np.dtype("<f8")
_U8 = np.dtype("u1")


def _write_array(f: BinaryIO, arr: np.ndarray, dtype: np.dtype) -> None:
    f.write(np.ascontiguousarray(arr, dtype).tobytes())


def _read_array(f: BinaryIO, shape: tuple[int, ...], dtype: np.dtype) -> np.ndarray:
    count = int(np.prod(shape)) if shape else 1
    raw = f.read(count * dtype.itemsize)
    if len(raw) != count * dtype.itemsize:
        raise ValueError("container truncated")
    return np.frombuffer(raw, dtype).reshape(shape).copy()


def save_forest(f: BinaryIO, forest: Forest, grid: CutpointGrid) -> None:
    """Write one forest and its cutpoint grid in the BFORGE1 layout."""
    m = forest.n_trees
    D = forest.max_depth
    p = grid.n_axes
    f.write(FOREST_MAGIC)
    f.write(struct.pack("<III", D, m, p))
    _write_array(f, grid.counts, _U32)
    for cuts in grid.cutpoints:
        _write_array(f, cuts, _F64)
    _write_array(f, forest.axis, _U32)
    _write_array(f, forest.cutpoint, _U32)
    _write_array(f, forest.leaf_value, _F32)


def load_forest(f: BinaryIO) -> tuple[Forest, CutpointGrid]:
    """Read a BFORGE1 container back into a forest and its grid."""
    magic = f.read(8)
    if magic != FOREST_MAGIC:
        raise ValueError(f"bad forest container magic {magic!r}")
    D, m, p = struct.unpack("<III", f.read(12))
    counts = _read_array(f, (p,), _U32)
    cutpoints = [_read_array(f, (int(c),), _F64) for c in counts]
    grid = CutpointGrid(cutpoints)
    half, full = split_slots(D), heap_size(D)
    axis = _read_array(f, (m, half), _U32).astype(min_axis_dtype(p))
    cutpoint = _read_array(f, (m, half), _U32).astype(np.uint8)
    leaf_value = _read_array(f, (m, full), _F32).astype(np.float32)
    return Forest(axis=axis, cutpoint=cutpoint, leaf_value=leaf_value, max_depth=int(D)), grid


def save_trace(path: str, trace: Trace) -> None:
    """Write a trace container to `path`."""
    header = {
        "config": dataclasses.asdict(trace.config),
        "center": trace.yscale.center,
        "scale": trace.yscale.scale,
        "sigma_shape": list(trace.sigma.shape),
        "yhat_train_shape": list(trace.yhat_train.shape),
        "yhat_test_shape": None if trace.yhat_test is None else list(trace.yhat_test.shape),
        "accepted_shape": list(trace.accepted.shape),
        "mean_leaves_shape": list(trace.mean_leaves.shape),
        "x_test_shape": None if trace.x_test is None else list(trace.x_test.shape),
        "grid_counts": [int(c) for c in trace.grid.counts],
        "max_depth": trace.config.max_depth,
        "has_forests": trace.forests is not None,
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(TRACE_MAGIC)
        f.write(struct.pack("<II", TRACE_VERSION, len(blob)))
        f.write(blob)
        _write_array(f, trace.sigma, _F64)
        _write_array(f, trace.yhat_train, _F64)
        if trace.yhat_test is not None:
            _write_array(f, trace.yhat_test, _F64)
        _write_array(f, trace.accepted.astype(np.uint8), _U8)
        _write_array(f, trace.mean_leaves, _F64)
        if trace.x_test is not None:
            _write_array(f, trace.x_test, _F64)
        for cuts in trace.grid.cutpoints:
            _write_array(f, cuts, _F64)
        if trace.forests is not None:
            for chain in trace.forests:
                for forest in chain:
                    _write_array(f, forest.axis, _U32)
                    _write_array(f, forest.cutpoint, _U32)
                    _write_array(f, forest.leaf_value, _F32)


def load_trace(path: str) -> Trace:
    """Read a trace container written by `save_trace`."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != TRACE_MAGIC:
            raise ValueError(f"bad trace container magic {magic!r}")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != TRACE_VERSION:
            raise ValueError(f"unsupported trace container version {version}")
        header = json.loads(f.read(header_len).decode())

        config = FitConfig(**header["config"])
        sigma = _read_array(f, tuple(header["sigma_shape"]), _F64)
        yhat_train = _read_array(f, tuple(header["yhat_train_shape"]), _F64)
        yhat_test = None
        if header["yhat_test_shape"] is not None:
            yhat_test = _read_array(f, tuple(header["yhat_test_shape"]), _F64)
        accepted = _read_array(f, tuple(header["accepted_shape"]), _U8).astype(bool)
        mean_leaves = _read_array(f, tuple(header["mean_leaves_shape"]), _F64)
        x_test = None
        if header["x_test_shape"] is not None:
            x_test = _read_array(f, tuple(header["x_test_shape"]), _F64)
        grid = CutpointGrid([_read_array(f, (c,), _F64) for c in header["grid_counts"]])

        forests = None
        if header["has_forests"]:
            D = header["max_depth"]
            half, full = split_slots(D), heap_size(D)
            m = config.n_trees
            p = grid.n_axes
            forests = []
            n_chains, n_kept = sigma.shape
            for _ in range(n_chains):
                chain = []
                for _ in range(n_kept):
                    axis = _read_array(f, (m, half), _U32).astype(min_axis_dtype(p))
                    cutpoint = _read_array(f, (m, half), _U32).astype(np.uint8)
                    leaf_value = _read_array(f, (m, full), _F32).astype(np.float32)
                    chain.append(Forest(axis, cutpoint, leaf_value, D))
                forests.append(chain)

    return Trace(
        config=config,
        yscale=YScale(center=header["center"], scale=header["scale"]),
        grid=grid,
        sigma=sigma,
        yhat_train=yhat_train,
        yhat_test=yhat_test,
        accepted=accepted,
        mean_leaves=mean_leaves,
        forests=forests,
        x_test=x_test,
    )
