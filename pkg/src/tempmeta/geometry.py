"""Run-length encoded pixel masks and the geometric primitives built on them.

A mask is stored as a list of horizontal runs ``(row, col_start, col_len)`` in
row-major order. Runs are canonical: sorted, non-overlapping, and two runs on
the same row never touch (they would have been merged).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FrameDims",
    "Center",
    "PixelMask",
    "EmptyShiftError",
    "overlap",
    "intersection_size",
    "geometric_center",
    "shift",
    "split_inner_boundary",
    "bounding_extent",
    "bbox_center",
    "round_half_away",
]


class EmptyShiftError(ValueError):
    """Raised when a shifted mask leaves the frame entirely."""


@dataclass(frozen=True)
class FrameDims:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise ValueError(f"frame dims must be positive, got {self.height}x{self.width}")
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class Center:
    """Fractional (row, column) coordinate."""

    v: float
    h: float

    def __sub__(self, other: "Center") -> np.ndarray:
        return np.array([self.v - other.v, self.h - other.h])

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.h])

    def distance(self, other: "Center") -> float:
        return float(np.hypot(self.v - other.v, self.h - other.h))


def _runs_from_dense(arr: np.ndarray) -> np.ndarray:
    a = np.asarray(arr, dtype=bool)
    if a.ndim != 2:
        raise ValueError("dense mask must be 2-D")
    padded = np.zeros((a.shape[0], a.shape[1] + 2), dtype=np.int8)
    padded[:, 1:-1] = a
    d = np.diff(padded, axis=1)
    sr, sc = np.nonzero(d == 1)
    er, ec = np.nonzero(d == -1)
    # nonzero is row-major, so starts and ends pair up in order
    return np.column_stack([sr, sc, ec - sc]).astype(np.int64)


class PixelMask:
    """Binary mask over a fixed frame, stored as canonical runs.

    Parameters
    ----------
    dims : FrameDims
        Frame the mask lives in.
    runs : array_like, shape (n, 3)
        ``(row, col_start, col_len)`` triples. They are validated and
        canonicalised (sorted, adjacent runs merged).
    """

    __slots__ = ("dims", "runs", "_size")

    def __init__(self, dims: FrameDims, runs=None):
        self.dims = dims
        if runs is None or len(runs) == 0:
            r = np.zeros((0, 3), dtype=np.int64)
        else:
            r = np.asarray(runs, dtype=np.int64).reshape(-1, 3)
            r = self._canonical(r, dims)
        r.setflags(write=False)
        self.runs = r
        self._size = int(r[:, 2].sum())

    @staticmethod
    def _canonical(r: np.ndarray, dims: FrameDims) -> np.ndarray:
        if np.any(r[:, 2] <= 0):
            raise ValueError("run lengths must be positive")
        if (
            np.any(r[:, 0] < 0)
            or np.any(r[:, 0] >= dims.height)
            or np.any(r[:, 1] < 0)
            or np.any(r[:, 1] + r[:, 2] > dims.width)
        ):
            raise ValueError("runs exceed frame dims")
        order = np.lexsort((r[:, 1], r[:, 0]))
        r = r[order]
        starts = r[:, 0] * dims.width + r[:, 1]
        ends = starts + r[:, 2]
        if np.any(starts[1:] < ends[:-1]):
            raise ValueError("runs overlap")
        # merge touching runs on the same row
        touching = (starts[1:] == ends[:-1]) & (r[1:, 0] == r[:-1, 0])
        if touching.any():
            new_run = np.concatenate([[True], ~touching])
            group = np.cumsum(new_run) - 1
            lengths = np.bincount(group, weights=r[:, 2]).astype(np.int64)
            r = np.column_stack([r[new_run, 0], r[new_run, 1], lengths])
        return np.ascontiguousarray(r)

    # construction -----------------------------------------------------
    @classmethod
    def from_dense(cls, arr) -> "PixelMask":
        a = np.asarray(arr, dtype=bool)
        return cls(FrameDims(*a.shape), _runs_from_dense(a))

    @classmethod
    def from_pixels(cls, dims: FrameDims, rows, cols) -> "PixelMask":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        dense = np.zeros(dims.shape, dtype=bool)
        dense[rows, cols] = True
        return cls(dims, _runs_from_dense(dense))

    @classmethod
    def empty(cls, dims: FrameDims) -> "PixelMask":
        return cls(dims)

    # views --------------------------------------------------------------
    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.dims.shape, dtype=bool)
        flat = out.reshape(-1)
        for row, c0, n in self.runs:
            s = row * self.dims.width + c0
            flat[s : s + n] = True
        return out

    def pixels(self) -> tuple[np.ndarray, np.ndarray]:
        """Row and column coordinates of every pixel, row-major."""
        if self._size == 0:
            e = np.zeros(0, dtype=np.int64)
            return e, e.copy()
        r = self.runs
        rows = np.repeat(r[:, 0], r[:, 2])
        offs = np.arange(self._size) - np.repeat(np.cumsum(r[:, 2]) - r[:, 2], r[:, 2])
        cols = np.repeat(r[:, 1], r[:, 2]) + offs
        return rows, cols

    def linear_intervals(self) -> tuple[np.ndarray, np.ndarray]:
        starts = self.runs[:, 0] * self.dims.width + self.runs[:, 1]
        return starts, starts + self.runs[:, 2]

    @property
    def size(self) -> int:
        return self._size

    def __len__(self) -> int:
        return self._size

    def __bool__(self) -> bool:
        return self._size > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelMask):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.runs, other.runs)

    def __hash__(self):
        return hash((self.dims, self.runs.tobytes()))

    def __repr__(self) -> str:
        return f"PixelMask({self.dims.height}x{self.dims.width}, size={self._size}, runs={len(self.runs)})"

    def union(self, other: "PixelMask") -> "PixelMask":
        _check_dims(self, other)
        return PixelMask.from_dense(self.to_dense() | other.to_dense())

    def difference(self, other: "PixelMask") -> "PixelMask":
        _check_dims(self, other)
        return PixelMask.from_dense(self.to_dense() & ~other.to_dense())


def _check_dims(a: PixelMask, b: PixelMask) -> None:
    if a.dims != b.dims:
        raise ValueError(f"mask dims differ: {a.dims} vs {b.dims}")


def _covered_before(starts, ends, prefix, x):
    # number of pixels of the interval set that lie strictly below x
    k = np.searchsorted(ends, x, side="right")
    partial = np.zeros_like(x)
    inside = k < len(starts)
    kk = k[inside]
    partial[inside] = np.maximum(0, x[inside] - starts[kk])
    return prefix[k] + partial


def intersection_size(a: PixelMask, b: PixelMask) -> int:
    """``|a ∩ b|`` computed on the run representation."""
    _check_dims(a, b)
    if not a or not b:
        return 0
    if len(a.runs) > len(b.runs):
        a, b = b, a
    bs, be = b.linear_intervals()
    prefix = np.concatenate([[0], np.cumsum(b.runs[:, 2])])
    as_, ae = a.linear_intervals()
    return int(np.sum(_covered_before(bs, be, prefix, ae) - _covered_before(bs, be, prefix, as_)))


def overlap(a: PixelMask, b: PixelMask) -> float:
    """Intersection over union of two masks in the same frame."""
    inter = intersection_size(a, b)
    union = a.size + b.size - inter
    if union == 0:
        return 0.0
    return inter / union


def geometric_center(m: PixelMask) -> Center:
    if not m:
        raise ValueError("geometric center of an empty mask is undefined")
    r = m.runs
    n = r[:, 2]
    # integer sums keep the result identical to a per-pixel mean
    sum_v = int(np.sum(r[:, 0] * n))
    sum_h2 = int(np.sum(n * (2 * r[:, 1] + n - 1)))
    return Center(sum_v / m.size, sum_h2 / (2 * m.size))


def round_half_away(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return (np.sign(x) * np.floor(np.abs(x) + 0.5)).astype(np.int64)


def shift(m: PixelMask, delta) -> PixelMask:
    """Translate a mask by ``delta = (dv, dh)``, rounded per axis, clipping at the border.

    Raises
    ------
    EmptyShiftError
        If no pixel survives the clipping.
    """
    if not m:
        raise ValueError("cannot shift an empty mask")
    dv, dh = (int(v) for v in round_half_away(delta))
    H, W = m.dims.shape
    r = m.runs.copy()
    r[:, 0] += dv
    c0 = r[:, 1] + dh
    c1 = c0 + r[:, 2]
    c0 = np.clip(c0, 0, W)
    c1 = np.clip(c1, 0, W)
    keep = (r[:, 0] >= 0) & (r[:, 0] < H) & (c1 > c0)
    if not keep.any():
        raise EmptyShiftError(f"shift by ({dv}, {dh}) moves the mask out of frame")
    out = np.column_stack([r[keep, 0], c0[keep], (c1 - c0)[keep]])
    return PixelMask(m.dims, out)


def _bbox(m: PixelMask) -> tuple[int, int, int, int]:
    r = m.runs
    return (
        int(r[0, 0]),
        int(r[-1, 0]),
        int(r[:, 1].min()),
        int((r[:, 1] + r[:, 2]).max() - 1),
    )


def bounding_extent(m: PixelMask) -> tuple[int, int]:
    """Height and width of the tight bounding box."""
    if not m:
        raise ValueError("bounding extent of an empty mask is undefined")
    r0, r1, c0, c1 = _bbox(m)
    return r1 - r0 + 1, c1 - c0 + 1


def bbox_center(m: PixelMask) -> Center:
    if not m:
        raise ValueError("bounding box of an empty mask is undefined")
    r0, r1, c0, c1 = _bbox(m)
    return Center((r0 + r1) / 2, (c0 + c1) / 2)


def split_inner_boundary(m: PixelMask) -> tuple[PixelMask, PixelMask]:
    """Split a mask into inner pixels and boundary pixels.

    A pixel is on the boundary when any of its 8 neighbours is outside the
    mask; pixels on the frame border always count as boundary.
    """
    if not m:
        e = PixelMask.empty(m.dims)
        return e, e
    H, W = m.dims.shape
    r0, r1, c0, c1 = _bbox(m)
    # crop with a one-pixel frame of background around the bounding box
    crop = np.zeros((r1 - r0 + 3, c1 - c0 + 3), dtype=bool)
    for row, cs, n in m.runs:
        crop[row - r0 + 1, cs - c0 + 1 : cs - c0 + 1 + n] = True
    inner = crop[1:-1, 1:-1].copy()
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            inner &= crop[1 + dr : crop.shape[0] - 1 + dr, 1 + dc : crop.shape[1] - 1 + dc]
    if r0 == 0:
        inner[0, :] = False
    if r1 == H - 1:
        inner[-1, :] = False
    if c0 == 0:
        inner[:, 0] = False
    if c1 == W - 1:
        inner[:, -1] = False
    rows, cols = np.nonzero(inner)
    if len(rows):
        runs = _runs_from_dense(inner)
        runs[:, 0] += r0
        runs[:, 1] += c0
        inner_mask = PixelMask(m.dims, runs)
    else:
        inner_mask = PixelMask.empty(m.dims)
    bd = crop[1:-1, 1:-1] & ~inner
    runs = _runs_from_dense(bd)
    runs[:, 0] += r0
    runs[:, 1] += c0
    return inner_mask, PixelMask(m.dims, runs)
