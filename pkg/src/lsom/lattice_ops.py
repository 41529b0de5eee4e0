"""Square lattices of vectors, the scan operator and its approximate inverse.

A lattice is a numpy array of shape ``(side, side, dim)``.  A plain 2-d array
is accepted wherever a scalar lattice (``dim == 1``) is expected.

Window layout: a ``p x p`` window is flattened row-major over its cells with
each cell's components kept contiguous, i.e. component ``c`` of window cell
``(a, b)`` lands at index ``(a * p + b) * dim + c``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionMismatchError, GeometryError


class Rounding(enum.Enum):
    NONE = "none"
    ROUND = "round"            # nearest integer, half to even; for coordinate lattices
    CLAMP_UNIT = "clamp_unit"  # clamp into [0, 1]; for pixel lattices


@dataclass(frozen=True)
class WindowGeometry:
    s: int
    p: int
    v: int
    u: int


def output_side(s: int, p: int, v: int) -> WindowGeometry:
    """Geometry of a ``p x p`` stride-``v`` scan over an ``s x s`` lattice."""
    if s < 1 or p < 1 or v < 1:
        raise GeometryError(f"s, p and v must be positive, got s={s}, p={p}, v={v}")
    if p > s:
        raise GeometryError(f"window side {p} exceeds lattice side {s}")
    span = s - p
    if span % v:
        raise GeometryError(f"stride {v} does not divide s - p = {span} (s={s}, p={p})")
    return WindowGeometry(s, p, v, span // v + 1)


def as_lattice(a) -> np.ndarray:
    """View ``a`` as a ``(side, side, dim)`` float lattice."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3 or a.shape[0] != a.shape[1] or a.shape[0] < 1 or a.shape[2] < 1:
        raise DimensionMismatchError(f"lattice must have shape (side, side[, dim]), got {a.shape}")
    return a


def _windows(lattices: np.ndarray, geom: WindowGeometry) -> np.ndarray:
    # lattices: (..., s, s, d) -> (..., u, u, p*p*d)
    n_lead = lattices.ndim - 3
    axes = (n_lead, n_lead + 1)
    view = sliding_window_view(lattices, (geom.p, geom.p), axis=axes)
    view = view[..., ::geom.v, ::geom.v, :, :, :]
    # (..., u, u, d, p, p) -> (..., u, u, p, p, d)
    view = np.moveaxis(view, -3, -1)
    d = lattices.shape[-1]
    return view.reshape(*view.shape[:-3], geom.p * geom.p * d)


def scan(lattice, geom: WindowGeometry) -> np.ndarray:
    """Flatten every window into one vector; returns a ``(u, u, p*p*dim)`` lattice."""
    L = as_lattice(lattice)
    if L.shape[0] != geom.s:
        raise GeometryError(f"lattice side {L.shape[0]} does not match geometry s={geom.s}")
    return np.ascontiguousarray(_windows(L, geom))


def scan_many(lattices: np.ndarray, geom: WindowGeometry) -> np.ndarray:
    """:func:`scan` over a stack ``(n, s, s, dim)``; returns ``(n, u, u, p*p*dim)``."""
    lattices = np.asarray(lattices, dtype=np.float64)
    if lattices.ndim != 4 or lattices.shape[1] != geom.s or lattices.shape[2] != geom.s:
        raise GeometryError(f"expected a stack of {geom.s}x{geom.s} lattices, got shape {lattices.shape}")
    return np.ascontiguousarray(_windows(lattices, geom))


def unflatten_window(vector, p: int, dim: int) -> np.ndarray:
    """Inverse of the window flattening: ``(p*p*dim,) -> (p, p, dim)``."""
    vector = np.asarray(vector)
    if vector.shape != (p * p * dim,):
        raise DimensionMismatchError(f"window vector must have {p * p * dim} components, got {vector.shape}")
    return vector.reshape(p, p, dim)


def inverse_scan(
    windows,
    geom: WindowGeometry,
    rounding: Rounding = Rounding.NONE,
    coord_max: int | None = None,
) -> np.ndarray:
    """Unpack window vectors back onto an ``s x s`` lattice.

    Each output component is the mean of every value written to it; cells no
    window touches (stride larger than the window) are left at 0.  With
    ``Rounding.ROUND`` the means are rounded half-to-even and, when
    ``coord_max`` is given, clamped into ``[0, coord_max]`` so they are valid
    grid coordinates.  ``Rounding.CLAMP_UNIT`` clamps into ``[0, 1]``.
    """
    W = as_lattice(windows)
    if W.shape[0] != geom.u:
        raise GeometryError(f"window lattice side {W.shape[0]} does not match geometry u={geom.u}")
    pp = geom.p * geom.p
    if W.shape[2] % pp:
        raise DimensionMismatchError(
            f"window dim {W.shape[2]} is not a multiple of p^2 = {pp}"
        )
    d = W.shape[2] // pp
    W = W.reshape(geom.u, geom.u, geom.p, geom.p, d)
    out = np.zeros((geom.s, geom.s, d))
    count = np.zeros((geom.s, geom.s, 1))
    end = geom.v * (geom.u - 1) + 1
    # running mean: a cell that only ever receives one value keeps it exactly
    for a in range(geom.p):
        for b in range(geom.p):
            rows, cols = slice(a, a + end, geom.v), slice(b, b + end, geom.v)
            count[rows, cols] += 1.0
            out[rows, cols] += (W[:, :, a, b, :] - out[rows, cols]) / count[rows, cols]
    # cells no window covers (only possible when v > p) stay 0
    if rounding is Rounding.ROUND:
        out = np.rint(out)
        if coord_max is not None:
            out = np.clip(out, 0.0, float(coord_max))
    elif rounding is Rounding.CLAMP_UNIT:
        out = np.clip(out, 0.0, 1.0)
    return out


def coverage(geom: WindowGeometry) -> np.ndarray:
    """Number of windows covering each lattice cell, ``(s, s)`` integers."""
    count = np.zeros((geom.s, geom.s), dtype=np.int64)
    end = geom.v * (geom.u - 1) + 1
    for a in range(geom.p):
        for b in range(geom.p):
            count[a:a + end:geom.v, b:b + end:geom.v] += 1
    return count


class WindowPool:
    """All scan windows of a stack of lattices, addressable as one flat sequence.

    Index ``i`` refers to lattice ``i // u**2``, window ``divmod(i % u**2, u)``.
    Windows are cut on demand, so the pool never materialises
    ``n * u**2 * p**2 * dim`` values.
    """

    def __init__(self, lattices: np.ndarray, geom: WindowGeometry):
        lattices = np.asarray(lattices, dtype=np.float64)
        if lattices.ndim != 4 or lattices.shape[1:3] != (geom.s, geom.s):
            raise GeometryError(f"expected a stack of {geom.s}x{geom.s} lattices, got shape {lattices.shape}")
        self.lattices = lattices
        self.geom = geom
        self.dim = geom.p * geom.p * lattices.shape[3]
        self._per = geom.u * geom.u

    def __len__(self) -> int:
        return self.lattices.shape[0] * self._per

    def __getitem__(self, i) -> np.ndarray:
        i = int(i)
        if not 0 <= i < len(self):
            raise IndexError(i)
        n, w = divmod(i, self._per)
        m, k = divmod(w, self.geom.u)
        r, c, p = m * self.geom.v, k * self.geom.v, self.geom.p
        return self.lattices[n, r:r + p, c:c + p, :].reshape(self.dim)
