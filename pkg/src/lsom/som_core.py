"""Single-grid self-organizing map.

A grid is a ``side x side`` array of codebook vectors.  Training follows the
classic Kohonen online rule with an exponentially decaying learning rate and a
truncated Gaussian neighbourhood whose radius shrinks from half the grid side
down to one node.

Distances are always squared Euclidean, summed sequentially over components
by the compiled kernels in ``_kernels``, so the single-input, batched and
training search paths agree bit for bit.  Ties go to the lexicographically
smallest ``(row, col)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import _kernels
from .errors import (
    CoordinateRangeError,
    DegenerateSideError,
    DimensionMismatchError,
    EmptySampleError,
)

BASE_RATE = 0.9
INIT_HIGH = 0.01


class GridCoord(NamedTuple):
    row: int
    col: int


@dataclass
class TrainParams:
    iterations: int
    base_rate: float = BASE_RATE
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}")
        if not 0.0 < self.base_rate <= 1.0:
            raise ValueError(f"base_rate must lie in (0, 1], got {self.base_rate}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class TrainingStats:
    iterations: int
    initial_qe: float
    final_qe: float


@dataclass(eq=False)
class SomGrid:
    """Codebook of shape ``(side, side, dim)``.

    ``channel_mask`` restricts which components take part in distance
    computations; the top layer of a layered model uses it to hide the
    supervisory channels from unlabeled matching.
    """

    vectors: np.ndarray
    channel_mask: np.ndarray | None = field(default=None)

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != v.shape[1] or v.shape[0] < 1 or v.shape[2] < 1:
            raise DimensionMismatchError(f"grid vectors must have shape (side, side, dim), got {v.shape}")
        self.vectors = v
        if self.channel_mask is not None:
            self.channel_mask = _check_mask(self.channel_mask, v.shape[2])

    @property
    def side(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[2]

    @property
    def match_dim(self) -> int:
        """Number of components used when matching."""
        return self.dim if self.channel_mask is None else len(self.channel_mask)

    def copy(self) -> "SomGrid":
        mask = None if self.channel_mask is None else self.channel_mask.copy()
        return SomGrid(self.vectors.copy(), mask)

    def flat(self) -> np.ndarray:
        """All node vectors as a ``(side*side, dim)`` view in row-major order."""
        return self.vectors.reshape(-1, self.dim)

    def match_vectors(self) -> np.ndarray:
        """Node vectors restricted to the matching channels, ``(side*side, match_dim)``."""
        flat = self.flat()
        if self.channel_mask is None:
            return flat
        return np.ascontiguousarray(flat[:, self.channel_mask])

    def __eq__(self, other):
        if not isinstance(other, SomGrid):
            return NotImplemented
        if (self.channel_mask is None) != (other.channel_mask is None):
            return False
        if self.channel_mask is not None and not np.array_equal(self.channel_mask, other.channel_mask):
            return False
        return self.vectors.shape == other.vectors.shape and np.array_equal(self.vectors, other.vectors)


def _check_mask(mask, dim: int) -> np.ndarray:
    m = np.unique(np.asarray(mask, dtype=np.int64))
    if m.size == 0:
        raise DimensionMismatchError("channel_mask must not be empty")
    if m[0] < 0 or m[-1] >= dim:
        raise DimensionMismatchError(f"channel_mask indices must lie in [0, {dim})")
    return m


def new_grid(side: int, dim: int, seed: int = 0) -> SomGrid:
    """Grid with components drawn uniformly from ``[0, 0.01)``."""
    if side < 1 or dim < 1:
        raise ValueError(f"side and dim must be positive, got side={side}, dim={dim}")
    rng = np.random.default_rng(seed)
    return SomGrid(rng.uniform(0.0, INIT_HIGH, size=(side, side, dim)))


def learning_rate(t: int, t_m: int, base_rate: float = BASE_RATE) -> float:
    return base_rate * math.exp(-t / t_m)


def radius(t: int, t_m: int, side: int) -> float:
    """Neighbourhood radius, decaying from ``side/2`` at t=0 to 1 at t=t_m."""
    if side < 2:
        raise DegenerateSideError(f"radius needs a grid side >= 2, got {side}")
    # half**(1 - t/t_m) equals half*exp(-t*log(half)/t_m) but hits both endpoints exactly
    half = 0.5 * side
    return half ** (1.0 - t / t_m)


def _weights(g2: np.ndarray, r_t: float) -> np.ndarray:
    g = np.sqrt(g2)
    return np.where(g < r_t, np.exp(-g2 / (r_t * r_t)), 0.0)


def neighborhood_weight(bmu: GridCoord, node: GridCoord, r_t: float) -> float:
    if r_t <= 0:
        raise ValueError("radius must be positive")
    g2 = float((bmu[0] - node[0]) ** 2 + (bmu[1] - node[1]) ** 2)
    return float(_weights(np.asarray(g2), r_t))


def squared_distances(vectors: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from ``x`` to each row of ``vectors``.

    This is the reference distance every BMU search agrees with exactly.
    """
    V = np.ascontiguousarray(vectors, dtype=np.float64)
    return _kernels.sq_dists(V, np.ascontiguousarray(x, dtype=np.float64))


def _match_input(grid: SomGrid, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatchError(f"input must be a vector, got shape {x.shape}")
    return _batch_inputs(grid, x[None, :])[0]


def _batch_inputs(grid: SomGrid, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatchError(f"batch input must be 2-d, got shape {X.shape}")
    if grid.channel_mask is not None:
        if X.shape[1] == grid.dim:
            return np.ascontiguousarray(X[:, grid.channel_mask])
        if X.shape[1] == len(grid.channel_mask):
            return np.ascontiguousarray(X)
        raise DimensionMismatchError(
            f"input dim {X.shape[1]} matches neither grid dim {grid.dim} "
            f"nor mask size {len(grid.channel_mask)}"
        )
    if X.shape[1] != grid.dim:
        raise DimensionMismatchError(f"input dim {X.shape[1]} != grid dim {grid.dim}")
    return np.ascontiguousarray(X)


_EPS = np.finfo(np.float64).eps


def _screen_tol(dim: int, xx, vv_max: float):
    # twice a conservative bound on the forward error of |x|^2 - 2x.v + |v|^2
    return 16.0 * (dim + 2) * _EPS * (xx + vv_max)


def _screened_bmu(V: np.ndarray, vv: np.ndarray, x: np.ndarray) -> int:
    approx = vv - 2.0 * (V @ x)
    best = approx.min()
    tol = _screen_tol(V.shape[1], float(x @ x), float(vv.max()))
    cand = np.flatnonzero(approx <= best + tol)
    if cand.size == 1:
        return int(cand[0])
    return int(_kernels.nearest_among(V, x, cand))


def bmu_indices(grid: SomGrid, X, chunk: int = 4096) -> np.ndarray:
    """Flat BMU index for every row of ``X``.

    Candidates are screened with the expanded form ``|v|^2 - 2 x.v`` (one
    matrix product per chunk).  Every row whose screen is ambiguous within a
    rounding-error bound is settled with :func:`squared_distances`, so the
    result is the exact argmin of that reference distance.
    """
    Xm = _batch_inputs(grid, X)
    V = grid.match_vectors()
    vv = np.einsum("ij,ij->i", V, V)
    vv_max = float(vv.max())
    out = np.empty(Xm.shape[0], dtype=np.int64)
    for start in range(0, Xm.shape[0], chunk):
        xs = Xm[start:start + chunk]
        approx = vv[None, :] - 2.0 * (xs @ V.T)
        best = approx.min(axis=1)
        tol = _screen_tol(V.shape[1], np.einsum("ij,ij->i", xs, xs), vv_max)
        cand = approx <= (best + tol)[:, None]
        idx = np.argmax(cand, axis=1)
        for row in np.flatnonzero(cand.sum(axis=1) > 1):
            idx[row] = _kernels.nearest_among(V, xs[row], np.flatnonzero(cand[row]))
        out[start:start + chunk] = idx
    return out


def find_bmu(grid: SomGrid, x) -> GridCoord:
    """Grid coordinate of the node closest to ``x`` (over the masked channels, if any)."""
    xm = _match_input(grid, x)
    idx = int(bmu_indices(grid, xm[None, :])[0])
    return GridCoord(*divmod(idx, grid.side))


def match(grid: SomGrid, x) -> np.ndarray:
    """BMU coordinates of ``x`` as a real 2-vector ``(row, col)``."""
    r, c = find_bmu(grid, x)
    return np.array([r, c], dtype=np.float64)


def match_many(grid: SomGrid, X) -> np.ndarray:
    """Batched :func:`match`: ``(n, 2)`` array of BMU coordinates."""
    idx = bmu_indices(grid, X)
    return np.stack(np.divmod(idx, grid.side), axis=1).astype(np.float64)


def inverse_match(grid: SomGrid, coord) -> np.ndarray:
    """Copy of the full node vector at ``coord`` (supervisory channels included)."""
    r, c = (int(coord[0]), int(coord[1]))
    if not (0 <= r < grid.side and 0 <= c < grid.side):
        raise CoordinateRangeError(f"coordinate {(r, c)} outside a {grid.side}x{grid.side} grid")
    return grid.vectors[r, c].copy()


def quantization_error(grid: SomGrid, samples) -> float:
    """Mean Euclidean distance from each sample to its BMU vector."""
    X = _as_matrix(samples)
    if X.shape[0] == 0:
        raise EmptySampleError("quantization_error needs at least one sample")
    idx = bmu_indices(grid, X)
    Xm = np.ascontiguousarray(_batch_inputs(grid, X))
    return float(np.mean(np.sqrt(_kernels.sq_dists_rows(grid.match_vectors(), Xm, idx))))


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return samples.reshape(samples.shape[0], -1) if samples.ndim != 2 else samples
    if len(samples) == 0:
        return np.empty((0, 0))
    return np.stack([np.asarray(samples[i], dtype=np.float64) for i in range(len(samples))])


def _apply_update(grid: SomGrid, norms: np.ndarray, x: np.ndarray, bmu: GridCoord, rate: float, r_t):
    _kernels.update(grid.vectors, norms, x, bmu.row, bmu.col, rate, -1.0 if r_t is None else r_t)


def _check_input(grid: SomGrid, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (grid.dim,):
        raise DimensionMismatchError(f"training input must have shape ({grid.dim},), got {x.shape}")
    return x


def train_step(grid: SomGrid, x, t: int, params: TrainParams) -> SomGrid:
    """Apply one online update in place and return ``grid``."""
    x = _check_input(grid, x)
    if not 0 <= t < params.iterations:
        raise ValueError(f"t={t} outside [0, {params.iterations})")
    bmu = find_bmu(grid, x)
    r_t = radius(t, params.iterations, grid.side) if grid.side >= 2 else None
    norms = np.empty(grid.side * grid.side)
    _apply_update(grid, norms, x, bmu, learning_rate(t, params.iterations, params.base_rate), r_t)
    return grid


def sampling_rng(seed: int) -> np.random.Generator:
    """Generator used for drawing training samples; independent of grid init."""
    return np.random.default_rng([seed, 1])


def train(
    grid: SomGrid,
    samples: Sequence,
    params: TrainParams,
    qe_samples: int | None = 1000,
) -> tuple[SomGrid, TrainingStats]:
    """Train a copy of ``grid`` on ``samples`` for ``params.iterations`` steps.

    ``samples`` may be a 2-d array or any sequence of equal-length vectors
    (for example a lazily evaluated window pool).  Each step draws one sample
    uniformly at random.  The quantization errors in the returned stats are
    measured on a seeded subset of at most ``qe_samples`` samples (``None``
    means all of them).
    """
    n = len(samples)
    if n == 0:
        raise EmptySampleError("training needs at least one sample")
    _check_input(grid, samples[0])
    out = grid.copy()
    rng = sampling_rng(params.seed)
    picks = rng.integers(0, n, size=params.iterations)
    if qe_samples is None or qe_samples >= n:
        qe_idx = np.arange(n)
    else:
        qe_idx = np.sort(rng.choice(n, size=qe_samples, replace=False))
    qe_set = _as_matrix(samples[qe_idx] if isinstance(samples, np.ndarray) else [samples[i] for i in qe_idx])
    initial = quantization_error(out, qe_set)

    V = out.flat()
    norms = np.einsum("ij,ij->i", V, V)
    for t, pick in enumerate(picks):
        x = np.ascontiguousarray(samples[pick], dtype=np.float64)
        if out.channel_mask is None:
            idx = _screened_bmu(V, norms, x)
            bmu = GridCoord(*divmod(idx, out.side))
        else:
            bmu = find_bmu(out, x)
        r_t = radius(t, params.iterations, out.side) if out.side >= 2 else None
        _apply_update(out, norms, x, bmu, learning_rate(t, params.iterations, params.base_rate), r_t)

    final = quantization_error(out, qe_set)
    return out, TrainingStats(params.iterations, initial, final)
