"""Layered SOM: a stack of scan + match layers trained bottom-up.

Layer ``i`` scans its input lattice with ``p x p`` windows at stride ``v`` and
replaces every window by the ``(row, col)`` of its best match on a ``k x k``
grid.  The lattice shrinks layer by layer until the top layer sees a single
window per image.  The top grid is trained with one supervisory channel per
class appended to each feature; afterwards those channels label the nodes and
are masked out of matching.
"""
from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import EmptySampleError, GeometryError, LabelRangeError, LsomError
from .lattice_ops import Rounding, WindowGeometry, WindowPool, inverse_scan, output_side, scan_many
from .som_core import (
    BASE_RATE,
    GridCoord,
    SomGrid,
    TrainingStats,
    TrainParams,
    bmu_indices,
    inverse_match,
    new_grid,
    train,
)

if TYPE_CHECKING:
    from .dataset_io import LabeledDataset

log = logging.getLogger(__name__)


class SpecError(LsomError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    p: int
    v: int
    k: int

    def __post_init__(self):
        if min(self.p, self.v, self.k) < 1:
            raise SpecError(f"layer parameters must be positive, got {self}")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Layer triples ``(p, v, k)`` plus the training hyperparameters.

    ``iterations``, ``base_rate`` and ``seed`` apply to every layer unless
    ``layer_train`` supplies a per-layer override.  ``sup_scale=None`` picks
    the default supervisory magnitude (see :meth:`resolved_sup_scale`).
    """

    layers: tuple[LayerSpec, ...]
    input_side: int = 28
    num_classes: int = 10
    sup_scale: float | None = None
    iterations: int = 10000
    base_rate: float = BASE_RATE
    seed: int = 0
    layer_train: tuple[TrainParams, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(
            lay if isinstance(lay, LayerSpec) else LayerSpec(*lay) for lay in self.layers
        ))
        if self.layer_train is not None:
            object.__setattr__(self, "layer_train", tuple(self.layer_train))
            if len(self.layer_train) != len(self.layers):
                raise SpecError("layer_train needs one entry per layer")

    @classmethod
    def from_notation(cls, text: str, **kwargs) -> "ArchitectureSpec":
        return cls(parse_architecture(text), **kwargs)

    def notation(self) -> str:
        return "(" + ",".join(f"({l.p},{l.v},{l.k})" for l in self.layers) + ")"

    def train_params(self, i: int) -> TrainParams:
        if self.layer_train is not None:
            return self.layer_train[i]
        return TrainParams(self.iterations, self.base_rate, self.seed)

    def resolved_sup_scale(self) -> float:
        """Supervisory magnitude; defaults to the side of the grid feeding the top layer.

        That makes one label channel comparable to one coordinate channel.  A
        single-layer model sees raw pixels in [0, 1], so its default is 1.
        """
        if self.sup_scale is not None:
            return float(self.sup_scale)
        if len(self.layers) == 1:
            return 1.0
        return float(self.layers[-2].k)


_TRIPLE = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*,\s*(\d+)\s*\)")


def parse_architecture(text: str) -> tuple[LayerSpec, ...]:
    """Parse ``((p0,v0,k0),(p1,v1,k1),...)``; a bare single triple is accepted too."""
    triples = _TRIPLE.findall(text)
    leftover = _TRIPLE.sub("", text).replace(",", "").replace("(", "").replace(")", "").strip()
    if not triples or leftover:
        raise SpecError(f"cannot parse architecture {text!r}")
    return tuple(LayerSpec(int(p), int(v), int(k)) for p, v, k in triples)


def validate_spec(spec: ArchitectureSpec) -> list[WindowGeometry]:
    """Geometry of every layer; the chain must end in a 1x1 lattice."""
    if not spec.layers:
        raise SpecError("an architecture needs at least one layer")
    if spec.num_classes < 1 or spec.input_side < 1:
        raise SpecError("input_side and num_classes must be positive")
    chain = []
    s = spec.input_side
    for i, layer in enumerate(spec.layers):
        try:
            geom = output_side(s, layer.p, layer.v)
        except GeometryError as exc:
            raise GeometryError(f"layer {i}: {exc}") from None
        chain.append(geom)
        s = geom.u
    if s != 1:
        raise GeometryError(f"top layer leaves a {s}x{s} lattice; it must reduce to 1x1")
    k_top = spec.layers[-1].k
    if k_top * k_top < spec.num_classes:
        raise SpecError(f"top grid {k_top}x{k_top} has fewer nodes than the {spec.num_classes} classes")
    return chain


def layer_dims(spec: ArchitectureSpec) -> list[int]:
    """Feature dimension seen by each layer's grid (supervisory channels excluded)."""
    return [lay.p * lay.p * (1 if i == 0 else 2) for i, lay in enumerate(spec.layers)]


@dataclass(eq=False)
class LsomModel:
    spec: ArchitectureSpec
    grids: list[SomGrid]
    class_map: np.ndarray
    consistency_map: np.ndarray
    stats: list[TrainingStats] = field(default_factory=list)

    @property
    def geometries(self) -> list[WindowGeometry]:
        return validate_spec(self.spec)

    @property
    def top(self) -> SomGrid:
        return self.grids[-1]

    def __eq__(self, other):
        if not isinstance(other, LsomModel):
            return NotImplemented
        return (
            self.spec == other.spec
            and len(self.grids) == len(other.grids)
            and all(a == b for a, b in zip(self.grids, other.grids))
            and np.array_equal(self.class_map, other.class_map)
            and np.array_equal(self.consistency_map, other.consistency_map)
            and self.stats == other.stats
        )


@dataclass
class EvalReport:
    train_accuracy: float
    validate_accuracy: float
    quantization_errors: list[float]
    seconds: float
    sup_scale: float


def augment_supervised(feature, label: int, num_classes: int, sup_scale: float) -> np.ndarray:
    """Append ``num_classes`` label channels: ``sup_scale`` at ``label``, zero elsewhere."""
    if not 0 <= label < num_classes:
        raise LabelRangeError(f"label {label} outside [0, {num_classes})")
    tail = np.zeros(num_classes)
    tail[label] = sup_scale
    return np.concatenate([np.asarray(feature, dtype=np.float64), tail])


def _augment_many(features: np.ndarray, labels: np.ndarray, num_classes: int, sup_scale: float) -> np.ndarray:
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelRangeError(f"labels must lie in [0, {num_classes})")
    tail = np.zeros((features.shape[0], num_classes))
    tail[np.arange(features.shape[0]), labels] = sup_scale
    return np.hstack([features, tail])


def _image_stack(images, side: int) -> np.ndarray:
    X = np.asarray(images, dtype=np.float64)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[1:] != (side, side, 1):
        raise GeometryError(f"expected scalar {side}x{side} images, got shape {X.shape}")
    return X


def match_lattices(grid: SomGrid, lattices: np.ndarray, geom: WindowGeometry, max_values: int = 1 << 22) -> np.ndarray:
    """Scan then match a stack of lattices: ``(n, s, s, d) -> (n, u, u, 2)`` coordinates."""
    n = lattices.shape[0]
    per_image = geom.u * geom.u * grid.match_dim
    step = max(1, max_values // per_image)
    out = np.empty((n, geom.u, geom.u, 2))
    for start in range(0, n, step):
        win = scan_many(lattices[start:start + step], geom)
        idx = bmu_indices(grid, win.reshape(-1, win.shape[-1]))
        rc = np.stack(np.divmod(idx, grid.side), axis=1).astype(np.float64)
        out[start:start + step] = rc.reshape(-1, geom.u, geom.u, 2)
    return out


def train_model(dataset: "LabeledDataset", spec: ArchitectureSpec, qe_samples: int | None = 1000) -> LsomModel:
    """Train every layer bottom-up on ``dataset``, then label the top grid."""
    geoms = validate_spec(spec)
    images = _image_stack(dataset.images, spec.input_side)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if images.shape[0] == 0:
        raise EmptySampleError("cannot train on an empty dataset")
    if labels.shape[0] != images.shape[0]:
        raise LsomError("images and labels differ in length")

    lattices = images
    grids, stats = [], []
    last = len(spec.layers) - 1
    for i, (layer, geom) in enumerate(zip(spec.layers, geoms)):
        params = spec.train_params(i)
        t0 = time.perf_counter()
        if i == last:
            features = scan_many(lattices, geom).reshape(images.shape[0], -1)
            samples = _augment_many(features, labels, spec.num_classes, spec.resolved_sup_scale())
            dim = samples.shape[1]
        else:
            samples = WindowPool(lattices, geom)
            dim = samples.dim
        grid, st = train(new_grid(layer.k, dim, params.seed), samples, params, qe_samples=qe_samples)
        if i == last:
            grid.channel_mask = np.arange(features.shape[1])
        else:
            lattices = match_lattices(grid, lattices, geom)
        log.info("layer %d: %dx%d grid, dim %d, %d samples, qe %.4g -> %.4g (%.1fs)",
                 i, layer.k, layer.k, dim, len(samples), st.initial_qe, st.final_qe, time.perf_counter() - t0)
        grids.append(grid)
        stats.append(st)

    k = spec.layers[-1].k
    model = LsomModel(spec, grids, np.zeros((k, k), dtype=np.int64), np.zeros((k, k)), stats)
    model.class_map, model.consistency_map = label_nodes(model, dataset)
    return model


def forward_many(model: LsomModel, images) -> np.ndarray:
    """Top-level grid coordinate of every image, ``(n, 2)`` integers."""
    lattices = _image_stack(images, model.spec.input_side)
    for grid, geom in zip(model.grids, model.geometries):
        lattices = match_lattices(grid, lattices, geom)
    return lattices.reshape(-1, 2).astype(np.int64)


def forward(model: LsomModel, image) -> GridCoord:
    r, c = forward_many(model, np.asarray(image)[None])[0]
    return GridCoord(int(r), int(c))


def classify_many(model: LsomModel, images) -> np.ndarray:
    rc = forward_many(model, images)
    return model.class_map[rc[:, 0], rc[:, 1]]


def classify(model: LsomModel, image) -> int:
    r, c = forward(model, image)
    return int(model.class_map[r, c])


def consistency_from_matches(coords, labels, k: int, num_classes: int) -> np.ndarray:
    """Per node, the share of its matched images that carry the node's majority label."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.zeros((k, k, num_classes), dtype=np.int64)
    np.add.at(counts, (coords[:, 0], coords[:, 1], labels), 1)
    total = counts.sum(axis=2)
    majority = counts.max(axis=2)
    return np.divide(majority, total, out=np.zeros((k, k)), where=total > 0)


def label_nodes(model: LsomModel, dataset: "LabeledDataset") -> tuple[np.ndarray, np.ndarray]:
    """Class of every top node from its supervisory channels, plus match consistency.

    Nodes no training image matches get consistency 0 and keep their
    supervisory label.
    """
    top = model.top
    n_feat = top.match_dim
    class_map = np.argmax(top.vectors[:, :, n_feat:], axis=2).astype(np.int64)
    coords = forward_many(model, dataset.images)
    consistency = consistency_from_matches(coords, dataset.labels, top.side, model.spec.num_classes)
    return class_map, consistency


def generate(model: LsomModel, coord) -> np.ndarray:
    """Simulated ``input_side x input_side`` image for a top-level node.

    Inverse match and inverse scan are applied from the top down.  Coordinate
    levels are rounded (and clamped onto the grid below), the pixel level is
    clamped into [0, 1].
    """
    geoms = model.geometries
    top = model.top
    vec = inverse_match(top, coord)[top.channel_mask]
    windows = vec.reshape(1, 1, -1)
    for i in range(len(model.grids) - 1, -1, -1):
        if i < len(model.grids) - 1:
            grid = model.grids[i]
            rows = y[..., 0].astype(np.int64)
            cols = y[..., 1].astype(np.int64)
            windows = grid.vectors[rows, cols]
        if i == 0:
            y = inverse_scan(windows, geoms[0], Rounding.CLAMP_UNIT)
        else:
            y = inverse_scan(windows, geoms[i], Rounding.ROUND, coord_max=model.grids[i - 1].side - 1)
    return y[..., 0]


def accuracy(model: LsomModel, dataset: "LabeledDataset") -> float:
    if len(dataset.labels) == 0:
        raise EmptySampleError(f"dataset {getattr(dataset, 'name', '')!r} is empty")
    pred = classify_many(model, dataset.images)
    return float(np.mean(pred == np.asarray(dataset.labels)))


def evaluate(model: LsomModel, train_set: "LabeledDataset", validate_set: "LabeledDataset") -> EvalReport:
    t0 = time.perf_counter()
    train_acc = accuracy(model, train_set)
    validate_acc = accuracy(model, validate_set)
    return EvalReport(
        train_accuracy=train_acc,
        validate_accuracy=validate_acc,
        quantization_errors=[s.final_qe for s in model.stats],
        seconds=time.perf_counter() - t0,
        sup_scale=model.spec.resolved_sup_scale(),
    )
