"""MNIST IDX ingestion, model archives and PGM/PPM image export."""
from __future__ import annotations

import enum
import gzip
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CountMismatchError, DimensionMismatchError, FormatError, LabelRangeError, VersionError
from .lsom_arch import ArchitectureSpec, LayerSpec, LsomModel
from .som_core import SomGrid, TrainingStats, TrainParams

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IMAGE_SIDE = 28
NUM_CLASSES = 10

ARCHIVE_MAGIC = b"LSOM"
ARCHIVE_VERSION = 1

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


@dataclass
class LabeledDataset:
    images: np.ndarray   # (n, 28, 28) float64 in [0, 1]
    labels: np.ndarray   # (n,) int64 in [0, 10)
    name: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(f"{self.images.shape[0]} images but {self.labels.shape[0]} labels")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")

    def __len__(self):
        return self.labels.shape[0]

    def subset(self, idx, name: str | None = None) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], self.name if name is None else name)


# -- IDX ---------------------------------------------------------------------

def _idx_header(data: bytes, magic: int, ndims: int) -> tuple[int, ...]:
    need = 4 * (1 + ndims)
    if len(data) < need:
        raise FormatError(f"truncated IDX header: {len(data)} bytes")
    found, *dims = struct.unpack(">" + "I" * (1 + ndims), data[:need])
    if found != magic:
        raise FormatError(f"bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    return tuple(dims)


def parse_idx_images(data: bytes) -> np.ndarray:
    """Raw ``(n, 28, 28)`` uint8 images from an IDX3 byte string."""
    n, rows, cols = _idx_header(data, IDX_IMAGES_MAGIC, 3)
    if (rows, cols) != (IMAGE_SIDE, IMAGE_SIDE):
        raise FormatError(f"expected {IMAGE_SIDE}x{IMAGE_SIDE} images, got {rows}x{cols}")
    payload = memoryview(data)[16:]
    size = n * rows * cols
    if len(payload) < size:
        raise FormatError(f"truncated IDX image payload: {len(payload)} of {size} bytes")
    return np.frombuffer(payload[:size], dtype=np.uint8).reshape(n, rows, cols).copy()


def parse_idx_labels(data: bytes) -> np.ndarray:
    (n,) = _idx_header(data, IDX_LABELS_MAGIC, 1)
    payload = memoryview(data)[8:]
    if len(payload) < n:
        raise FormatError(f"truncated IDX label payload: {len(payload)} of {n} bytes")
    labels = np.frombuffer(payload[:n], dtype=np.uint8).astype(np.int64)
    if labels.size and labels.max() >= NUM_CLASSES:
        raise LabelRangeError(f"label {labels.max()} outside [0, {NUM_CLASSES})")
    return labels


def idx_images_bytes(images) -> bytes:
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    return struct.pack(">IIII", IDX_IMAGES_MAGIC, n, rows, cols) + images.tobytes()


def idx_labels_bytes(labels) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8)
    return struct.pack(">II", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes()


def load_dataset(image_bytes: bytes, label_bytes: bytes, limit: int | None = None,
                 seed: int | None = None, name: str = "") -> LabeledDataset:
    """Parse an IDX pair, scale pixels by 1/255 and optionally take a seeded subset."""
    raw = parse_idx_images(image_bytes)
    labels = parse_idx_labels(label_bytes)
    if raw.shape[0] != labels.shape[0]:
        raise CountMismatchError(f"{raw.shape[0]} images but {labels.shape[0]} labels")
    if limit is not None:
        if limit < 1 or limit > raw.shape[0]:
            raise CountMismatchError(f"requested {limit} images, {raw.shape[0]} available")
        idx = np.sort(np.random.default_rng(seed).choice(raw.shape[0], size=limit, replace=False))
        raw, labels = raw[idx], labels[idx]
    return LabeledDataset(raw / 255.0, labels, name)


def _read_maybe_gz(path: Path) -> bytes:
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.exists():
            with open(candidate, "rb") as f:
                data = f.read()
            return gzip.decompress(data) if candidate.suffix == ".gz" else data
    raise FileNotFoundError(f"{path} (or {path.name}.gz) not found")


def load_mnist(directory: str | os.PathLike, split: str = "train", limit: int | None = None,
               seed: int | None = None) -> LabeledDataset:
    """Load the ``train`` or ``test`` split from a directory holding the standard IDX files."""
    img_name, lbl_name = MNIST_FILES[split]
    d = Path(directory)
    return load_dataset(_read_maybe_gz(d / img_name), _read_maybe_gz(d / lbl_name), limit, seed, name=split)


def write_mnist(directory: str | os.PathLike, split: str, images, labels) -> None:
    """Write uint8 images and labels as the standard IDX file pair for ``split``."""
    img_name, lbl_name = MNIST_FILES[split]
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / img_name).write_bytes(idx_images_bytes(images))
    (d / lbl_name).write_bytes(idx_labels_bytes(labels))


# -- model archive -------------------------------------------------------------
#
# All fields little-endian, in this order:
#   "LSOM" | u32 version
#   u32 input_side | u32 num_classes | f64 sup_scale (NaN = default)
#   u32 iterations | f64 base_rate | u64 seed | u32 n_layers
#   n_layers x (u32 p, u32 v, u32 k)
#   u8 has_layer_train, then n_layers x (u32 iterations, f64 base_rate, u64 seed) if set
#   n_layers x grid: u32 side | u32 dim | u32 mask_len | mask_len x u32 | side*side*dim x f64
#   class map: u32 k | k*k x i32 ; consistency: k*k x f64
#   n_layers x stats: u32 iterations | f64 initial_qe | f64 final_qe

class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.data):
            raise FormatError("corrupt model archive: unexpected end of data")
        out = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += size
        return out

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.pos + size > len(self.data):
            raise FormatError("corrupt model archive: payload shorter than declared")
        out = np.frombuffer(self.data[self.pos:self.pos + size], dtype=dtype).copy()
        self.pos += size
        return out


def save_model(model: LsomModel) -> bytes:
    spec = model.spec
    buf = io.BytesIO()
    w = buf.write
    w(ARCHIVE_MAGIC)
    w(struct.pack("<I", ARCHIVE_VERSION))
    sup = float("nan") if spec.sup_scale is None else float(spec.sup_scale)
    w(struct.pack("<IId", spec.input_side, spec.num_classes, sup))
    w(struct.pack("<IdQI", spec.iterations, spec.base_rate, spec.seed, len(spec.layers)))
    for layer in spec.layers:
        w(struct.pack("<III", layer.p, layer.v, layer.k))
    w(struct.pack("<B", spec.layer_train is not None))
    for params in spec.layer_train or ():
        w(struct.pack("<IdQ", params.iterations, params.base_rate, params.seed))
    for grid in model.grids:
        mask = np.empty(0, dtype=np.int64) if grid.channel_mask is None else grid.channel_mask
        w(struct.pack("<III", grid.side, grid.dim, len(mask)))
        w(mask.astype("<u4").tobytes())
        w(grid.vectors.astype("<f8").tobytes())
    k = model.class_map.shape[0]
    w(struct.pack("<I", k))
    w(model.class_map.astype("<i4").tobytes())
    w(model.consistency_map.astype("<f8").tobytes())
    for st in model.stats:
        w(struct.pack("<Idd", st.iterations, st.initial_qe, st.final_qe))
    return buf.getvalue()


def load_model(data: bytes) -> LsomModel:
    if len(data) < 8 or bytes(data[:4]) != ARCHIVE_MAGIC:
        raise FormatError("not a model archive (missing LSOM magic)")
    r = _Reader(data)
    r.pos = 4
    (version,) = r.take("<I")
    if version != ARCHIVE_VERSION:
        raise VersionError(f"unsupported archive version {version}")
    input_side, num_classes, sup = r.take("<IId")
    iterations, base_rate, seed, n_layers = r.take("<IdQI")
    if n_layers == 0 or n_layers > 64:
        raise FormatError(f"corrupt model archive: {n_layers} layers")
    layers = tuple(LayerSpec(*r.take("<III")) for _ in range(n_layers))
    (has_lt,) = r.take("<B")
    layer_train = tuple(TrainParams(*r.take("<IdQ")) for _ in range(n_layers)) if has_lt else None
    try:
        spec = ArchitectureSpec(layers, input_side, num_classes, None if np.isnan(sup) else sup,
                                iterations, base_rate, seed, layer_train)
    except ValueError as exc:
        raise FormatError(f"corrupt model archive: {exc}") from None
    grids = []
    for _ in range(n_layers):
        side, dim, mask_len = r.take("<III")
        if side == 0 or dim == 0 or mask_len > dim:
            raise FormatError("corrupt model archive: bad grid header")
        mask = r.array("<u4", mask_len).astype(np.int64) if mask_len else None
        vectors = r.array("<f8", side * side * dim).reshape(side, side, dim)
        grids.append(SomGrid(vectors, mask))
    (k,) = r.take("<I")
    class_map = r.array("<i4", k * k).astype(np.int64).reshape(k, k)
    consistency = r.array("<f8", k * k).reshape(k, k)
    stats = [TrainingStats(*r.take("<Idd")) for _ in range(n_layers)]
    if r.pos != len(r.data):
        raise FormatError("corrupt model archive: trailing bytes")
    return LsomModel(spec, grids, class_map, consistency, stats)


# -- images ----------------------------------------------------------------------

class MontageMode(enum.Enum):
    GRAY = "gray"
    REDBLUE = "redblue"


def _to_bytes(values: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def pgm_bytes(pixels: np.ndarray) -> bytes:
    h, w = pixels.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def ppm_bytes(pixels: np.ndarray) -> bytes:
    h, w, _ = pixels.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()


def export_pgm(image) -> bytes:
    """Binary PGM of a scalar lattice with values in [0, 1]."""
    a = np.asarray(image, dtype=np.float64)
    if a.ndim == 3:
        if a.shape[2] != 1:
            raise DimensionMismatchError(f"PGM export needs a scalar lattice, got dim {a.shape[2]}")
        a = a[..., 0]
    if a.ndim != 2:
        raise DimensionMismatchError(f"PGM export needs a 2-d image, got shape {a.shape}")
    return pgm_bytes(_to_bytes(a))


def export_grid_montage(grid: SomGrid, cell_shape: tuple[int, int, int],
                        mode: MontageMode = MontageMode.GRAY, scale_max: float = 1.0) -> bytes:
    """One ``p x p`` tile per node, in grid order, separated by 1-pixel black lines.

    GRAY needs ``d == 1`` and writes PGM; REDBLUE needs ``d == 2``, maps the
    two components (divided by ``scale_max``) to red and blue and writes PPM.
    Only the matching channels are drawn, so a top grid's supervisory
    channels are skipped.
    """
    p, q, d = cell_shape
    if p != q:
        raise DimensionMismatchError("tiles must be square")
    want_d = 1 if mode is MontageMode.GRAY else 2
    if d != want_d:
        raise DimensionMismatchError(f"{mode.value} montage needs {want_d} component(s) per cell, got {d}")
    feats = grid.match_vectors()
    if feats.shape[1] != p * p * d:
        raise DimensionMismatchError(f"grid dim {feats.shape[1]} != {p}*{p}*{d}")
    k = grid.side
    tiles = feats.reshape(k, k, p, p, d)
    size = k * (p + 1) + 1
    if mode is MontageMode.GRAY:
        canvas = np.zeros((size, size), dtype=np.uint8)
        px = _to_bytes(tiles[..., 0])
    else:
        canvas = np.zeros((size, size, 3), dtype=np.uint8)
        px = np.zeros((k, k, p, p, 3), dtype=np.uint8)
        px[..., 0] = _to_bytes(tiles[..., 0] / scale_max)
        px[..., 2] = _to_bytes(tiles[..., 1] / scale_max)
    for r in range(k):
        for c in range(k):
            y, x = 1 + r * (p + 1), 1 + c * (p + 1)
            canvas[y:y + p, x:x + p] = px[r, c]
    return pgm_bytes(canvas) if mode is MontageMode.GRAY else ppm_bytes(canvas)


def layer_montage(model: LsomModel, layer: int) -> tuple[bytes, str]:
    """Montage of one layer's grid and its file extension (``pgm`` or ``ppm``)."""
    spec_layer = model.spec.layers[layer]
    grid = model.grids[layer]
    if layer == 0:
        return export_grid_montage(grid, (spec_layer.p, spec_layer.p, 1), MontageMode.GRAY), "pgm"
    scale_max = max(model.grids[layer - 1].side - 1, 1)
    return export_grid_montage(grid, (spec_layer.p, spec_layer.p, 2), MontageMode.REDBLUE, scale_max), "ppm"


def export_class_map(model: LsomModel) -> str:
    lines = ["row,col,class,consistency"]
    k = model.class_map.shape[0]
    for r in range(k):
        for c in range(k):
            lines.append(f"{r},{c},{int(model.class_map[r, c])},{model.consistency_map[r, c]:.6f}")
    return "\n".join(lines) + "\n"
