"""Stacked self-organizing maps for 28x28 digit images.

Each layer scans its input lattice with square windows and replaces every
window by the grid coordinates of its best matching node.  The top layer is a
supervised SOM whose nodes carry a class label.
"""
from .dataset_io import LabeledDataset, load_mnist, load_model, save_model
from .errors import LsomError
from .lattice_ops import Rounding, WindowGeometry, inverse_scan, output_side, scan
from .lsom_arch import (
    ArchitectureSpec,
    EvalReport,
    LayerSpec,
    LsomModel,
    classify,
    classify_many,
    evaluate,
    forward,
    generate,
    train_model,
)
from .som_core import GridCoord, SomGrid, TrainParams, find_bmu, new_grid, train

__version__ = "0.1.0"
