"""Command-line interface: ``lsom train|eval|generate|export-maps|sweep``.

Run configurations are flat ``key = value`` files.  Layers are given either as
repeated ``layer = p v k`` lines or as one ``architecture = ((p,v,k),...)``
line::

    # single-layer supervised SOM
    iterations = 10000
    images = 1000
    seed = 0
    layer = 28 1 20

A sweep file uses the same keys, but ``iterations``, ``images``, ``seed``
and ``top_side`` may hold comma-separated lists, and ``architecture`` may be
repeated.  The sweep runs the Cartesian product.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import dataset_io as dio
from .errors import CountMismatchError, LsomError
from .lsom_arch import (
    ArchitectureSpec,
    LayerSpec,
    SpecError,
    accuracy,
    evaluate,
    generate,
    parse_architecture,
    train_model,
    validate_spec,
)
from .som_core import BASE_RATE, GridCoord

log = logging.getLogger("lsom")

ENV_DATASET_DIR = "LSOM_DATASET_DIR"
MODEL_FILE = "model.lsom"
RESULTS_FILE = "results.csv"
SWEEP_FILE = "sweep.csv"
CSV_COLUMNS = ["iterations", "images", "architecture", "train", "validate", "seconds", "seed", "sup_scale", "error"]


class ConfigError(LsomError):
    pass


@dataclass
class RunConfig:
    layers: tuple[LayerSpec, ...]
    input_side: int = 28
    num_classes: int = 10
    iterations: int = 10000
    images: int = 1000
    validate_images: int | None = None
    seed: int = 0
    sup_scale: float | None = None
    base_rate: float = BASE_RATE
    dataset_dir: str | None = None
    out: str = "lsom-run"

    def spec(self) -> ArchitectureSpec:
        return ArchitectureSpec(
            self.layers, self.input_side, self.num_classes, self.sup_scale,
            self.iterations, self.base_rate, self.seed,
        )

    def validate(self) -> ArchitectureSpec:
        if self.iterations < 1 or self.images < 1 or (self.validate_images is not None and self.validate_images < 1):
            raise ConfigError("iterations, images and validate_images must be positive")
        spec = self.spec()
        validate_spec(spec)
        return spec

    def dataset_path(self) -> str:
        path = self.dataset_dir or os.environ.get(ENV_DATASET_DIR)
        if not path:
            raise ConfigError(f"no dataset directory: set dataset_dir, --dataset-dir or {ENV_DATASET_DIR}")
        return path


_INT_KEYS = {"input_side", "num_classes", "iterations", "images", "validate_images", "seed"}
_FLOAT_KEYS = {"base_rate"}
_STR_KEYS = {"dataset_dir", "out"}
_LIST_KEYS = {"iterations", "images", "seed", "top_side"}


def read_pairs(text: str) -> list[tuple[str, str]]:
    pairs = []
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        pairs.append((key.lower().replace("-", "_"), value))
    return pairs


def _layer(value: str) -> LayerSpec:
    parts = value.replace(",", " ").split()
    if len(parts) != 3:
        raise ConfigError(f"layer needs three integers p v k, got {value!r}")
    try:
        return LayerSpec(*(int(x) for x in parts))
    except ValueError:
        raise ConfigError(f"layer needs three integers p v k, got {value!r}") from None


def _scalar(key: str, value: str):
    try:
        if key in _INT_KEYS or key == "top_side":
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
        if key == "sup_scale":
            return None if value.lower() in ("auto", "default", "") else float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    if key in _STR_KEYS:
        return value
    raise ConfigError(f"unknown config key {key!r}")


def _collect(pairs, allow_lists: bool):
    values: dict = {}
    layers: list[LayerSpec] = []
    architectures: list[tuple[LayerSpec, ...]] = []
    for key, value in pairs:
        if key == "layer":
            layers.append(_layer(value))
        elif key == "architecture":
            try:
                architectures.append(parse_architecture(value))
            except SpecError as exc:
                raise ConfigError(str(exc)) from None
        elif allow_lists and key in _LIST_KEYS:
            values[key] = [_scalar(key, v.strip()) for v in value.split(",") if v.strip()]
        elif key == "top_side":
            raise ConfigError("top_side is only valid in sweep configs")
        else:
            values[key] = _scalar(key, value)
    if layers and architectures:
        raise ConfigError("give either layer lines or architecture lines, not both")
    if layers:
        architectures = [tuple(layers)]
    if not architectures:
        raise ConfigError("config defines no layers")
    return values, architectures


def parse_run_config(text: str) -> RunConfig:
    values, architectures = _collect(read_pairs(text), allow_lists=False)
    if len(architectures) > 1:
        raise ConfigError("a run config holds exactly one architecture")
    return RunConfig(architectures[0], **values)


def parse_sweep_config(text: str) -> list[RunConfig]:
    values, architectures = _collect(read_pairs(text), allow_lists=True)
    lists = {k: values.pop(k) for k in list(values) if k in _LIST_KEYS}
    sides = lists.pop("top_side", [None])
    iterations = lists.get("iterations", [RunConfig.iterations])
    images = lists.get("images", [RunConfig.images])
    seeds = lists.get("seed", [RunConfig.seed])
    runs = []
    # rows vary fastest in seed, then top side, architecture, images, iterations
    for it, n, arch, side, seed in itertools.product(iterations, images, architectures, sides, seeds):
        if side is not None:
            top = arch[-1]
            arch = arch[:-1] + (LayerSpec(top.p, top.v, side),)
        runs.append(RunConfig(arch, iterations=it, images=n, seed=seed, **values))
    return runs


def _overrides(cfg: RunConfig, args) -> RunConfig:
    changes = {}
    for name in ("seed", "images", "iterations", "dataset_dir", "out"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    return replace(cfg, **changes)


def load_datasets(cfg: RunConfig):
    path = cfg.dataset_path()
    train = dio.load_mnist(path, "train", cfg.images, seed=cfg.seed)
    n_val = cfg.validate_images or cfg.images
    validate = dio.load_mnist(path, "test", n_val, seed=cfg.seed)
    return train, validate


def csv_row(cfg: RunConfig, train_acc=None, validate_acc=None, seconds=None, error: str = "") -> dict:
    spec = cfg.spec()
    return {
        "iterations": cfg.iterations,
        "images": cfg.images,
        "architecture": spec.notation(),
        "train": "" if train_acc is None else f"{train_acc:.6f}",
        "validate": "" if validate_acc is None else f"{validate_acc:.6f}",
        "seconds": "" if seconds is None else f"{seconds:.2f}",
        "seed": cfg.seed,
        "sup_scale": f"{spec.resolved_sup_scale():g}",
        "error": error,
    }


def format_rows(rows, header: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    if header:
        writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def append_rows(path: Path, rows) -> None:
    new = not path.exists() or path.stat().st_size == 0
    with open(path, "a", encoding="utf-8", newline="") as f:
        f.write(format_rows(rows, header=new))


def run_training(cfg: RunConfig, save_to: Path | None = None) -> dict:
    """Train, evaluate and optionally save one configuration; returns its CSV row."""
    spec = cfg.validate()
    train_set, validate_set = load_datasets(cfg)
    t0 = time.perf_counter()
    model = train_model(train_set, spec)
    report = evaluate(model, train_set, validate_set)
    elapsed = time.perf_counter() - t0
    log.info("train %.4f  validate %.4f  qe %s  (%.1fs)", report.train_accuracy, report.validate_accuracy,
             ", ".join(f"{q:.4g}" for q in report.quantization_errors), elapsed)
    if save_to is not None:
        save_to.mkdir(parents=True, exist_ok=True)
        (save_to / MODEL_FILE).write_bytes(dio.save_model(model))
    return csv_row(cfg, report.train_accuracy, report.validate_accuracy, elapsed)


def cmd_train(args) -> int:
    cfg = _overrides(parse_run_config(Path(args.config).read_text()), args)
    out = Path(cfg.out)
    row = run_training(cfg, save_to=out)
    append_rows(out / RESULTS_FILE, [row])
    sys.stdout.write(format_rows([row]))
    return 0


def _load_model_file(path) -> "dio.LsomModel":
    return dio.load_model(Path(path).read_bytes())


def cmd_eval(args) -> int:
    model = _load_model_file(args.model)
    path = args.dataset_dir or os.environ.get(ENV_DATASET_DIR)
    if not path:
        raise ConfigError(f"no dataset directory: pass --dataset-dir or set {ENV_DATASET_DIR}")
    if args.images is not None and args.images < 1:
        raise CountMismatchError("requested an empty evaluation subset")
    data = dio.load_mnist(path, args.split, args.images, seed=args.seed)
    acc = accuracy(model, data)
    sys.stdout.write(f"split,images,accuracy\n{args.split},{len(data)},{acc:.6f}\n")
    return 0


def _parse_nodes(text: str, k: int) -> list[GridCoord]:
    if text.strip().upper() == "ALL":
        return [GridCoord(r, c) for r in range(k) for c in range(k)]
    nodes = []
    for item in text.split(";"):
        parts = item.replace(",", " ").split()
        if len(parts) != 2:
            raise ConfigError(f"node must be 'row,col', got {item!r}")
        nodes.append(GridCoord(int(parts[0]), int(parts[1])))
    return nodes


def cmd_generate(args) -> int:
    model = _load_model_file(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    nodes = _parse_nodes(args.nodes, model.top.side)
    images = [(node, generate(model, node)) for node in nodes]  # validates every node before writing
    for (r, c), image in images:
        (out / f"{r}_{c}_{int(model.class_map[r, c])}.pgm").write_bytes(dio.export_pgm(image))
    (out / "class_map.csv").write_text(dio.export_class_map(model), encoding="utf-8")
    log.info("wrote %d images to %s", len(images), out)
    return 0


def cmd_export_maps(args) -> int:
    model = _load_model_file(args.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(len(model.grids)):
        data, ext = dio.layer_montage(model, i)
        (out / f"layer{i}.{ext}").write_bytes(data)
    return 0


def _sweep_one(cfg: RunConfig) -> dict:
    try:
        return run_training(cfg)
    except (LsomError, OSError) as exc:
        return csv_row(cfg, error=f"{type(exc).__name__}: {exc}")


def cmd_sweep(args) -> int:
    runs = [_overrides(cfg, args) for cfg in parse_sweep_config(Path(args.config).read_text())]
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_sweep_one, runs))
    else:
        rows = [_sweep_one(cfg) for cfg in runs]
    text = format_rows(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / SWEEP_FILE).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lsom", description="Train and inspect stacks of self-organizing maps on MNIST digits.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_flags(p):
        p.add_argument("--seed", type=int)
        p.add_argument("--images", type=int)
        p.add_argument("--dataset-dir", dest="dataset_dir")

    p = sub.add_parser("train", help="train, evaluate and save a model")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="accuracy of a saved model on an MNIST subset")
    p.add_argument("--model", required=True)
    p.add_argument("--split", choices=sorted(dio.MNIST_FILES), default="test")
    data_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("generate", help="write the generated image of top-level nodes")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--nodes", default="ALL", help="ALL or 'row,col;row,col;...'")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("export-maps", help="write a montage of every layer's grid")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_maps)

    p = sub.add_parser("sweep", help="run every combination in a sweep config")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.add_argument("--iterations", type=int)
    p.add_argument("--jobs", type=int, default=1)
    data_flags(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (LsomError, OSError) as exc:
        print(f"lsom {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
