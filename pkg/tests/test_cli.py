import csv
import io

import numpy as np
import pytest

from lsom import dataset_io as dio
from lsom.cli import CSV_COLUMNS, ConfigError, main, parse_run_config, parse_sweep_config
from lsom.lsom_arch import LayerSpec

SMALL = """\
# tiny two-layer run
iterations = 200
images = 100
seed = 3
layer = 7 7 4
layer = 4 1 4
"""


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


@pytest.fixture
def small_cfg(tmp_path, mnist_dir):
    path = tmp_path / "run.cfg"
    path.write_text(SMALL + f"dataset_dir = {mnist_dir}\n")
    return path


# -- config parsing ---------------------------------------------------------------------

def test_parse_run_config_layers_and_architecture():
    a = parse_run_config(SMALL)
    b = parse_run_config("iterations = 200\nimages = 100\nseed = 3\narchitecture = ((7,7,4),(4,1,4))")
    assert a == b
    assert a.layers == (LayerSpec(7, 7, 4), LayerSpec(4, 1, 4))
    assert parse_run_config("layer = 28 1 20\nsup_scale = auto").sup_scale is None
    assert parse_run_config("layer = 28 1 20\nsup_scale = 4").sup_scale == 4.0


@pytest.mark.parametrize("text", [
    "iterations = 10",                       # no layers
    "layer = 28 1\n",                        # bad triple
    "layer = 28 1 20\nbogus = 1",            # unknown key
    "layer = 28 1 20\niterations = ten",     # bad value
    "layer = 28 1 20\njust words",           # not key = value
    "layer = 28 1 20\narchitecture = ((28,1,20))",
    "layer = 28 1 20\ntop_side = 5",         # list key outside a sweep
])
def test_parse_run_config_errors(text):
    with pytest.raises(ConfigError):
        parse_run_config(text)


def test_parse_sweep_product_order():
    runs = parse_sweep_config(
        "iterations = 100, 200\nimages = 50\nseed = 0, 1\n"
        "architecture = ((28,1,20))\narchitecture = ((7,1,50),(22,1,50))\ntop_side = 4, 5\n"
    )
    assert len(runs) == 2 * 2 * 2 * 2
    assert [r.seed for r in runs[:2]] == [0, 1]
    assert [r.layers[-1].k for r in runs[:4]] == [4, 4, 5, 5]
    assert runs[0].layers == (LayerSpec(28, 1, 4),)
    assert runs[4].layers == (LayerSpec(7, 1, 50), LayerSpec(22, 1, 4))
    assert {r.iterations for r in runs[:8]} == {100}


# -- commands ----------------------------------------------------------------------------

def test_train_eval_generate_export(tmp_path, small_cfg, mnist_dir, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(small_cfg), "--out", str(out)]) == 0
    printed = rows(capsys.readouterr().out)
    assert len(printed) == 1 and list(printed[0]) == CSV_COLUMNS
    row = printed[0]
    assert row["architecture"] == "((7,7,4),(4,1,4))" and row["images"] == "100" and row["error"] == ""
    assert 0.0 <= float(row["train"]) <= 1.0 and 0.0 <= float(row["validate"]) <= 1.0
    assert rows((out / "results.csv").read_text()) == printed

    model_path = out / "model.lsom"
    model = dio.load_model(model_path.read_bytes())
    assert model.top.side == 4

    assert main(["eval", "--model", str(model_path), "--split", "train", "--images", "100",
                 "--seed", "3", "--dataset-dir", str(mnist_dir)]) == 0
    ev = rows(capsys.readouterr().out)[0]
    assert ev["split"] == "train" and ev["images"] == "100"
    assert float(ev["accuracy"]) == pytest.approx(float(row["train"]), abs=1e-6)

    gen = tmp_path / "gen"
    assert main(["generate", "--model", str(model_path), "--out", str(gen)]) == 0
    pgms = sorted(p.name for p in gen.glob("*.pgm"))
    assert len(pgms) == 16
    for name in pgms:
        r, c, cls = (int(x) for x in name[:-4].split("_"))
        assert cls == model.class_map[r, c]
        assert (gen / name).read_bytes().startswith(b"P5\n28 28\n255\n")
    assert len((gen / "class_map.csv").read_text().splitlines()) == 17

    one = tmp_path / "one"
    assert main(["generate", "--model", str(model_path), "--out", str(one), "--nodes", "1,2;3,0"]) == 0
    assert len(list(one.glob("*.pgm"))) == 2

    maps = tmp_path / "maps"
    assert main(["export-maps", "--model", str(model_path), "--out", str(maps)]) == 0
    assert (maps / "layer0.pgm").read_bytes().startswith(b"P5\n33 33\n")  # 4 * 8 + 1
    assert (maps / "layer1.ppm").read_bytes().startswith(b"P6\n21 21\n")  # 4 * 5 + 1


def test_train_geometry_error_exits_nonzero(tmp_path, mnist_dir, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(f"layer = 5 2 10\ndataset_dir = {mnist_dir}\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert "GeometryError" in err
    assert not (tmp_path / "o").exists()


def test_missing_dataset_exits_nonzero(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv("LSOM_DATASET_DIR", raising=False)
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "LSOM_DATASET_DIR" in capsys.readouterr().err


def test_dataset_dir_from_environment(tmp_path, mnist_dir, monkeypatch, capsys):
    monkeypatch.setenv("LSOM_DATASET_DIR", str(mnist_dir))
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "o"), "--iterations", "20"]) == 0
    assert rows(capsys.readouterr().out)[0]["iterations"] == "20"


def test_corrupt_model_exits_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.lsom"
    bad.write_bytes(b"LSOM\x01\x00\x00\x00garbage")
    assert main(["generate", "--model", str(bad), "--out", str(tmp_path / "g")]) == 1
    assert "FormatError" in capsys.readouterr().err
    assert main(["export-maps", "--model", str(tmp_path / "missing.lsom"), "--out", str(tmp_path)]) == 1


def test_generate_bad_node_writes_nothing(tmp_path, small_cfg, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(small_cfg), "--out", str(out), "--iterations", "20"]) == 0
    gen = tmp_path / "gen"
    assert main(["generate", "--model", str(out / "model.lsom"), "--out", str(gen), "--nodes", "0,0;4,0"]) == 1
    assert "CoordinateRangeError" in capsys.readouterr().err
    assert not list(gen.glob("*.pgm"))


def test_eval_more_images_than_available(tmp_path, small_cfg, mnist_dir, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(small_cfg), "--out", str(out), "--iterations", "20"]) == 0
    assert main(["eval", "--model", str(out / "model.lsom"), "--images", "10000000",
                 "--dataset-dir", str(mnist_dir)]) == 1
    assert "CountMismatchError" in capsys.readouterr().err


def test_sweep_singleton_matches_train(tmp_path, small_cfg, capsys):
    assert main(["train", "--config", str(small_cfg), "--out", str(tmp_path / "t")]) == 0
    trained = rows(capsys.readouterr().out)[0]
    assert main(["sweep", "--config", str(small_cfg), "--out", str(tmp_path / "s")]) == 0
    swept = rows(capsys.readouterr().out)
    assert len(swept) == 1
    assert rows((tmp_path / "s" / "sweep.csv").read_text()) == swept
    trained.pop("seconds"), swept[0].pop("seconds")
    assert swept[0] == trained


def test_sweep_records_failed_rows(tmp_path, mnist_dir, capsys):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(
        f"dataset_dir = {mnist_dir}\niterations = 20\nimages = 30\n"
        "architecture = ((28,1,4))\narchitecture = ((5,2,4))\n"
    )
    assert main(["sweep", "--config", str(cfg)]) == 0
    got = rows(capsys.readouterr().out)
    assert len(got) == 2
    assert got[0]["error"] == "" and got[0]["train"] != ""
    assert got[1]["error"].startswith("GeometryError") and got[1]["train"] == ""


def test_sweep_parallel_matches_serial(tmp_path, mnist_dir, capsys):
    cfg = tmp_path / "sweep.cfg"
    cfg.write_text(f"dataset_dir = {mnist_dir}\niterations = 30\nimages = 40\nseed = 0, 1\nlayer = 28 1 4\n")
    assert main(["sweep", "--config", str(cfg)]) == 0
    serial = rows(capsys.readouterr().out)
    assert main(["sweep", "--config", str(cfg), "--jobs", "2"]) == 0
    parallel = rows(capsys.readouterr().out)
    for r in serial + parallel:
        r.pop("seconds")
    assert serial == parallel


def test_train_is_deterministic(tmp_path, small_cfg, capsys):
    for name in ("a", "b"):
        assert main(["train", "--config", str(small_cfg), "--out", str(tmp_path / name)]) == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "model.lsom").read_bytes()
    assert a == (tmp_path / "b" / "model.lsom").read_bytes()
    ma = dio.load_model(a)
    assert np.all(ma.consistency_map >= 0)
