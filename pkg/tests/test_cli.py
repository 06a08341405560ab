from __future__ import annotations

import json
from pathlib import Path

import pytest

from sceneorder.cli import main

TINY_CONFIG = {
    "scene": {"n_min": 2, "n_max": 3, "size": 32},
    "data": {"train_count": 6, "val_count": 3},
    "model": {
        "num_queries": 4,
        "channels": 24,
        "image_size": 32,
        "head": {
            "channels": 24,
            "heads": 2,
            "d_ffn": 32,
            "decoder_layers": 1,
            "aux_loss": False,
            "task_mlp_hidden": 8,
        },
    },
    "train": {"iterations": 8, "batch_size": 2, "eval_every": 4, "log_every": 4},
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps(TINY_CONFIG))
    data = root / "data"
    assert main(["gen-data", "--out", str(data), "--config", str(config), "--seed", "1"]) == 0
    run = root / "run"
    assert main(["train", "--data", str(data), "--out", str(run), "--config", str(config), "--seed", "1"]) == 0
    return {"root": root, "config": config, "data": data, "run": run}


def test_gen_data_layout(workspace):
    data = workspace["data"]
    assert len(list((data / "train").glob("scene_*.json"))) == 6
    assert len(list((data / "val").glob("scene_*.ppm"))) == 3
    assert list((data / "val").glob("scene_*_depth.pgm"))
    assert list((data / "val").glob("scene_*_mask_0.pgm"))


def test_train_outputs(workspace):
    run = workspace["run"]
    assert (run / "checkpoint" / "manifest.json").exists()
    curves = json.loads((run / "curves.json").read_text())
    assert curves["loss_curve"]


def test_eval_checkpoint_and_baseline(workspace, tmp_path):
    out = tmp_path / "eval"
    code = main(
        [
            "eval",
            "--checkpoint",
            str(workspace["run"] / "checkpoint"),
            "--data",
            str(workspace["data"] / "val"),
            "--out",
            str(out),
        ]
    )
    assert code == 0
    metrics = json.loads((out / "metrics.json").read_text())
    assert "occlusion_recall" in metrics["metrics"]
    assert "whdr_all" in metrics["metrics"]
    assert (out / "metrics.txt").read_text().startswith("metric")
    assert main(["eval", "--baseline", "yaxis", "--data", str(workspace["data"] / "val")]) == 0
    assert main(["eval", "--baseline", "depthmap-median", "--data", str(workspace["data"] / "val")]) == 0


def test_eval_rejects_both_model_and_baseline(workspace):
    code = main(
        [
            "eval",
            "--checkpoint",
            "x",
            "--baseline",
            "yaxis",
            "--data",
            str(workspace["data"] / "val"),
        ]
    )
    assert code == 2


def test_eval_missing_data_is_data_error(workspace, tmp_path):
    code = main(["eval", "--baseline", "yaxis", "--data", str(tmp_path / "nope")])
    assert code == 3


def test_predict_writes_prediction_and_graph(workspace, tmp_path):
    out = tmp_path / "pred"
    code = main(
        [
            "predict",
            "--checkpoint",
            str(workspace["run"] / "checkpoint"),
            "--data",
            str(workspace["data"] / "val"),
            "--index",
            "0",
            "--out",
            str(out),
        ]
    )
    assert code == 0
    payload = json.loads((out / "prediction.json").read_text())
    assert "predictions" in payload or payload.get("no_order")
    if "predictions" in payload:
        assert (out / "graph.dot").read_text().startswith("digraph")


def test_export_graph(workspace, tmp_path):
    ann = sorted((workspace["data"] / "val").glob("scene_*.json"))[0]
    out = tmp_path / "graph"
    assert main(["export-graph", "--annotation", str(ann), "--out", str(out)]) == 0
    assert (out / "graph.dot").read_text().startswith("digraph")


def test_vqa_export(workspace, tmp_path):
    out_file = tmp_path / "vqa.jsonl"
    code = main(["vqa-export", "--data", str(workspace["data"] / "val"), "--out-file", str(out_file)])
    assert code == 0
    lines = out_file.read_text().splitlines()
    records = [json.loads(line) for line in lines]
    assert all(r["answer"] in ("yes", "no") for r in records)
    # count: sum over scenes of 2n(n-1)
    total = 0
    from sceneorder.annotations import load_annotation

    for path in sorted((workspace["data"] / "val").glob("scene_*.json")):
        n = len(load_annotation(path).instances)
        total += 2 * n * (n - 1)
    assert len(records) == total


def test_bench_cli(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench", "--n-list", "2,3", "--repeats", "1", "--out", str(out)]) == 0
    payload = json.loads((out / "bench.json").read_text())
    assert payload["claims"]["holistic_forwards_always_one"]


def test_bad_config_is_data_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(bad)]) == 3


def test_invalid_scene_config_is_validation_error(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"scene": {"n_min": 1, "n_max": 3}}))
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--config", str(cfg)]) == 2
