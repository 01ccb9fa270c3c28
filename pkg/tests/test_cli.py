import csv
import json

import pytest

from polyssl.cli import main


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "ds.jsonl"
    assert main(["gen-data", "--n", "60", "--seed", "4", "--out", str(path)]) == 0
    return path


def test_help_lists_commands(capsys):
    with pytest.raises(SystemExit) as exit_info:
        main(["--help"])
    assert exit_info.value.code == 0
    out = capsys.readouterr().out
    for command in ("gen-data", "pretrain", "finetune", "sweep", "ablate", "subgraph-dump", "encode", "eval"):
        assert command in out


def test_gen_data_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["gen-data", "--n", "12", "--seed", "9", "--out", str(a)]) == 0
    assert main(["gen-data", "--n", "12", "--seed", "9", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads((tmp_path / "a.jsonl.meta.json").read_text())
    assert meta["seed"] == 9
    assert "config_hash" in meta and "version" in meta


def test_unknown_config_key_exits_2(tmp_path, dataset, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('ctx_frac = 0.5\n')
    code = main([
        "pretrain", "--dataset", str(dataset), "--out", str(tmp_path / "run"),
        "--config", str(cfg),
    ])
    assert code == 2
    assert "ctx_frac" in capsys.readouterr().err


def test_bad_range_exits_2(tmp_path, dataset, capsys):
    code = main([
        "pretrain", "--dataset", str(dataset), "--out", str(tmp_path / "run"),
        "--target-frac", "0.9", "--context-frac", "0.5",
    ])
    assert code == 2


def test_missing_dataset_exits_3(tmp_path):
    code = main([
        "pretrain", "--dataset", str(tmp_path / "missing.jsonl"),
        "--out", str(tmp_path / "run"), "--epochs", "1",
    ])
    assert code == 3


def test_pretrain_rerun_byte_identical(tmp_path, dataset):
    args = [
        "pretrain", "--dataset", str(dataset), "--epochs", "2", "--depth", "2",
        "--hidden", "12", "--seed", "1", "--batch-size", "16",
    ]
    assert main(args + ["--out", str(tmp_path / "r1")]) == 0
    assert main(args + ["--out", str(tmp_path / "r2")]) == 0
    for name in ("pretrained.ckpt", "training_log.jsonl", "splits.json", "run.json"):
        assert (tmp_path / "r1" / name).read_bytes() == (tmp_path / "r2" / name).read_bytes()


def test_toml_config_with_flag_override(tmp_path, dataset):
    cfg = tmp_path / "c.toml"
    cfg.write_text("epochs = 1\nhidden = 12\ndepth = 2\nseed = 3\nbatch_size = 16\n")
    out = tmp_path / "run"
    assert main([
        "pretrain", "--dataset", str(dataset), "--out", str(out),
        "--config", str(cfg), "--epochs", "2",
    ]) == 0
    stamp = json.loads((out / "run.json").read_text())
    assert stamp["config"]["epochs"] == 2  # flag wins
    assert stamp["config"]["hidden"] == 12
    log_lines = (out / "training_log.jsonl").read_text().strip().splitlines()
    assert len(log_lines) == 2


def test_finetune_and_eval_cycle(tmp_path, dataset):
    pre_out = tmp_path / "pre"
    assert main([
        "pretrain", "--dataset", str(dataset), "--out", str(pre_out),
        "--epochs", "1", "--depth", "2", "--hidden", "12", "--seed", "1",
        "--batch-size", "16", "--split-seed", "11",
    ]) == 0
    ft_out = tmp_path / "ft"
    assert main([
        "finetune", "--dataset", str(dataset), "--out", str(ft_out),
        "--checkpoint", str(pre_out / "pretrained.ckpt"), "--epochs", "2",
        "--depth", "2", "--hidden", "12", "--seed", "1", "--n-labels", "16",
        "--split-seed", "11",
    ]) == 0
    report = json.loads((ft_out / "metrics.json").read_text())
    assert report["pretrained"] is True
    assert report["task"] == "regression"
    ev_out = tmp_path / "ev"
    assert main([
        "eval", "--dataset", str(dataset), "--out", str(ev_out),
        "--model", str(ft_out / "finetuned.ckpt"), "--split-seed", "11",
    ]) == 0
    again = json.loads((ev_out / "metrics.json").read_text())
    assert again["r2"] == pytest.approx(report["r2"], abs=1e-12)


def test_checkpoint_encoder_shape_mismatch_is_config_error(tmp_path, dataset):
    pre_out = tmp_path / "pre"
    assert main([
        "pretrain", "--dataset", str(dataset), "--out", str(pre_out),
        "--epochs", "1", "--depth", "2", "--hidden", "12", "--seed", "1",
        "--batch-size", "16",
    ]) == 0
    code = main([
        "finetune", "--dataset", str(dataset), "--out", str(tmp_path / "ft"),
        "--checkpoint", str(pre_out / "pretrained.ckpt"), "--epochs", "1",
        "--depth", "3", "--hidden", "24",
    ])
    assert code == 2


def test_subgraph_dump_schema(tmp_path, dataset):
    out = tmp_path / "dump.jsonl"
    assert main([
        "subgraph-dump", "--dataset", str(dataset), "--out", str(out),
        "--limit", "5", "--seed", "3",
    ]) == 0
    lines = out.read_text().strip().splitlines()
    assert len(lines) == 5
    for line in lines:
        obj = json.loads(line)
        assert set(obj) >= {"graph_id", "context_nodes", "targets"}
        assert isinstance(obj["targets"], list)
        assert all(isinstance(t, list) for t in obj["targets"])


def test_encode_dump_pe_csv(tmp_path, dataset):
    out = tmp_path / "pe.csv"
    assert main([
        "encode", "--dataset", str(dataset), "--out", str(out),
        "--dump-pe", "--limit", "2",
    ]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["graph_id", "node"] + [f"pe{k}" for k in range(16)]
    values = [float(v) for v in rows[1][2:]]
    assert all(0.0 <= v <= 1.0 for v in values)


def test_encode_embeddings_csv(tmp_path, dataset):
    out = tmp_path / "emb.csv"
    assert main([
        "encode", "--dataset", str(dataset), "--out", str(out),
        "--limit", "3", "--depth", "2", "--hidden", "12",
    ]) == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "graph_id"
    assert len(rows) == 4
    assert len(rows[1]) == 13
