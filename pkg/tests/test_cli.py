import json

import pytest

from spkdlg.checkpoint import read_checkpoint_header
from spkdlg.cli import compute_input_hash, main

TINY = ["--hidden-dim", "4", "--embedding-dim", "6", "--filters", "3", "--batch-size", "16"]


@pytest.fixture
def synth_corpus(tmp_path, registry):
    out = tmp_path / "synth"
    code = main(["synth", "--sessions", "12", "--turns", "6", "--seed", "3", "--out", str(out)])
    assert code == 0
    return out / "corpus.jsonl"


def _train(corpus, out, *extra):
    return main(
        ["train", "--corpus", str(corpus), "--out", str(out), "--epochs", "2", "--mode", "nl", "--role-split"]
        + TINY
        + list(extra)
    )


def test_synth_writes_corpus_and_tables(synth_corpus):
    assert synth_corpus.exists()
    assert synth_corpus.with_name("corpus.tables.json").exists()


def test_train_writes_artifacts_and_registers_run(tmp_path, synth_corpus, registry, capsys):
    out = tmp_path / "run"
    assert _train(synth_corpus, out, "--guidance") == 0
    stdout = capsys.readouterr().out
    assert "best epoch:" in stdout
    assert "final guidance:" in stdout

    lines = (out / "metrics.tsv").read_text().splitlines()
    assert [line.split("\t")[0] for line in lines] == ["1", "2"]
    assert lines[0].split("\t")[3] == "-"

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["model_config"]["intermediate_guidance"] is True
    assert set(manifest["split_sessions"]) == {"train", "dev", "test"}
    header = read_checkpoint_header(out / "model.ckpt")
    assert header["metadata"]["input_hash"] == manifest["input_hash"]

    (run,) = registry.get_run_history()
    assert run["status"] == "finished"
    assert len(run["epochs"]) == 2


def test_training_twice_is_byte_identical(tmp_path, synth_corpus):
    assert _train(synth_corpus, tmp_path / "a") == 0
    assert _train(synth_corpus, tmp_path / "b") == 0
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()
    assert (tmp_path / "a" / "metrics.tsv").read_text() == (tmp_path / "b" / "metrics.tsv").read_text()


def test_evaluate_predict_and_tune(tmp_path, synth_corpus, capsys):
    run = tmp_path / "run"
    assert _train(synth_corpus, run) == 0
    checkpoint = str(run / "model.ckpt")
    capsys.readouterr()

    report_dir = tmp_path / "report"
    code = main(["evaluate", "--checkpoint", checkpoint, "--corpus", str(synth_corpus), "--out", str(report_dir)])
    assert code == 0
    assert "average F1:" in capsys.readouterr().out
    assert (report_dir / "report_lu.txt").exists()
    assert (report_dir / "report_lu.tsv").read_text().startswith("label\tsupport")

    pred_dir = tmp_path / "pred"
    assert main(["predict", "--checkpoint", checkpoint, "--corpus", str(synth_corpus), "--out", str(pred_dir)]) == 0
    records = [json.loads(line) for line in (pred_dir / "predictions.jsonl").read_text().splitlines()]
    assert records and all(set(r) == {"session", "turn", "lu"} for r in records)

    assert main(["tune-threshold", "--checkpoint", checkpoint, "--corpus", str(synth_corpus)]) == 0
    assert "best threshold" in capsys.readouterr().out


def test_evaluate_twice_gives_identical_reports(tmp_path, synth_corpus, registry):
    run = tmp_path / "run"
    assert _train(synth_corpus, run) == 0
    for name in ("first", "second"):
        args = ["evaluate", "--checkpoint", str(run / "model.ckpt"), "--corpus", str(synth_corpus)]
        assert main(args + ["--out", str(tmp_path / name)]) == 0
    for report in ("report_lu.txt", "report_lu.tsv"):
        assert (tmp_path / "first" / report).read_bytes() == (tmp_path / "second" / report).read_bytes()


def test_gradcheck_ops_only_passes(capsys):
    assert main(["gradcheck", "--ops-only"]) == 0
    assert "checks passed" in capsys.readouterr().out


def test_unknown_flag_is_a_usage_error():
    with pytest.raises(SystemExit) as info:
        main(["train", "--no-such-flag"])
    assert info.value.code == 2


@pytest.mark.parametrize(
    "flags",
    [
        ["--threshold", "1.5"],
        ["--guidance"],
        ["--mode", "none", "--role-split"],
    ],
)
def test_invalid_configuration_exits_2(tmp_path, registry, flags):
    assert main(["train", "--corpus", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "o")] + flags) == 2


def test_missing_corpus_exits_1(tmp_path, registry, capsys):
    code = main(["train", "--corpus", str(tmp_path / "absent.jsonl"), "--out", str(tmp_path / "o")])
    assert code == 1
    assert "no such file" in capsys.readouterr().err


def test_missing_checkpoint_exits_1(tmp_path, synth_corpus):
    assert main(["evaluate", "--checkpoint", str(tmp_path / "none.ckpt"), "--corpus", str(synth_corpus)]) == 1


def test_input_hash_tracks_file_bytes_and_configs(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("abc\n")
    base = compute_input_hash([path], [{"a": 1}])
    assert base == compute_input_hash([path], [{"a": 1}])
    assert base != compute_input_hash([path], [{"a": 2}])
    path.write_text("abd\n")
    assert base != compute_input_hash([path], [{"a": 1}])
