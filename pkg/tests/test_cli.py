import json

import pytest

from segproof.cli import main


def run(args):
    return main(args)


def test_flag_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--out", "x"])  # missing --seed
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        main(["no-such-command"])


def test_missing_dataset_exits_one(tmp_path):
    assert main(["eval", "--dataset", str(tmp_path / "none.json"),
                 "--against-gt"]) == 1


def test_synth_then_eval_zero_vi(tmp_path, capsys):
    out = tmp_path / "d"
    assert run(["synth", "--out", str(out), "--sections", "2", "--cells", "6",
                "--width", "100", "--height", "100", "--seed", "7"]) == 0
    assert run(["eval", "--dataset", str(out / "manifest.json"),
                "--against-gt"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["vi"]["median"] == pytest.approx(0.0, abs=1e-12)
    assert report["census"] == {"split_errors": 0, "merge_errors": 0}


def test_rank_jobs_parallelism_is_deterministic(tmp_path, trained_tiny):
    from segproof import cnn
    from conftest import make_dataset
    from segproof.core import save_labels

    ds = make_dataset(n_sections=3, n_cells=6, size=140, splits=3, merges=0)
    manifest = save_labels(ds, tmp_path / "d")
    ckpt = tmp_path / "w.ckpt"
    cnn.save_checkpoint(trained_tiny, ckpt)
    for jobs, name in ((1, "r1"), (3, "r3")):
        assert run(["rank", "--dataset", str(manifest), "--checkpoint",
                    str(ckpt), "--out", str(tmp_path / name),
                    "--jobs", str(jobs), "--seed", "2"]) == 0
    assert (tmp_path / "r1" / "rankings.jsonl").read_bytes() == \
        (tmp_path / "r3" / "rankings.jsonl").read_bytes()


def test_synth_is_byte_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run(["synth", "--out", str(tmp_path / name), "--sections", "2",
                    "--cells", "6", "--width", "100", "--height", "100",
                    "--splits", "2", "--merges", "1", "--seed", "3"]) == 0
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


@pytest.mark.slow
def test_full_cli_pipeline(tmp_path, capsys):
    data = tmp_path / "data"
    train_data = tmp_path / "train_data"
    model = tmp_path / "model"
    fixed = tmp_path / "fixed"

    common = ["--width", "140", "--height", "140", "--cells", "7"]
    assert run(["synth", "--out", str(train_data), "--sections", "6",
                *common, "--splits", "18", "--seed", "21"]) == 0
    assert run(["synth", "--out", str(data), "--sections", "2",
                *common, "--splits", "4", "--merges", "1", "--seed", "9"]) == 0

    assert run(["build-train", "--dataset", str(train_data / "manifest.json"),
                "--out", str(tmp_path / "patches"), "--patch-size", "25",
                "--seed", "1"]) == 0
    sidecar = json.loads((tmp_path / "patches" / "training_set.json").read_text())
    assert sidecar["count"] > 0

    assert run(["train", "--dataset", str(train_data / "manifest.json"),
                "--out", str(model), "--patch-size", "25",
                "--filters", "12", "12", "--dense-units", "32",
                "--batch-size", "32", "--max-epochs", "40", "--patience", "10",
                "--seed", "5"]) == 0
    ckpt = model / "checkpoint.bin"
    assert ckpt.is_file()

    assert run(["rank", "--dataset", str(data / "manifest.json"),
                "--checkpoint", str(ckpt), "--out", str(tmp_path / "ranks"),
                "--seed", "2"]) == 0
    lines = [json.loads(l) for l in
             (tmp_path / "ranks" / "rankings.jsonl").read_text().splitlines()]
    assert any(l["type"] == "split" for l in lines)

    assert run(["correct", "--dataset", str(data / "manifest.json"),
                "--checkpoint", str(ckpt), "--out", str(fixed),
                "--mode", "oracle", "--seed", "2"]) == 0
    summary = json.loads((fixed / "summary.json").read_text())
    assert summary["final_median_vi"] < summary["initial_median_vi"]
    log_lines = (fixed / "log.jsonl").read_text().splitlines()
    assert len(log_lines) == summary["events"]

    assert run(["correct", "--dataset", str(data / "manifest.json"),
                "--checkpoint", str(ckpt), "--out", str(tmp_path / "auto"),
                "--mode", "auto", "--pt", "0.95", "--seed", "2"]) == 0
    auto_summary = json.loads((tmp_path / "auto" / "summary.json").read_text())
    # acceptance decisions follow the strict threshold rule
    for line in (tmp_path / "auto" / "log.jsonl").read_text().splitlines():
        event = json.loads(line)
        assert event["decision"] == ("accept" if event["score"] > 0.95
                                     else "reject")

    assert run(["eval", "--dataset", str(fixed / "manifest.json"),
                "--against-gt", "--out", str(tmp_path / "report")]) == 0
    report = json.loads((tmp_path / "report" / "report.json").read_text())
    assert report["vi"]["median"] <= summary["initial_median_vi"]
