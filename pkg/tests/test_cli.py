import json

import numpy as np
import pytest
from PIL import Image

from depthfuse import cli, gradcheck
from depthfuse.dataio import load_depth_png
from depthfuse.ndcore import ops
from depthfuse.ndcore.tensor import make_result

TINY = ["--synthetic", "--synthetic_frames", "2", "--val_frames", "1", "--synth_height", "32",
        "--synth_width", "64", "--synth_lines", "8", "--C", "8", "--N", "1", "--K", "3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = cli.main(["train", *TINY, "--epochs_l2", "1", "--epochs_combined", "1", "--out", str(out)])
    assert code == cli.EXIT_OK
    return out


def test_train_outputs(trained):
    log = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
    assert [e["phase"] for e in log] == ["l2", "combined"]
    assert all({"loss", "lr", "val_rmse_mm"} <= set(e) for e in log)
    assert (trained / "checkpoint.bin").is_file()
    assert "epochs_l2 = 1" in (trained / "resolved_config.txt").read_text()


def test_eval_writes_report_and_is_deterministic(trained, tmp_path):
    args = ["eval", *TINY, "--checkpoint", str(trained / "checkpoint.bin")]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == cli.EXIT_OK
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == cli.EXIT_OK
    a = (tmp_path / "a" / "metrics.txt").read_text()
    assert a == (tmp_path / "b" / "metrics.txt").read_text()
    assert "rmse_mm" in a and "imae_1_per_km" in a


def test_predict_viz_only_with_flag(trained, tmp_path):
    args = ["predict", *TINY, "--checkpoint", str(trained / "checkpoint.bin")]
    assert cli.main(args + ["--out", str(tmp_path / "plain")]) == cli.EXIT_OK
    assert not (tmp_path / "plain" / "viz").exists()
    assert cli.main(args + ["--viz", "--out", str(tmp_path / "v")]) == cli.EXIT_OK
    pngs = sorted((tmp_path / "v" / "viz").glob("*.png"))
    assert len(pngs) == 1 and np.array(Image.open(pngs[0])).shape == (32, 64, 3)
    pred = load_depth_png(next((tmp_path / "v" / "pred").glob("*.png")))
    assert pred.shape == (32, 64)


def test_config_file_and_dashed_flags(tmp_path, trained):
    (tmp_path / "run.txt").write_text((trained / "resolved_config.txt").read_text())
    args = ["eval", "--config", str(tmp_path / "run.txt"), "--checkpoint", str(trained / "checkpoint.bin"),
            "--viz-max-depth", "50", "--out", str(tmp_path / "o")]
    assert cli.main(args) == cli.EXIT_OK
    assert "viz_max_depth = 50.0" in (tmp_path / "o" / "resolved_config.txt").read_text()


def test_exit_codes(tmp_path, trained):
    assert cli.main(["train", "--C", "7", "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    (tmp_path / "bad.txt").write_text("learning_rate = 1\n")
    assert cli.main(["train", "--config", str(tmp_path / "bad.txt")]) == cli.EXIT_CONFIG
    assert cli.main(["eval", "--out", str(tmp_path / "nothing")]) == cli.EXIT_DATA
    assert cli.main(["train", "--dataset", str(tmp_path / "missing"), "--out", str(tmp_path)]) == cli.EXIT_DATA
    mismatch = ["train", *TINY[:-4], "--C", "16", "--N", "1", "--epochs_l2", "1", "--epochs_combined", "1",
                "--resume", str(trained / "checkpoint.bin"), "--out", str(tmp_path / "r")]
    assert cli.main(mismatch) == cli.EXIT_CONFIG


def test_unknown_flag_is_rejected():
    with pytest.raises(SystemExit) as exc:
        cli.main(["train", "--learning_rate", "1"])
    assert exc.value.code == 2


def corrupted_relu(x):
    return make_result(np.maximum(x.data, 0), (x,), lambda g: (g * 2.0 * (x.data > 0),), "relu")


def test_gradcheck_names_corrupted_op(monkeypatch, capsys, tmp_path):
    relu_case = next(c for c in gradcheck.CASES if c.name == "relu")
    conv_case = next(c for c in gradcheck.CASES if c.name == "linear")
    monkeypatch.setattr(gradcheck, "CASES", [conv_case, relu_case])
    monkeypatch.setattr(ops, "relu", corrupted_relu)
    code = cli.main(["gradcheck", "--gradcheck_seeds", "2", "--out", str(tmp_path)])
    text = capsys.readouterr().out
    assert code == cli.EXIT_VERIFY
    assert "FAILED: relu" in text
    assert any(line.startswith("linear") and line.endswith("PASS") for line in text.splitlines())


def test_bench_report(tmp_path, capsys):
    code = cli.main(["bench", "--bench_points", "300", "--bench_queries", "20", "--bench_repeats", "2",
                     "--C", "4", "--out", str(tmp_path)])
    assert code == cli.EXIT_OK
    report = json.loads((tmp_path / "bench.json").read_text())
    assert [r["points"] for r in report["knn"]] == [30, 100, 300]
    for r in report["knn"]:
        assert {"min_s", "median_s"} <= set(r["tree_query"]) and r["brute_query"]["min_s"] > 0
    assert "forward_backward" in report["contconv"] and "forward" in report["block"]
    assert "KNN" in capsys.readouterr().out
