import csv
import json

import pytest

from conftest import tiny_config
from pathfl.cli import main


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(tiny_config(rounds=2).dumps())
    return path


def test_gen_data_run_eval_report(tmp_path, cfg_file, capsys):
    data = tmp_path / "data"
    assert main(["gen-data", "--config", str(cfg_file), "--out", str(data)]) == 0
    assert sorted(p.name for p in data.iterdir()) == ["green", "pink", "purple"]
    assert len(list((data / "pink" / "train").glob("img_*.ppm"))) == 6

    run_a = tmp_path / "run_a"
    assert main(["run", "--config", str(cfg_file), "--method", "pathfl", "--no-afa",
                 "--data", str(data), "--out", str(run_a)]) == 0
    assert json.loads((run_a / "config.json").read_text())["afa"] is False
    with open(run_a / "metrics.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 2 * 3

    run_b = tmp_path / "run_b"
    assert main(["run", "--config", str(cfg_file), "--method", "fedavg", "--seed", "3",
                 "--out", str(run_b)]) == 0

    ev = tmp_path / "eval"
    assert main(["eval", "--checkpoint", str(run_a / "model.json"), "--data", str(data),
                 "--out", str(ev)]) == 0
    rows = list(csv.DictReader(open(ev / "eval.csv")))
    assert [r["client"] for r in rows] == ["green", "pink", "purple"]

    table = tmp_path / "cmp.md"
    assert main(["report", "--runs", str(run_a), str(run_b), "--out", str(table)]) == 0
    text = table.read_text()
    assert "pathfl[cse+ssa] (run_a)" in text and "fedavg (run_b)" in text
    capsys.readouterr()


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"rounds": 2, "unknown_knob": 1}))
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    bad.write_text("{broken")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err


def test_io_errors_exit_3(tmp_path, cfg_file, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path / "o")]) == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "none.json"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "e")]) == 3
    assert main(["run", "--config", str(cfg_file), "--data", str(tmp_path / "nowhere"),
                 "--out", str(tmp_path / "o")]) == 3
    capsys.readouterr()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exits_4(tmp_path, capsys):
    path = tmp_path / "hot.json"
    path.write_text(tiny_config(rounds=2, lr=1e300).dumps())
    assert main(["run", "--config", str(path), "--method", "fedavg", "--out", str(tmp_path / "o")]) == 4
    assert "numeric failure" in capsys.readouterr().err


def test_method_is_checked_by_argparse(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--method", "fedsgd", "--out", str(tmp_path)])
    assert exc.value.code == 2
