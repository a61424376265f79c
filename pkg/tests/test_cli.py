import csv
import json
import subprocess
import sys

import pytest

from afsl.cli import EXIT_CONFIG, EXIT_MISSING, EXIT_NUMERIC, EXIT_OK, build_table, main
from afsl.data import DISTORTION_KINDS

SMALL = {
    "seed": 0,
    "dataset": {"num_videos": 30, "clips_per_video": 2, "T": 2, "H": 8, "W": 8},
    "train": {"regime": "afsl", "steps": 3},
    "conditions": ["clean", "pgd2"],
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.json"
    cfg.write_text(json.dumps(SMALL))
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data")]) == EXIT_OK
    assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "run")]) == EXIT_OK
    return root, cfg


def test_gen_data_prints_hashes_and_refuses_overwrite(workspace, capsys, tmp_path):
    _, cfg = workspace
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_OK
    first = capsys.readouterr().out
    assert "manifest_hash" in first and "config_hash" in first
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_CONFIG
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d"), "--force"]) == EXIT_OK
    assert capsys.readouterr().out == first


def test_train_run_directory(workspace):
    root, _ = workspace
    run = root / "run"
    assert not (run / "INCOMPLETE").exists()
    for name in ("config.json", "metrics.jsonl", "report.json", "checkpoint/manifest.json"):
        assert (run / name).exists(), name
    config_hash = json.loads((run / "config.json").read_text())["config_hash"]
    lines = [json.loads(l) for l in (run / "metrics.jsonl").read_text().splitlines()]
    assert len(lines) == 3
    for rec in lines:
        assert {"step", "dcl", "asl", "srl", "total", "grad_norm"} <= set(rec)
        assert rec["config_hash"] == config_hash
    report = json.loads((run / "report.json").read_text())
    assert [r["condition"] for r in report["results"]] == ["clean", "pgd2"]
    assert report["meta"]["config_hash"] == config_hash


def test_eval_writes_report_and_csv(workspace, tmp_path):
    root, _ = workspace
    out = tmp_path / "ev"
    code = main(["eval", "--checkpoint", str(root / "run/checkpoint"), "--data", str(root / "data"),
                 "--conditions", "clean,fgsm", "--out", str(out)])
    assert code == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert len(report["results"]) == 2
    text = (out / "results.csv").read_text().splitlines()
    assert text[0] == f"# config_hash={report['meta']['config_hash']}"
    rows = list(csv.DictReader(text[1:]))
    assert [r["condition"] for r in rows] == ["clean", "fgsm"]


def test_eval_transfer_without_surrogate_is_config_error(workspace, tmp_path):
    root, _ = workspace
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--checkpoint", str(root / "run/checkpoint"), "--data", str(root / "data"),
              "--conditions", "transfer", "--out", str(tmp_path / "t")])
    assert exc.value.code == EXIT_CONFIG


def test_eval_transfer_with_surrogate(workspace, tmp_path):
    root, _ = workspace
    ck = str(root / "run/checkpoint")
    assert main(["eval", "--checkpoint", ck, "--surrogate", ck, "--data", str(root / "data"),
                 "--conditions", "transfer:steps=2", "--out", str(tmp_path / "t")]) == EXIT_OK


def test_missing_artifacts(workspace, tmp_path):
    root, _ = workspace
    assert main(["eval", "--checkpoint", str(tmp_path / "nope"), "--data", str(root / "data"), "--out", str(tmp_path / "e")]) == EXIT_MISSING
    assert main(["train", "--config", str(tmp_path / "missing.yaml"), "--out", str(tmp_path / "r")]) == EXIT_MISSING
    assert main(["tables", str(tmp_path / "nothing")]) == EXIT_MISSING


def test_bad_config_is_exit_2(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"regime": "mixup"}}))
    assert main(["train", "--config", str(bad), "--out", str(tmp_path / "r")]) == EXIT_CONFIG
    assert main(["eval", "--checkpoint", "x", "--data", "y", "--conditions", "sobel", "--out", str(tmp_path / "e")]) == EXIT_CONFIG


def test_sweep_grid(workspace, tmp_path):
    root, _ = workspace
    out = tmp_path / "sw"
    assert main(["sweep", "--checkpoint", str(root / "run/checkpoint"), "--data", str(root / "data"),
                 "--distortions", "--out", str(out)]) == EXIT_OK
    report = json.loads((out / "report.json").read_text())
    assert len(report["results"]) == 35
    lines = (out / "distortion.csv").read_text().splitlines()
    rows = list(csv.DictReader(lines[1:]))
    assert len(rows) == 40
    assert {r["kind"] for r in rows} == set(DISTORTION_KINDS) | {"average"}
    assert main(["sweep", "--checkpoint", str(root / "run/checkpoint"), "--data", str(root / "data"),
                 "--distortions", "fisheye", "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_tables(workspace, tmp_path):
    root, _ = workspace
    out = tmp_path / "tab"
    assert main(["tables", str(root / "run"), "--out", str(out)]) == EXIT_OK
    lines = (out / "table.csv").read_text().splitlines()
    rows = list(csv.DictReader(lines[1:]))
    report = json.loads((root / "run/report.json").read_text())
    assert float(rows[0]["clean"]) == report["results"][0]["auc_video"]
    assert (out / "table.txt").exists()


def test_tables_leave_missing_cells_blank(tmp_path):
    for name, conds in (("a", ["clean", "pgd10"]), ("b", ["clean"])):
        (tmp_path / name).mkdir()
        results = [{"condition": c, "auc_video": 0.5, "auc_clip": 0.5, "accuracy": 0.5} for c in conds]
        (tmp_path / name / "report.json").write_text(json.dumps({"meta": {}, "results": results}))
    columns, rows = build_table([tmp_path / "a", tmp_path / "b"])
    assert columns == ["run", "clean", "pgd10"]
    assert "pgd10" not in rows[1]


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck"]) == EXIT_OK
    assert main(["gradcheck", "--tolerance", "1e-12"]) == EXIT_NUMERIC
    assert "worst" in capsys.readouterr().out


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "afsl.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("gen-data", "train", "eval", "sweep", "tables", "gradcheck"):
        assert cmd in out.stdout


def test_global_flags_after_subcommand(workspace, tmp_path):
    _, cfg = workspace
    assert main(["gen-data", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / "d4")]) == EXIT_OK
    assert main(["--seed", "4", "--out", str(tmp_path / "d5"), "gen-data", "--config", str(cfg)]) == EXIT_OK
    a = json.loads((tmp_path / "d4/manifest.json").read_text())
    b = json.loads((tmp_path / "d5/manifest.json").read_text())
    assert a == b


def test_multi_run_config_writes_one_dir_per_run(workspace, tmp_path):
    root, _ = workspace
    cfg = dict(SMALL, conditions=["clean"], runs=[{"name": "a", "train": {"regime": "clean"}}, {"name": "b", "split": {"kind": "leave_one_out", "family": "smoothing"}}])
    path = tmp_path / "multi.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--data", str(root / "data"), "--out", str(tmp_path / "m")]) == EXIT_OK
    for name in ("a", "b"):
        assert (tmp_path / "m" / name / "report.json").exists()
    run_b = json.loads((tmp_path / "m/b/config.json").read_text())["run"]
    assert run_b["split"]["family"] == "smoothing"
