import json

from cpsfog.cli import main

TINY = "seed: 1\nduration: 1h\ndevices: [{domain: SmartHome, count: 5}]\n"


def _write(tmp_path, text, name="s.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_run_and_report(tmp_path, capsys):
    s = _write(tmp_path, TINY)
    assert main(["run", "--scenario", s, "--out", str(tmp_path / "o"), "--duration-override", "30min"]) == 0
    assert "records" in capsys.readouterr().out
    out = tmp_path / "o"
    assert main(["report", "--trace", str(out / "trace.jsonl"), "--truth", str(out / "truth.jsonl"),
                 "--out", str(tmp_path / "m.json")]) == 0
    assert json.loads((tmp_path / "m.json").read_text()) == json.loads((out / "metrics.json").read_text())


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("CPSFOG_OUT_DIR", str(tmp_path / "env"))
    assert main(["run", "--scenario", _write(tmp_path, TINY), "--seed", "3"]) == 0
    assert (tmp_path / "env" / "trace.jsonl").exists()


def test_validate(tmp_path, capsys):
    assert main(["validate", "--scenario", _write(tmp_path, TINY)]) == 0
    assert "5 devices" in capsys.readouterr().out


def test_invalid_scenario_exits_1(tmp_path, capsys):
    bad = _write(tmp_path, "duration: -1\ndevices: [{domain: Nowhere}]\n")
    assert main(["validate", "--scenario", bad]) == 1
    err = capsys.readouterr().err
    assert "duration" in err and "Nowhere" in err
    assert main(["run", "--scenario", _write(tmp_path, "seed: [", "y.yaml")]) == 1


def test_bad_override_and_toggle_exit_1(tmp_path):
    s = _write(tmp_path, TINY)
    assert main(["run", "--scenario", s, "--duration-override", "later"]) == 1
    assert main(["compare", "--scenario", s, "--toggles", "nitro=on"]) == 1


def test_runtime_errors_exit_2(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "missing.yaml")]) == 2
    assert main(["report", "--trace", str(tmp_path / "a"), "--truth", str(tmp_path / "b")]) == 2


def test_compare_prints_table(tmp_path, capsys):
    s = _write(tmp_path, TINY)
    assert main(["compare", "--scenario", s, "--out", str(tmp_path / "c"),
                 "--toggles", "context_reuse=on", "nas_small_data=off"]) == 0
    text = capsys.readouterr().out
    assert "context_reuse=on" in text and "nas_small_data=off" in text
