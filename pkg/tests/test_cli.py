import json

import numpy as np
import pytest

from cogload import cli, evaluation, model, sigio, synth


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def small_files(tmp_path_factory):
    """Short calibration (2 blocks of 30 letters) and a 3-task use session on disk."""
    d = tmp_path_factory.mktemp("cli")
    cfg = synth.SynthConfig(seed=8, n_blocks=2, letters_per_block=30, task_seconds=30.0,
                            task_loads=(0.0, 1.0, 0.2))
    cal = synth.gen_calibration(cfg)
    use = synth.gen_use_session(cfg)
    sigio.write_recording(cal.recording, d / "cal.csv")
    sigio.write_events(cal.events, d / "ev.csv")
    sigio.write_recording(use.recording, d / "use.csv")
    sigio.write_tasks(use.tasks, d / "tasks.csv")
    return d


def test_synth_default_counts(tmp_path, capsys):
    code, out, _ = run(["synth", "--sessions", "calibration", "--seed", 1,
                        "--out-dir", tmp_path], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["n_events"] == 360 and summary["seed"] == 1
    assert summary["events_per_class"] == {"0-back": 180, "2-back": 180}
    assert len(sigio.load_events(tmp_path / "calibration_events.csv")) == 360


def test_synth_deterministic(tmp_path, capsys):
    for sub in ("a", "b"):
        assert run(["synth", "--sessions", "use", "--seed", 4, "--out-dir", tmp_path / sub],
                   capsys)[0] == 0
    for name in ("use.csv", "use_tasks.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_bad_rate_writes_nothing(tmp_path, capsys):
    code, out, err = run(["synth", "--rate", 64, "--out-dir", tmp_path / "x"], capsys)
    assert code == 2 and out == ""
    assert json.loads(err)["error"] == "validation"
    assert not (tmp_path / "x").exists()


def test_chance_command(capsys):
    code, out, _ = run(["chance", 360, "--alpha", 0.01], capsys)
    assert code == 0 and 0.56 <= json.loads(out)["threshold"] <= 0.58
    assert json.loads(run(["chance", 10], capsys)[1])["threshold"] == 1.0
    t = json.loads(run(["chance", 360, "--alpha", 0.5], capsys)[1])["threshold"]
    assert 0.5 < t < 0.51


def test_calibrate_widths(small_files, tmp_path, capsys):
    d = small_files
    base = ["calibrate", "--recording", d / "cal.csv", "--events", d / "ev.csv"]
    code, out, _ = run(base + ["--out-dir", tmp_path / "a"], capsys)
    assert code == 0 and json.loads(out)["feature_width"] == 30
    code, out, _ = run(base + ["--band-set", "low3", "--out-dir", tmp_path / "b"], capsys)
    assert json.loads(out)["feature_width"] == 18
    clf = model.load_classifier(tmp_path / "b" / "model.json")
    assert clf.config.band_set == "low3"


def test_calibrate_missing_events(small_files, tmp_path, capsys):
    code, _, err = run(["calibrate", "--recording", small_files / "cal.csv",
                        "--events", tmp_path / "nope.csv", "--out-dir", tmp_path], capsys)
    assert code == 3 and json.loads(err)["type"] == "FileNotFoundError"
    code, _, err = run(["calibrate", "--recording", small_files / "cal.csv"], capsys)
    assert code == 2


def test_malformed_recording_is_data_error(tmp_path, small_files, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("# cogload-recording v1\n# rate_hz=256\n# channels=a,b\n"
                   "# modalities=EEG,EEG\n1,2\n3\n")
    code, _, err = run(["calibrate", "--recording", bad, "--events", small_files / "ev.csv"],
                       capsys)
    assert code == 3 and "line 6" in json.loads(err)["message"]


def test_invariant_needs_use(small_files, capsys):
    code, _, err = run(["calibrate", "--recording", small_files / "cal.csv", "--events",
                        small_files / "ev.csv", "--reg", "invariant"], capsys)
    assert code == 2 and "--use" in json.loads(err)["message"]


def test_config_file_and_override(small_files, tmp_path, capsys):
    conf = tmp_path / "c.toml"
    conf.write_text(f'band_set = "low3"\nrecording = "{small_files / "cal.csv"}"\n'
                    f'events = "{small_files / "ev.csv"}"\nseed = 5\n')
    code, out, _ = run(["cv", "--config", conf, "--out-dir", tmp_path], capsys)
    rep = json.loads(out)
    assert code == 0 and rep["config"]["band_set"] == "low3" and rep["seed"] == 5
    assert rep["fold_counts"] == [[15, 15], [15, 15]]
    assert rep["chance_level"] == evaluation.chance_level(60, 0.01)
    code, out, _ = run(["cv", "--config", conf, "--band-set", "all5", "--seed", 6,
                        "--out-dir", tmp_path], capsys)
    rep = json.loads(out)
    assert rep["config"]["band_set"] == "all5" and rep["seed"] == 6
    assert json.loads((tmp_path / "cv.json").read_text()) == rep
    conf.write_text("bands = 3\n")
    assert run(["cv", "--config", conf], capsys)[0] == 2


def test_estimate_with_tasks(small_files, tmp_path, capsys):
    d = small_files
    run(["calibrate", "--recording", d / "cal.csv", "--events", d / "ev.csv",
         "--out-dir", tmp_path], capsys)
    code, out, _ = run(["estimate", "--model", tmp_path / "model.json", "--recording",
                        d / "use.csv", "--tasks", d / "tasks.csv", "--out-dir", tmp_path],
                       capsys)
    assert code == 0
    lines = (tmp_path / "series.csv").read_text().splitlines()
    assert lines[0] == "t_start_s,raw_score,workload_index"
    assert len(lines) - 1 == json.loads(out)["n_windows"] == 89
    means = (tmp_path / "task_means.csv").read_text().splitlines()
    assert means[0] == "task_id,mean_index,n_windows,included" and len(means) == 4
    assert (tmp_path / "quarter_means.csv").exists()


def test_permtest_command(small_files, tmp_path, capsys):
    d = small_files
    base = ["permtest", "--recording", d / "cal.csv", "--events", d / "ev.csv", "--use",
            d / "use.csv", "--tasks", d / "tasks.csv", "--band-set", "low3", "--seed", 2]
    code, _, err = run(base + ["--n-perm", 50], capsys)
    assert code == 2 and "at least 100" in json.loads(err)["message"]
    code, out, _ = run(base + ["--n-perm", 100, "--out-dir", tmp_path / "a"], capsys)
    assert code == 0
    rep = json.loads(out)
    assert rep["n_permutations"] == 100 and rep["seed"] == 2 and 0 < rep["p_value"] <= 1
    rows = (tmp_path / "a" / "perm_vectors.csv").read_text().splitlines()
    assert rows[0] == "iteration,task_1,task_2,task_3" and len(rows) == 101
    run(base + ["--n-perm", 100, "--out-dir", tmp_path / "b"], capsys)
    for name in ("permtest.json", "perm_vectors.csv"):
        assert (tmp_path / "a" / name).read_bytes() != b""
        assert (tmp_path / "b" / name).read_text().replace(str(tmp_path / "b"), "") == \
            (tmp_path / "a" / name).read_text().replace(str(tmp_path / "a"), "")


def test_inspect_kinds(small_files, tmp_path, capsys):
    assert json.loads(run(["inspect", small_files / "cal.csv"], capsys)[1])["n_channels"] == 32
    ev = json.loads(run(["inspect", small_files / "ev.csv"], capsys)[1])
    assert ev["labels"] == {"0-back": 30, "2-back": 30}
    junk = tmp_path / "junk.txt"
    junk.write_text("hello\n")
    assert run(["inspect", junk], capsys)[0] == 3


def test_usage_errors(capsys):
    assert run([], capsys)[0] == 2
    assert run(["frobnicate"], capsys)[0] == 2
    assert run(["cv", "--folds", "x"], capsys)[0] == 2


def test_numerical_failure_code(small_files, tmp_path, capsys):
    # a zero-variance recording cannot produce trial covariances
    rec = sigio.load_recording(small_files / "cal.csv")
    flat = sigio.Recording(rec.rate_hz, rec.channel_labels, rec.modalities,
                           np.zeros_like(rec.samples))
    sigio.write_recording(flat, tmp_path / "flat.csv")
    code, _, err = run(["calibrate", "--recording", tmp_path / "flat.csv", "--events",
                        small_files / "ev.csv", "--out-dir", tmp_path], capsys)
    assert code == 4 and json.loads(err)["error"] == "numerical"
