import hashlib

import numpy as np
import pytest

from streamtta import io as fmt
from streamtta.cli import main

SEEDS = range(5)


def _gen(out, seed=7, extra=()):
    argv = ["gen", "--classes", "4", "--dim", "16", "--count", "2000", "--shift", "1.0",
            "--noise", "0.5", "--seed", str(seed), "--out", str(out), *extra]
    assert main(argv) == 0
    return out


def _inputs(d):
    return ["--prototypes", str(d / "prototypes.bin"), "--stream", str(d / "stream.bin"),
            "--labels", str(d / "labels.txt")]


def _digest(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


@pytest.fixture(scope="module")
def experiments(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    return [_gen(root / f"seed{s}", seed=s) for s in SEEDS]


def _run(d, tmp_path, config_text=None, name="run"):
    args = ["run", *_inputs(d), "--truth", str(d / "truth.json"), "--report", str(tmp_path / f"{name}.jsonl")]
    if config_text is not None:
        (tmp_path / f"{name}.cfg").write_text(config_text)
        args += ["--config", str(tmp_path / f"{name}.cfg")]
    assert main(args) == 0
    return fmt.read_report(tmp_path / f"{name}.jsonl")[0]


def test_gen_writes_four_files_deterministically(tmp_path):
    a = _gen(tmp_path / "a")
    b = _gen(tmp_path / "b")
    assert sorted(p.name for p in a.iterdir()) == ["labels.txt", "prototypes.bin", "stream.bin", "truth.json"]
    assert _digest(a) == _digest(b)
    assert len(fmt.read_labels(a / "labels.txt")) == 2000


def test_gen_rejects_single_class(tmp_path, capsys):
    argv = ["gen", "--classes", "1", "--dim", "4", "--count", "10", "--shift", "1",
            "--noise", "0.5", "--seed", "0", "--out", str(tmp_path)]
    assert main(argv) == 1
    assert "at least 2 classes" in capsys.readouterr().err


def test_gen_requires_seed(tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["gen", "--classes", "2", "--dim", "4", "--count", "10", "--shift", "1",
              "--noise", "0.5", "--out", str(tmp_path)])
    assert exc.value.code == 1


def test_run_missing_stream_is_usage_error(experiments):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--prototypes", str(experiments[0] / "prototypes.bin")])
    assert exc.value.code == 1


def test_run_bad_file_is_data_error(tmp_path, experiments, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"\0" * 12)
    args = ["run", "--prototypes", str(experiments[0] / "prototypes.bin"), "--stream", str(bad)]
    assert main(args) == 2
    assert "bad magic" in capsys.readouterr().err


def test_run_label_count_mismatch(tmp_path, experiments):
    labels = tmp_path / "labels.txt"
    labels.write_text("0\n1\n")
    d = experiments[0]
    args = ["run", "--prototypes", str(d / "prototypes.bin"), "--stream", str(d / "stream.bin"),
            "--labels", str(labels)]
    assert main(args) == 2


def test_run_report_contents(tmp_path, experiments):
    rep = _run(experiments[0], tmp_path)
    assert rep["num_samples"] == 2000
    assert rep["config"]["alpha"] == 0.2 and rep["config"]["covariance_rule"] == "convex"
    assert len(rep["confusion_matrix"]) == 4
    assert sum(map(sum, rep["confusion_matrix"])) == 2000
    for key in ("accuracy", "zero_shot_accuracy", "gda_accuracy", "initial_mu_error", "final_mu_error"):
        assert np.isfinite(rep[key])


def test_run_trace_file(tmp_path, experiments):
    trace = tmp_path / "trace.jsonl"
    d = experiments[0]
    assert main(["run", *_inputs(d), "--trace", str(trace)]) == 0
    records = fmt.read_report(trace)
    assert len(records) == 2000
    assert records[5]["sample_index"] == 5
    assert abs(sum(records[5]["responsibilities"]) - 1) < 1e-12


def test_alpha_zero_run_equals_zero_shot(tmp_path, experiments):
    rep = _run(experiments[1], tmp_path, "alpha = 0\n")
    assert rep["accuracy"] == rep["zero_shot_accuracy"]


def test_adaptation_beats_zero_shot_on_shifted_streams(tmp_path, experiments):
    reps = [_run(d, tmp_path, name=f"r{i}") for i, d in enumerate(experiments)]
    adapted = np.mean([r["accuracy"] for r in reps])
    zero_shot = np.mean([r["zero_shot_accuracy"] for r in reps])
    assert adapted > zero_shot


def test_ablate_table(tmp_path, experiments, capsys):
    d = experiments[2]
    assert main(["ablate", *_inputs(d), "--report", str(tmp_path / "a.jsonl")]) == 0
    rows = fmt.read_report(tmp_path / "a.jsonl")
    assert [r["experiment"] for r in rows] == [
        "full", "no_mean_update", "no_cov_update", "no_alm_prior", "zero_shot"
    ]
    out = capsys.readouterr().out
    assert "no_alm_prior" in out and "%" in out
    off = _run(d, tmp_path, "alpha = 0\nmean_update = false\ncov_update = false\nalm_prior_weighting = false\n")
    assert rows[-1]["accuracy"] == off["accuracy"]
    assert rows[-1]["confusion_matrix"] == off["confusion_matrix"]


def _baseline(d, tmp_path, views, keep, noise, seed=0):
    report = tmp_path / "b.jsonl"
    args = ["baseline", *_inputs(d), "--views", str(views), "--keep", str(keep),
            "--view-noise", str(noise), "--seed", str(seed), "--report", str(report)]
    assert main(args) == 0
    return fmt.read_report(report)[0]


def test_baseline_single_view_is_zero_shot(tmp_path, experiments):
    rep = _baseline(experiments[0], tmp_path, 1, 0.5, 0.3)
    assert rep["accuracy"] == rep["zero_shot_accuracy"]


def test_baseline_zero_noise_is_zero_shot(tmp_path, experiments):
    rep = _baseline(experiments[0], tmp_path, 6, 0.5, 0.0)
    assert rep["accuracy"] == rep["zero_shot_accuracy"]


def test_baseline_rejects_bad_views(tmp_path, experiments):
    args = ["baseline", *_inputs(experiments[0]), "--views", "0", "--keep", "0.5",
            "--view-noise", "0.05", "--seed", "0"]
    assert main(args) == 1


def test_baseline_near_zero_shot_and_below_adaptation(tmp_path, experiments):
    base, zs, adapted = [], [], []
    for i, d in enumerate(experiments):
        rep = _baseline(d, tmp_path, 8, 0.5, 0.05, seed=i)
        base.append(rep["accuracy"])
        zs.append(rep["zero_shot_accuracy"])
        adapted.append(_run(d, tmp_path, name=f"b{i}")["accuracy"])
    assert abs(np.mean(base) - np.mean(zs)) < 0.03
    assert np.mean(base) < np.mean(adapted)
