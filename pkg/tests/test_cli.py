import json
import subprocess
import sys

import pytest

from orbitfeat.cli import ExperimentConfig, load_config, main

FAST_BENCH = {
    "task": {"generator": "perm_invariant_regression", "n_mat": 4, "n_train": 40, "n_test": 20},
    "bench": {"methods": ["VanillaRF", "LGIKA_RF"], "layers": [1, 2], "s": 40, "r": 4, "s2": 40},
    "cv": {"lambdas": [1e-2], "sigma_scales": [1.0], "sigma2_scales": [1.0], "folds": 2},
}


def write(tmp_path, name, data):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_bench_writes_outputs_and_resolved_config(tmp_path, capsys):
    cfg = write(tmp_path, "b.json", FAST_BENCH)
    out = tmp_path / "out"
    assert main(["bench", "--config", cfg, "--out", str(out), "--seed", "3"]) == 0
    csv = (out / "results.csv").read_text()
    assert csv.splitlines()[0] == "method,layer,fold,metric,value,seed"
    assert capsys.readouterr().out == csv
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["seed"] == 3 and resolved["command"] == "bench"
    assert resolved["cv"]["folds"] == 2 and resolved["probe"]["seeds"] == 5  # defaults expanded


def test_resolved_config_rerun_identical(tmp_path):
    cfg = write(tmp_path, "b.json", FAST_BENCH)
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "5"]) == 0
    resolved = str(tmp_path / "a" / "resolved_config.json")
    assert main(["bench", "--config", resolved, "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()


def test_json_format(tmp_path):
    cfg = write(tmp_path, "s.json", {"sweep": {"n_mat": 4, "n_points": 10, "r_values": [2], "s_values": [8, 16],
                                               "oracle_r": 2, "template_reps": 1}})
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o"), "--format", "json"]) == 0
    data = json.loads((tmp_path / "o" / "sweep.json").read_text())
    assert data["columns"] == ["axis_value", "spectral_err", "frobenius_err", "r", "seed"]


def test_features_command(tmp_path):
    cfg = write(tmp_path, "f.json", {
        "task": {"generator": "rotated_shapes", "image_size": 8, "n_train": 12, "n_test": 2},
        "distribution": {"type": "von_mises_rotation", "kappa": 1.0},
        "features": {"s": 8, "r": 3, "method": "nys"},
    })
    assert main(["features", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    for name in ("feature_map.bin", "features.csv", "gram.csv", "summary.csv", "resolved_config.json"):
        assert (tmp_path / "o" / name).exists()


def test_dataset_input(tmp_path):
    import numpy as np

    rng = np.random.default_rng(0)
    X = rng.normal(size=(30, 3))
    y = X[:, 0] ** 2
    np.savetxt(tmp_path / "tr.csv", np.column_stack([X[:20], y[:20]]), delimiter=",")
    np.savetxt(tmp_path / "te.csv", np.column_stack([X[20:], y[20:]]), delimiter=",")
    cfg = write(tmp_path, "d.json", {
        "dataset": {"train": str(tmp_path / "tr.csv"), "test": str(tmp_path / "te.csv"),
                    "layout": {"shape": "vector", "d": 3}},
        "distribution": {"type": "uniform_permutation", "n": 3},
        "bench": {"methods": ["VanillaRF", "LGIKA_RF"], "layers": [1], "s": 20, "r": 3},
        "cv": {"lambdas": [0.1], "sigma_scales": [1.0], "folds": 2},
    })
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 0


def test_probe_command(tmp_path):
    cfg = write(tmp_path, "p.json", {"task": {"generator": "perm_invariant_regression", "n_mat": 4, "n_test": 20},
                                     "probe": {"n_values": [20], "s_values": [4], "r_values": [2], "seeds": 2}})
    assert main(["probe", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    cfg2 = write(tmp_path, "p2.json", {"task": {"generator": "rotated_shapes"}})
    assert main(["probe", "--config", cfg2, "--out", str(tmp_path / "o2")]) == 1


@pytest.mark.parametrize(
    "data",
    [
        {"unknown_key": 1},
        {"features": {"s": 0}},
        {"distribution": {"type": "nope"}},
        {"sweep": {"s_values": [64, 16]}},
        {"cv": {"lambdas": []}},
        {"command": "sweep"},
        {"task": {"generator": "perm_invariant_regression"}, "dataset": {"train": "x", "layout": {"shape": "vector", "d": 2}}},
    ],
)
def test_config_errors_exit_1(tmp_path, data):
    cfg = write(tmp_path, "bad.json", data)
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 1


def test_missing_config_and_bad_json(tmp_path):
    assert main(["bench"]) == 1
    assert main(["bench", "--config", str(tmp_path / "missing.json")]) == 1
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert main(["bench", "--config", str(p)]) == 1
    assert main(["bogus"]) == 1


def test_runtime_error_exit_2(tmp_path):
    cfg = write(tmp_path, "d.json", {"dataset": {"train": str(tmp_path / "absent.csv"), "test": str(tmp_path / "a.csv"),
                                                 "layout": {"shape": "vector", "d": 2}}})
    assert main(["bench", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_selfcheck_prints_pass_lines(tmp_path, capsys):
    assert main(["selfcheck", "--out", str(tmp_path / "o")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 8 and all(line.startswith("PASS ") for line in lines)


def test_load_config_defaults():
    cfg = load_config(None, "selfcheck", 4, "somewhere")
    assert isinstance(cfg, ExperimentConfig) and cfg.seed == 4 and cfg.out == "somewhere"


def test_console_script_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "orbitfeat.cli", "bench"], capture_output=True, text=True)
    assert r.returncode == 1 and "config" in r.stderr
