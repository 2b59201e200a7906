import json
import os

import numpy as np
import pytest

from specdiff.cli import main

SMALL_CONFIG = """
[gmm]
d = 2
n_comp = 4
seed = 3

[sampler]
K = 20
eps = 0.25

[speculative]
strategy = frozen
L = 5

[run]
n_chains = 50
seed = 1

[output]
n_proj = 16
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text(SMALL_CONFIG)
    return str(path)


def test_sample_writes_reports(tmp_path, config_file, capsys):
    out = tmp_path / "out"
    rc = main(["--config", config_file, "--out", str(out), "sample"])
    assert rc == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["speculative"]["nfe_parallel"] < stats["target"]["nfe_parallel"]
    assert "sliced_w2" in stats and "ks_per_coordinate" in stats
    lines = (out / "samples.csv").read_text().splitlines()
    assert lines[0] == "run,chain,x0,x1"
    assert len(lines) == 1 + 2 * 50


def test_sample_byte_identical_rerun(tmp_path, config_file):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["--config", config_file, "--out", str(out1), "sample"]) == 0
    assert main(["--config", config_file, "--out", str(out2), "sample"]) == 0
    assert (out1 / "stats.json").read_bytes() == (out2 / "stats.json").read_bytes()
    assert (out1 / "samples.csv").read_bytes() == (out2 / "samples.csv").read_bytes()


def test_sample_thread_count_invariance(tmp_path, config_file):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert main(["--config", config_file, "--out", str(out1), "--threads", "1",
                 "--set", "run.n_chains=5000", "sample"]) == 0
    assert main(["--config", config_file, "--out", str(out2), "--threads", "4",
                 "--set", "run.n_chains=5000", "sample"]) == 0
    assert (out1 / "samples.csv").read_bytes() == (out2 / "samples.csv").read_bytes()
    assert (out1 / "stats.json").read_bytes() == (out2 / "stats.json").read_bytes()


def test_sample_single_chain_rows(tmp_path, config_file):
    out = tmp_path / "single"
    rc = main(["--config", config_file, "--out", str(out),
               "--set", "run.n_chains=1", "sample"])
    assert rc == 0
    lines = (out / "samples.csv").read_text().splitlines()
    assert len(lines) == 3  # header + one row per run


def test_seed_flag_beats_env(tmp_path, config_file, monkeypatch):
    out_env, out_flag, out_base = tmp_path / "env", tmp_path / "flag", tmp_path / "base"
    assert main(["--config", config_file, "--out", str(out_base), "sample"]) == 0
    monkeypatch.setenv("SPECDIFF_SEED", "99")
    assert main(["--config", config_file, "--out", str(out_env), "sample"]) == 0
    assert main(["--config", config_file, "--out", str(out_flag), "--seed", "1",
                 "sample"]) == 0
    env_bytes = (out_env / "samples.csv").read_bytes()
    assert env_bytes != (out_base / "samples.csv").read_bytes()
    assert (out_flag / "samples.csv").read_bytes() == (out_base / "samples.csv").read_bytes()


def test_sweep_rows(tmp_path, config_file):
    out = tmp_path / "sweep"
    rc = main(["--config", config_file, "--out", str(out),
               "--set", "run.n_chains=40", "sweep", "--param", "eps",
               "--values", "0.25"])
    assert rc == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[0].startswith("strategy,param,value")
    assert len(lines) == 3  # frozen + independent for the single value


def test_sweep_l_param(tmp_path, config_file):
    out = tmp_path / "sweepL"
    rc = main(["--config", config_file, "--out", str(out),
               "--set", "run.n_chains=30", "--set", "sweep.strategies=frozen",
               "sweep", "--param", "L", "--values", "1,5"])
    assert rc == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3


def test_sweep_empty_values_error(config_file):
    assert main(["--config", config_file, "sweep", "--param", "eps", "--values", ""]) == 2


def test_sweep_bad_param(config_file):
    # argparse rejects unknown choices itself, also with exit code 2
    with pytest.raises(SystemExit) as exc:
        main(["--config", config_file, "sweep", "--param", "tau", "--values", "1"])
    assert exc.value.code == 2


def test_couple_json(tmp_path, capsys):
    rc = main(["--seed", "4", "couple", "--mp", "0.5", "--mq", "1.5",
               "--sigma", "0.5", "--n-mc", "50000"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["closed_form_tv"] == pytest.approx(0.6826894921370859, abs=1e-12)
    assert report["empirical_mismatch"] == pytest.approx(report["closed_form_tv"], abs=0.01)
    assert report["naive_mean_trials"] == pytest.approx(1.465, abs=0.1)
    assert all(p > 0.001 for p in report["ks_x_p_values"])


def test_couple_equal_means(capsys):
    rc = main(["--seed", "4", "couple", "--mp", "1.0", "--mq", "1.0",
               "--sigma", "0.5", "--n-mc", "2000"])
    assert rc == 0
    report = json.loads(capsys.readouterr().out)
    assert report["empirical_mismatch"] == 0.0
    assert report["closed_form_tv"] == 0.0
    assert report["naive_mean_trials"] is None


def test_couple_temperature_reduces_rejection(capsys):
    main(["--seed", "4", "couple", "--tau", "1.0", "--n-mc", "50000"])
    base = json.loads(capsys.readouterr().out)
    main(["--seed", "4", "couple", "--tau", "4.0", "--n-mc", "50000"])
    hot = json.loads(capsys.readouterr().out)
    assert hot["empirical_mismatch"] < base["empirical_mismatch"]


def test_couple_sigma_validation(capsys):
    assert main(["couple", "--sigma", "0"]) == 2


def test_analyze_report(tmp_path, config_file):
    out = tmp_path / "an"
    rc = main(["--config", config_file, "--out", str(out),
               "--set", "run.n_chains=40", "analyze", "--n-mc", "2000"])
    assert rc == 0
    report = json.loads((out / "analyze.json").read_text())
    assert report["cost_ratio"] > 0
    assert len(report["overlap_curve_d1_500"]) == 500
    assert report["overlap_curve_d1_500"][0] == pytest.approx(0.67732, abs=1e-4)
    assert report["tail_curve"][0] == 1.0
    assert report["expected_advance"]["0.5"] == pytest.approx(
        (1 - 0.5**5) / 0.5, abs=1e-12)
    assert report["acceptance_bound"]["bound"] <= 1.0


def test_missing_config_error():
    assert main(["--config", "/nonexistent.ini", "sample"]) == 2


def test_bad_override_error(config_file):
    assert main(["--config", config_file, "--set", "notakeyvalue", "sample"]) == 2


def test_bad_eps_error(config_file):
    assert main(["--config", config_file, "--set", "sampler.eps=0", "sample"]) == 2


def test_gmm_path_roundtrip(tmp_path):
    import specdiff as sd

    gmm = sd.random_gmm(2, 3, 0)
    gmm_path = tmp_path / "gmm.json"
    gmm_path.write_text(gmm.to_json())
    cfg = tmp_path / "cfg.ini"
    cfg.write_text(f"""
[gmm]
path = {gmm_path}
[sampler]
K = 10
eps = 0.3
[speculative]
L = 3
[run]
n_chains = 20
seed = 2
[output]
n_proj = 8
""")
    out = tmp_path / "out"
    assert main(["--config", str(cfg), "--out", str(out), "sample"]) == 0
    stats = json.loads((out / "stats.json").read_text())
    assert stats["target"]["d"] == 2
