"""Command-line runner: subcommands, config validation, determinism."""

import json
import subprocess

import numpy as np
import pytest

from neqsmc import cli, models, trainer

SAMPLE_TOML = """\
seed = 42

[model]
family = "bernoulli-rbm"
d_v = 4
d_h = 3

[protocol]
steps = 30
theta0 = "zeros"
theta1 = { random_seed = 7, scale = 0.5 }

[kernel]
name = "gibbs"

[sample]
walkers = 400
observables = ["energy", "visible_mean"]
"""

ORDER_TOML = """\
seed = 3

[path]
kind = "mean-shift"

[study]
eps = 1.0
h_values = [0.0625, 0.03125, 0.015625, 0.0078125]
walkers = 256
"""

ORACLE_TOML = """\
seed = 0

[oracle]
probes = 300
"""


def write_sample_cfg(tmp_path, body=SAMPLE_TOML):
    p = tmp_path / "cfg.toml"
    p.write_text(body)
    return str(p)


def make_train_setup(tmp_path, steps=12):
    model = models.make_model("gaussian-mixture", d=1, components=2)
    log_04 = float(np.log(0.4))
    theta_true = model.pack(
        means=[[2.0], [-2.0]],
        log_scales=[[log_04], [log_04]],
        logits=[np.log(0.8), np.log(0.2)],
    )
    rows = model.sample_reference(theta_true, 300, np.random.default_rng(99))
    data_path = tmp_path / "mixture.csv"
    trainer.save_dataset(data_path, trainer.Dataset(rows=rows, kind="continuous"))
    theta0 = [2.0, -2.0, log_04, log_04, 0.0, 0.0]
    body = f"""\
seed = 1

[model]
family = "gaussian-mixture"
d = 1
components = 2

[data]
path = "{data_path}"
kind = "continuous"

[train]
learning_rate = 0.05
steps = {steps}
walkers = 96
kernel = "ula"
step_size = 0.01
theta0 = {theta0}

[baseline]
true_mass_ratio = 4.0
"""
    p = tmp_path / "train.toml"
    p.write_text(body)
    return str(p)


def read_bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------------------
# sample
# ---------------------------------------------------------------------------


def test_sample_runs_and_writes_outputs(tmp_path):
    cfg = write_sample_cfg(tmp_path)
    out = tmp_path / "run"
    assert cli.main(["sample", "--config", cfg, "--out", str(out)]) == 0
    steps = (out / "steps.csv").read_text().strip().split("\n")
    assert len(steps) == 1 + 31  # header + steps 0..30
    header = steps[0].split(",")
    assert header[:5] == ["k", "ess", "log_z", "log_z_se", "resampled"]
    assert "energy" in header and "visible_mean_0" in header
    assert (out / "ensemble.csv").exists()
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 42
    assert summary["config"]["sample"]["walkers"] == 400
    assert summary["final"]["n_walkers"] == 400
    assert summary["final"]["k"] == 30
    # the protocol lands on a 4+3 machine enumerable on the spot
    model = models.make_model("bernoulli-rbm", d_v=4, d_h=3)
    theta1 = 0.5 * np.random.default_rng(7).standard_normal(model.n_params)
    orc = models.enumerate_oracle(model, theta1)
    assert abs(summary["final"]["log_z"] - orc.log_z) < 0.2


def test_sample_byte_determinism(tmp_path):
    cfg = write_sample_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sample", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(["sample", "--config", cfg, "--out", str(out2)]) == 0
    for name in ("steps.csv", "ensemble.csv", "summary.json"):
        assert read_bytes(out1 / name) == read_bytes(out2 / name)


def test_sample_seed_flag_overrides_config(tmp_path):
    cfg = write_sample_cfg(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert cli.main(["sample", "--config", cfg, "--out", str(out1)]) == 0
    assert cli.main(
        ["sample", "--config", cfg, "--out", str(out2), "--seed", "9"]
    ) == 0
    s2 = json.loads((out2 / "summary.json").read_text())
    assert s2["config"]["seed"] == 9
    assert read_bytes(out1 / "ensemble.csv") != read_bytes(out2 / "ensemble.csv")


def test_set_override_reflected_in_summary(tmp_path):
    cfg = write_sample_cfg(tmp_path)
    out = tmp_path / "run"
    assert cli.main(
        ["sample", "--config", cfg, "--out", str(out),
         "--set", "sample.walkers=123"]
    ) == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["sample"]["walkers"] == 123
    assert summary["final"]["n_walkers"] == 123


def test_unknown_config_key_is_config_error(tmp_path, capsys):
    cfg = write_sample_cfg(tmp_path)
    code = cli.main(
        ["sample", "--config", cfg, "--out", str(tmp_path / "o"),
         "--set", "kernel.hh=0.1"]
    )
    assert code == 2
    assert "unknown config key: kernel.hh" in capsys.readouterr().err


def test_missing_kernel_step_size(tmp_path, capsys):
    body = SAMPLE_TOML.replace('family = "bernoulli-rbm"', 'family = "gaussian"')
    body = body.replace("d_v = 4\nd_h = 3", "d = 2")
    body = body.replace('name = "gibbs"', 'name = "ula"')
    cfg = write_sample_cfg(tmp_path, body)
    code = cli.main(["sample", "--config", cfg, "--out", str(tmp_path / "o")])
    assert code == 2
    assert "missing required key: kernel.h" in capsys.readouterr().err


def test_missing_model_family(tmp_path, capsys):
    code = cli.main(["sample", "--out", str(tmp_path / "o")])
    assert code == 2
    assert "missing required key: model.family" in capsys.readouterr().err


def test_unparseable_config(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text("seed = [unclosed\n")
    code = cli.main(["sample", "--config", str(p), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "cannot parse" in capsys.readouterr().err


def test_unknown_observable(tmp_path, capsys):
    cfg = write_sample_cfg(tmp_path)
    code = cli.main(
        ["sample", "--config", cfg, "--out", str(tmp_path / "o"),
         "--set", 'sample.observables=["entropy"]']
    )
    assert code == 2
    assert "unknown observable" in capsys.readouterr().err


def test_set_path_crossing_scalar(tmp_path, capsys):
    cfg = write_sample_cfg(tmp_path)
    code = cli.main(
        ["sample", "--config", cfg, "--out", str(tmp_path / "o"),
         "--set", "model.family.sub=1"]
    )
    assert code == 2
    assert "crosses a scalar" in capsys.readouterr().err


def test_inline_theta_wrong_length(tmp_path, capsys):
    cfg = write_sample_cfg(tmp_path)
    code = cli.main(
        ["sample", "--config", cfg, "--out", str(tmp_path / "o"),
         "--set", "protocol.theta0=[0.0, 1.0]"]
    )
    assert code == 2
    assert "inline vector has length 2, expected 19" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def test_train_runs_with_baseline(tmp_path):
    cfg = make_train_setup(tmp_path)
    out = tmp_path / "run"
    code = cli.main(
        ["train", "--config", cfg, "--out", str(out), "--baseline", "cd1"]
    )
    assert code == 0
    metrics = (out / "metrics.csv").read_text().strip().split("\n")
    assert len(metrics) == 1 + 12
    assert metrics[0].startswith("step,cross_entropy,log_z")
    model, theta = models.load_model(out / "theta_final.json")
    assert model.family == "gaussian-mixture"
    assert theta.shape == (6,)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["theta_file"] == "theta_final.json"
    assert np.isfinite(summary["final_cross_entropy"])
    b = summary["baseline"]
    assert b["method"] == "cd1"
    assert b["metric"] == "mode_mass_ratio"
    comparison = (out / "comparison.csv").read_text().strip().split("\n")
    assert len(comparison) == 3
    assert comparison[1].startswith("jarzynski,mode_mass_ratio,")
    assert comparison[2].startswith("cd1,mode_mass_ratio,")
    assert (out / "theta_baseline.json").exists()


def test_train_byte_determinism(tmp_path):
    cfg = make_train_setup(tmp_path)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert cli.main(["train", "--config", cfg, "--out", str(out)]) == 0
    for name in ("metrics.csv", "summary.json", "theta_final.json"):
        assert read_bytes(out1 / name) == read_bytes(out2 / name)


def test_train_missing_dataset_file(tmp_path, capsys):
    cfg = make_train_setup(tmp_path)
    code = cli.main(
        ["train", "--config", cfg, "--out", str(tmp_path / "o"),
         "--set", 'data.path="/nonexistent/xyz.csv"']
    )
    assert code == 2
    assert "dataset file not found" in capsys.readouterr().err


def test_train_divergence_exit_code(tmp_path, capsys):
    rows = trainer.Dataset(rows=np.full((4, 1), 1.0), kind="continuous")
    data_path = tmp_path / "flat.csv"
    trainer.save_dataset(data_path, rows)
    body = f"""\
seed = 0

[model]
family = "gaussian"
d = 1

[data]
path = "{data_path}"

[train]
learning_rate = 0.1
steps = 5
walkers = 16
kernel = "ula"
step_size = 0.001
theta0 = [0.0, -20.0]
"""
    p = tmp_path / "cfg.toml"
    p.write_text(body)
    code = cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")])
    assert code == 3
    assert "numerical abort" in capsys.readouterr().err


def test_train_rejects_bad_section_value(tmp_path, capsys):
    cfg = make_train_setup(tmp_path)
    code = cli.main(
        ["train", "--config", cfg, "--out", str(tmp_path / "o"),
         "--set", "train.learning_rate=-0.5"]
    )
    assert code == 2
    assert "bad train section" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# order study
# ---------------------------------------------------------------------------


def test_order_study_runs(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(ORDER_TOML)
    out = tmp_path / "run"
    assert cli.main(["order-study", "--config", str(p), "--out", str(out)]) == 0
    rows = (out / "order_study.csv").read_text().strip().split("\n")
    assert rows[0] == "h,rms_delta_a,n"
    assert len(rows) == 5
    summary = json.loads((out / "summary.json").read_text())
    assert summary["config"]["seed"] == 3
    assert len(summary["h_values"]) == 4
    assert np.isfinite(summary["slope"])


def test_order_study_thread_determinism(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(ORDER_TOML)
    out1, out2, out3 = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert cli.main(
        ["order-study", "--config", str(p), "--out", str(out1), "--threads", "1"]
    ) == 0
    assert cli.main(
        ["order-study", "--config", str(p), "--out", str(out2), "--threads", "2"]
    ) == 0
    assert cli.main(
        ["order-study", "--config", str(p), "--out", str(out3), "--threads", "4"]
    ) == 0
    for name in ("order_study.csv", "summary.json"):
        ref = read_bytes(out1 / name)
        assert read_bytes(out2 / name) == ref
        assert read_bytes(out3 / name) == ref


def test_order_study_too_few_h(tmp_path, capsys):
    p = tmp_path / "cfg.toml"
    p.write_text(ORDER_TOML)
    code = cli.main(
        ["order-study", "--config", str(p), "--out", str(tmp_path / "o"),
         "--set", "study.h_values=[0.5, 0.25, 0.125]"]
    )
    assert code == 2
    assert "at least 4" in capsys.readouterr().err


def test_order_study_unknown_path_kind(tmp_path, capsys):
    p = tmp_path / "cfg.toml"
    p.write_text(ORDER_TOML)
    code = cli.main(
        ["order-study", "--config", str(p), "--out", str(tmp_path / "o"),
         "--set", 'path.kind="spiral"']
    )
    assert code == 2
    assert "unknown path kind" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# oracle check
# ---------------------------------------------------------------------------


def test_oracle_check_passes(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(ORACLE_TOML)
    out = tmp_path / "run"
    assert cli.main(["oracle-check", "--config", str(p), "--out", str(out)]) == 0
    report = json.loads((out / "oracle_check.json").read_text())
    assert report["all_pass"] is True
    names = [c["name"] for c in report["checks"]]
    assert names == [
        "gradient_fd",
        "detailed_balance",
        "zeta_split_identity",
        "unbiasedness_bernoulli_rbm",
        "unbiasedness_gaussian_rbm",
    ]
    assert all(c["pass"] for c in report["checks"])


def test_oracle_check_corrupt_increment_fails(tmp_path, capsys):
    p = tmp_path / "cfg.toml"
    p.write_text(ORACLE_TOML)
    out = tmp_path / "run"
    code = cli.main(
        ["oracle-check", "--config", str(p), "--out", str(out),
         "--set", "debug.corrupt_increment=true"]
    )
    assert code == 1
    err = capsys.readouterr().err
    assert "check failed: unbiasedness" in err
    report = json.loads((out / "oracle_check.json").read_text())
    assert report["all_pass"] is False
    by_name = {c["name"]: c["pass"] for c in report["checks"]}
    # the negative control only corrupts protocol increments
    assert by_name["gradient_fd"] is True
    assert by_name["unbiasedness_bernoulli_rbm"] is False


def test_oracle_check_size_cap(tmp_path, capsys):
    p = tmp_path / "cfg.toml"
    p.write_text(ORACLE_TOML)
    code = cli.main(
        ["oracle-check", "--config", str(p), "--out", str(tmp_path / "o"),
         "--set", "oracle.rbm_d_v=20", "--set", "oracle.rbm_d_h=20"]
    )
    assert code == 2
    assert "2^40 joint states exceeds the 2^24 cap" in capsys.readouterr().err


def test_oracle_check_byte_determinism(tmp_path):
    p = tmp_path / "cfg.toml"
    p.write_text(ORACLE_TOML)
    out1, out2 = tmp_path / "a", tmp_path / "b"
    for out in (out1, out2):
        assert cli.main(["oracle-check", "--config", str(p), "--out", str(out)]) == 0
    assert read_bytes(out1 / "oracle_check.json") == read_bytes(out2 / "oracle_check.json")


# ---------------------------------------------------------------------------
# installed entry point
# ---------------------------------------------------------------------------


def test_console_script_smoke(tmp_path):
    cfg = write_sample_cfg(tmp_path)
    out = tmp_path / "run"
    proc = subprocess.run(
        ["neqsmc", "sample", "--config", cfg, "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (out / "summary.json").exists()
