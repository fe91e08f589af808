import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from app.cli import main
from app.schemas.schemas import ExperimentConfig


def _write_config(tmp_path, document) -> str:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(document))
    return str(path)


def test_plot_functions(tmp_path):
    assert main(["plot-functions", "--out", str(tmp_path)]) == 0
    psi1 = pd.read_csv(tmp_path / "psi1.csv")
    psi2 = pd.read_csv(tmp_path / "psi2.csv")
    expected = ["x1", "continuous", "explicit", "brogliato", "koch", "xiong", "hanan", "proposed"]
    assert list(psi1.columns) == expected
    assert list(psi2.columns) == expected
    assert len(psi1) == 2001
    # implicit-family Ψ2 coincide with ν = 0
    np.testing.assert_array_equal(psi2["proposed"], psi2["brogliato"])
    np.testing.assert_array_equal(psi2["proposed"], psi2["xiong"])
    center = psi1.iloc[1000]
    assert center["x1"] == pytest.approx(0.0, abs=1e-12)
    assert np.all(np.abs(center.drop("x1").to_numpy()) <= 1e-6)


def test_sim_disturbed(tmp_path):
    assert main(["sim-disturbed", "--out", str(tmp_path)]) == 0
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert list(summary.columns) == ["variant", "t_C", "e_f", "diverged_at"]
    assert list(summary["variant"]) == ["explicit", "brogliato", "koch", "xiong", "hanan", "proposed"]
    assert summary["diverged_at"].isna().all()
    e_f = dict(zip(summary["variant"], summary["e_f"]))
    assert e_f["proposed"] <= 0.01**2 + 1e-12
    assert e_f["brogliato"] > 1e-3
    trace = pd.read_csv(tmp_path / "trace_proposed.csv")
    assert list(trace.columns) == ["t", "x1", "x2", "u", "nu", "delta_bar"]
    assert len(trace) == 2001


def test_sim_undisturbed_single_variant(tmp_path):
    assert main(["sim-undisturbed", "--out", str(tmp_path), "--variant", "proposed", "--variant", "explicit"]) == 0
    summary = pd.read_csv(tmp_path / "summary.csv")
    assert list(summary["variant"]) == ["proposed", "explicit"]
    e_f = dict(zip(summary["variant"], summary["e_f"]))
    assert e_f["proposed"] <= 1e-12
    assert e_f["explicit"] > 0
    assert not (tmp_path / "trace_koch.csv").exists()


def test_sim_output_is_deterministic(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["sim-disturbed", "--out", str(first), "--variant", "xiong"]) == 0
    assert main(["sim-disturbed", "--out", str(second), "--variant", "xiong"]) == 0
    for name in ("trace_xiong.csv", "summary.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_sweep_tc_on_small_grid(tmp_path):
    config = _write_config(
        tmp_path,
        {"grid": {"axis": "alpha", "metric": "t_C", "start": 29.8, "stop": 29.9, "num": 2, "step": None}},
    )
    assert main(["sweep-tc", "--config", config, "--out", str(tmp_path), "--variant", "xiong"]) == 0
    table = pd.read_csv(tmp_path / "sweep_alpha_t_C.csv")
    assert list(table.columns) == ["alpha", "xiong"]
    fast, slow = table["xiong"].tolist()
    assert fast <= 0.12
    assert slow > 5 * fast


def test_trajectories(tmp_path):
    assert main(["trajectories", "--out", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "trajectories.csv")
    assert {"t", "x1_reference", "x2_reference", "x1_proposed_h0.01", "x2_proposed_h0.1"} <= set(table.columns)
    assert table["x1_proposed_h0.1"].isna().sum() > 0
    deviation = pd.read_csv(tmp_path / "trajectory_deviation.csv")
    values = deviation["deviation"].tolist()
    assert list(deviation["run"]) == ["proposed_h0.01", "proposed_h0.05", "proposed_h0.1"]
    assert values[0] <= 0.05
    assert values == sorted(values)


def test_trajectories_reject_uneven_record_step(tmp_path, capsys):
    config = _write_config(tmp_path, {"reference_record_h": 0.003})
    assert main(["trajectories", "--config", config, "--out", str(tmp_path / "out")]) == 2
    assert "record step" in capsys.readouterr().err


def test_verify_defaults(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["verify", "--out", str(first)]) == 0
    assert main(["verify", "--out", str(second)]) == 0
    report = json.loads((first / "verify_report.json").read_text())
    assert report["decrease"]["violation_count"] == 0
    assert report["deadbeat"]["states_tested"] == 10_000
    assert report["deadbeat"]["passed"] is True
    assert report["invariance"]["passed"] is True
    assert report["beta_bound"] is None
    assert (first / "verify_report.json").read_bytes() == (second / "verify_report.json").read_bytes()


def test_verify_rejects_beta_below_bound(tmp_path, capsys):
    config = _write_config(tmp_path, {"gains": {"lipschitz_L": 1.0}, "v_budget": 1.0})
    assert main(["verify", "--config", config, "--out", str(tmp_path / "out")]) == 2
    err = capsys.readouterr().err
    assert "does not exceed" in err
    assert not (tmp_path / "out" / "verify_report.json").exists()


def test_unknown_variant(tmp_path, capsys):
    assert main(["sim-disturbed", "--out", str(tmp_path), "--variant", "foo"]) == 2
    assert "foo" in capsys.readouterr().err


def test_unknown_experiment():
    with pytest.raises(SystemExit) as info:
        main(["sim-everything"])
    assert info.value.code == 2


def test_horizon_shorter_than_step(tmp_path, capsys):
    config = _write_config(tmp_path, {"horizon_T": 0.001})
    assert main(["sim-undisturbed", "--config", config, "--out", str(tmp_path)]) == 2
    assert "horizon" in capsys.readouterr().err


def test_config_must_be_an_object(tmp_path):
    config = _write_config(tmp_path, [1, 2, 3])
    assert main(["sim-undisturbed", "--config", config, "--out", str(tmp_path)]) == 2


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file.txt"
    blocker.write_text("not a directory")
    assert main(["plot-functions", "--out", str(blocker)]) == 3


def test_plot_functions_near_origin(tmp_path):
    config = _write_config(tmp_path, {"function_grid": {"start": -1e-9, "stop": 1e-9, "num": 3}})
    assert main(["plot-functions", "--config", config, "--out", str(tmp_path)]) == 0
    for name in ("psi1.csv", "psi2.csv"):
        center = pd.read_csv(tmp_path / name).iloc[1]
        assert np.all(np.abs(center.to_numpy()) <= 1e-12)


CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize(
    "experiment, name",
    [
        ("sim-disturbed", "fig3b.json"),
        ("sim-undisturbed", "fig4b.json"),
        ("sim-undisturbed", "fig4c.json"),
        ("sweep-accuracy", "fig6b.json"),
        ("sweep-accuracy", "fig6c.json"),
        ("verify", "verify-disturbed.json"),
    ],
)
def test_shipped_configs_are_valid(experiment, name):
    document = json.loads((CONFIGS / name).read_text())
    cfg = ExperimentConfig.build(experiment, document)
    assert cfg.experiment.value == experiment


def test_verify_disturbed_suite(tmp_path):
    assert main(["verify", "--config", str(CONFIGS / "verify-disturbed.json"), "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "verify_report.json").read_text())
    assert report["beta_bound"] == pytest.approx(263.2, abs=0.1)
    assert report["decrease"]["violation_count"] == 0
    assert report["decrease"]["samples"] == 100_000
