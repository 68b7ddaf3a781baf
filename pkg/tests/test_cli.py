# test_cli.py
import json
from datetime import timedelta

import pandas as pd
import pytest

import gradcheck
from cli import main
from gradcheck import GradcheckReport, TensorCheck
from storage import read_grid

SETTINGS = {
    "synthetic": {"height": 20, "width": 20, "timesteps": 30, "box_min": 3, "box_max": 6, "event_types": 2},
    "num_filters": 3, "time_embed_dim": 8, "memory_capacity": 2, "embed_dim": 8, "depth": 2,
    "num_heads": 2, "window_size": 2, "patch_height": 4, "patch_width": 4, "batch_size": 2,
}


def run(*argv):
    """Run the CLI and return its exit code (0 when it returns normally)."""
    try:
        main([str(a) for a in argv])
    except SystemExit as e:
        return e.code
    return 0


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    config = root / "config.json"
    config.write_text(json.dumps({**SETTINGS, "log_file": str(root / "cli.log")}))
    base = ["--config", config, "--seed", 3]
    assert run(*base, "synth", "--out", root / "data") == 0
    assert run(*base, "fit-stats", "--data", root / "data", "--out", root / "stats") == 0
    assert run(*base, "train", "--data", root / "data", "--out", root / "run",
               "--epochs", 2, "--max-steps", 3) == 0
    return root, base


def test_synth_writes_dataset(workspace):
    root, _ = workspace
    manifest = json.loads((root / "data" / "dataset.json").read_text())
    assert manifest["synthetic"]["height"] == 20
    assert len(list((root / "data").glob("*.wgrid"))) == 30


def test_existing_output_needs_force(workspace):
    root, base = workspace
    assert run(*base, "synth", "--out", root / "data") == 2
    assert run(*base, "fit-stats", "--data", root / "data", "--out", root / "stats") == 2


def test_fit_stats_outputs(workspace):
    root, _ = workspace
    stats = json.loads((root / "stats" / "normalization.json").read_text())
    assert len(stats["mean"]) == len(stats["std"]) == 2
    assert (root / "stats" / "climatology.npz").exists()


def test_analyze_hfa(workspace):
    root, base = workspace
    out = root / "hfa"
    assert run(*base, "analyze-hfa", "--data", root / "data", "--out", out) == 0
    summary = json.loads((out / "hfa_summary.json").read_text())
    assert summary["w1_normal_extreme"] >= 0
    assert len(pd.read_csv(out / "hfa_report.csv")) > 0


def test_build_memory_and_inspect(workspace):
    root, base = workspace
    pool = root / "pool.epamem"
    assert run(*base, "build-memory", "--data", root / "data", "--out", pool) == 0
    out = root / "epa.json"
    assert run(*base, "epa", "inspect", "--pool", pool, "--type", "flood", "--out", out) == 0
    result = json.loads(out.read_text())
    assert result["capacity"] == 2
    assert result["type"]["name"] == "flood"
    assert set(result["summary"]) >= {"flood", "normal"}


def test_train_outputs(workspace):
    root, _ = workspace
    run_dir = root / "run"
    for name in ("best.uxck", "trace.jsonl", "pool.epamem", "normalization.json"):
        assert (run_dir / name).exists(), name


def test_evaluate(workspace):
    root, base = workspace
    out = root / "eval"
    assert run(*base, "evaluate", "--checkpoint", root / "run" / "best.uxck", "--data", root / "data",
               "--pool", root / "run" / "pool.epamem", "--climatology", root / "stats" / "climatology.npz",
               "--scale", "raw", "--per-type", "--out", out) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["scale"] == "raw"
    assert len(report["general"]["mae"]) == 2
    assert "per_type" in report
    frame = pd.read_csv(out / "report.csv")
    assert frame["variable"].tolist()[-1] == "mean"


def test_predict(workspace):
    root, base = workspace
    source = sorted((root / "data").glob("*.wgrid"))[0]
    out = root / "forecast.wgrid"
    assert run(*base, "predict", "--checkpoint", root / "run" / "best.uxck", "--grid", source,
               "--pool", root / "run" / "pool.epamem", "--out", out) == 0
    before, after = read_grid(source), read_grid(out)
    assert after.shape == before.shape
    assert after.timestamp == before.timestamp + timedelta(hours=1)


def test_afm_inspect(workspace):
    root, base = workspace
    out = root / "afm.json"
    assert run(*base, "afm", "inspect", "--checkpoint", root / "run" / "best.uxck", "--data", root / "data",
               "--pool", root / "run" / "pool.epamem", "--time", 2, "--region", 1, "--out", out) == 0
    result = json.loads(out.read_text())
    assert result["region"] == 1
    assert len(result["filters"]) == 3


def test_epa_attention_weights(workspace):
    root, base = workspace
    out = root / "weights.json"
    assert run(*base, "epa", "inspect", "--pool", root / "run" / "pool.epamem",
               "--checkpoint", root / "run" / "best.uxck", "--data", root / "data", "--out", out) == 0
    weights = json.loads(out.read_text())["inter_type_weights"]
    assert weights["types"] == ["flood", "marine_thunderstorm_wind", "normal"]


def test_epa_checkpoint_needs_input(workspace):
    root, base = workspace
    assert run(*base, "epa", "inspect", "--pool", root / "run" / "pool.epamem",
               "--checkpoint", root / "run" / "best.uxck", "--out", root / "x.json") == 2


def test_missing_data_exits_3(workspace):
    root, base = workspace
    assert run(*base, "fit-stats", "--data", root / "absent", "--out", root / "s2") == 3


def test_region_mismatch_exits_2(workspace, tmp_path):
    root, _ = workspace
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({**SETTINGS, "region_height": 7, "log_file": str(tmp_path / "x.log")}))
    assert run("--config", config, "fit-stats", "--data", root / "data", "--out", tmp_path / "s") == 2


def test_no_command_exits_2():
    assert run() == 2


def test_gradcheck_failure_exits_4(workspace, monkeypatch, capsys):
    _, base = workspace
    failing = GradcheckReport("broken", 1e-4, [TensorCheck("w", 0.5, 1)])
    monkeypatch.setattr(gradcheck, "SUITES", {"broken": lambda seed, samples: failing})
    assert run(*base, "--log-level", "CRITICAL", "gradcheck") == 4
    out = capsys.readouterr().out
    assert json.loads(out[out.index("{"):out.rindex("}") + 1]) == {"broken": 0.5}


@pytest.mark.parametrize("content", [None, "{not json", "[1, 2]"])
def test_unreadable_stats_exits_3(workspace, tmp_path, content):
    root, base = workspace
    stats = tmp_path / "stats.json"
    if content is not None:
        stats.write_text(content)
    assert run(*base, "analyze-hfa", "--data", root / "data", "--stats", stats, "--out", tmp_path / "hfa") == 3
    assert not (tmp_path / "hfa").exists()


@pytest.mark.parametrize("content", [None, "{not json", "[1, 2]"])
def test_unreadable_spec_exits_3(workspace, tmp_path, content):
    _, base = workspace
    spec = tmp_path / "spec.json"
    if content is not None:
        spec.write_text(content)
    assert run(*base, "synth", "--spec", spec, "--out", tmp_path / "data") == 3
    assert not (tmp_path / "data").exists()
