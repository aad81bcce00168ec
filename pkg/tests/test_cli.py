"""End-to-end command line checks: exit codes, outputs, manifest, determinism."""

import hashlib
import json
import subprocess
import sys
from pathlib import Path

import jsonschema
import pytest

from regplay.cli import main

FAST_PATTERN = [
    "--set", "grid.width=5", "--set", "grid.height=5", "--set", "grid.entities=3",
    "--set", "grid.persistency=2",
    "--set", "planner.samples=8", "--set", "planner.horizon=3",
    "--set", "planner.elites=3", "--set", "planner.iterations=1",
    "--set", "run.steps=4", "--set", "run.frame_every=2",
]

_STATE_SCHEMA = {
    "type": "object",
    "required": ["positions", "colors", "frozen", "cursor", "step"],
    "properties": {
        "positions": {
            "type": "array",
            "items": {"type": "array", "items": {"type": "integer"},
                      "minItems": 2, "maxItems": 2},
        },
        "colors": {"type": ["array", "null"], "items": {"type": "integer"}},
        "frozen": {"type": "array", "items": {"type": "boolean"}},
        "cursor": {"type": "array", "items": {"type": "integer"},
                   "minItems": 2, "maxItems": 2},
        "step": {"type": "integer", "minimum": 0},
    },
}

_STEP_SCHEMA = {
    "type": "object",
    "required": ["step", "action", "move", "best_cost", "state", "regularity"],
    "properties": {
        "step": {"type": "integer", "minimum": 0},
        "action": {"type": "array", "items": {"type": "number"},
                   "minItems": 2, "maxItems": 2},
        "move": {"type": "array", "items": {"type": "integer", "minimum": -1, "maximum": 1},
                 "minItems": 2, "maxItems": 2},
        "best_cost": {"type": "number"},
        "state": _STATE_SCHEMA,
        "regularity": {"type": "number", "maximum": 0.0},
    },
}


def tree_bytes(root: Path) -> dict[str, bytes]:
    return {
        p.relative_to(root).as_posix(): p.read_bytes()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_dry_run_prints_config_and_writes_nothing(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(["pattern", "--dry-run", "--set", "grid.width=9"]) == 0
    out = capsys.readouterr().out
    assert "grid.width=9" in out
    assert "planner.samples=64" in out
    assert not (tmp_path / "runs").exists()


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "regplay.cli", "oracle", "--dry-run"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "map.variant=abs_relative_position" in proc.stdout


def test_usage_and_config_errors_exit_1(tmp_path, capsys):
    assert main([]) == 1
    assert main(["pattern", "--set", "nope=1"]) == 1
    assert main(["pattern", "--set", "grid.width=0", "--out", str(tmp_path / "a")]) == 1
    assert main(["pattern", "--config", str(tmp_path / "missing.cfg")]) == 1
    assert main(["pattern", "--seed", "-3"]) == 1
    assert main(["pattern", "--workers", "0"]) == 1
    err = capsys.readouterr().err
    assert "error:" in err


def test_runtime_failure_exits_2(tmp_path, capsys):
    blocker = tmp_path / "blocker"
    blocker.write_text("a regular file where a directory must go")
    code = main(["pattern", *FAST_PATTERN, "--out", str(blocker / "sub")])
    assert code == 2


def test_oracle_budget_refusal_exits_3(tmp_path, capsys):
    code = main(["oracle", "--set", "grid.width=7", "--out", str(tmp_path / "o")])
    assert code == 3
    assert "refused" in capsys.readouterr().err


def test_refuses_foreign_nonempty_directory(tmp_path, capsys):
    out = tmp_path / "precious"
    out.mkdir()
    (out / "notes.txt").write_text("not ours")
    assert main(["pattern", *FAST_PATTERN, "--out", str(out)]) == 1
    assert "refusing" in capsys.readouterr().err
    assert (out / "notes.txt").read_text() == "not ours"
    # a directory carrying our manifest is fair game for a rerun
    ours = tmp_path / "ours"
    assert main(["pattern", *FAST_PATTERN, "--out", str(ours)]) == 0
    assert main(["pattern", *FAST_PATTERN, "--out", str(ours)]) == 0


def test_pattern_outputs_and_manifest(tmp_path):
    out = tmp_path / "run"
    assert main(["pattern", *FAST_PATTERN, "--seed", "3", "--out", str(out)]) == 0
    for name in ("rollout.jsonl", "metrics.csv", "report.json", "regularity.png",
                 "final_state.txt", "manifest.json"):
        assert (out / name).is_file(), name
    # run.steps=4, frame_every=2: states 0..4, frames at {0, 2, 4}
    assert sorted(p.name for p in (out / "frames").iterdir()) == [
        "00000.ppm", "00002.ppm", "00004.ppm"
    ]

    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,regularity"
    assert len(lines) == 6

    report = json.loads((out / "report.json").read_text())
    assert report["subcommand"] == "pattern"
    assert report["best_regularity"] >= report["initial_regularity"]
    assert report["best_regularity"] >= report["final_regularity"]
    assert report["figure"] == "regularity.png"

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "pattern"
    assert manifest["seed"] == 3
    assert manifest["config"]["grid.width"] == "5"
    on_disk = {k: v for k, v in tree_bytes(out).items() if k != "manifest.json"}
    assert set(manifest["outputs"]) == set(on_disk)
    for rel, digest in manifest["outputs"].items():
        assert hashlib.sha256(on_disk[rel]).hexdigest() == digest


def test_pattern_rollout_lines_validate(tmp_path):
    out = tmp_path / "run"
    assert main(["pattern", *FAST_PATTERN, "--out", str(out)]) == 0
    lines = [json.loads(l) for l in (out / "rollout.jsonl").read_text().splitlines()]
    assert len(lines) == 5  # initial-state row plus one per step
    jsonschema.validate(lines[0]["initial"], _STATE_SCHEMA)
    for t, row in enumerate(lines[1:]):
        jsonschema.validate(row, _STEP_SCHEMA)
        assert row["step"] == t


def test_analyze_outputs(tmp_path):
    out = tmp_path / "run"
    assert main(["analyze", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert len(report["cells"]) == 32
    assert report["pooled_divergences"] == [
        {
            "operation": "rotation (quarter turn)",
            "check": "favoring",
            "axis_tagged": False,
            "pooled": True,
        }
    ]
    assert len((out / "metrics.csv").read_text().splitlines()) == 33
    assert "direct" in (out / "table.txt").read_text()
    assert (out / "analysis.png").is_file()


def test_oracle_run_pins_the_small_instance_optimum(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["oracle", "--out", str(out)]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["grid"] == [4, 4] and report["entities"] == 3
    assert report["optimum"] == pytest.approx(-0.636514168294813, abs=1e-12)
    assert report["total_configurations"] == 560
    frames = list((out / "frames").iterdir())
    assert len(frames) == min(len(report["argmax"]), 16)
    assert "optimum" in capsys.readouterr().out


def test_recreate_quick_run(tmp_path):
    out = tmp_path / "run"
    code = main([
        "recreate", "--out", str(out),
        "--set", "grid.width=9", "--set", "grid.height=9",
        "--set", "grid.entities=4", "--set", "grid.persistency=2",
        "--set", "planner.samples=8", "--set", "planner.horizon=3",
        "--set", "planner.elites=3", "--set", "planner.iterations=1",
        "--set", "run.rollouts=3", "--set", "run.steps=5",
    ])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert 0.0 <= report["recreated_fraction"] <= 1.0
    assert report["template"] == [[2, 5], [4, 5], [6, 5]]
    assert len(report["rollouts"]) == 3
    assert len((out / "metrics.csv").read_text().splitlines()) == 4
    assert len((out / "rollout.jsonl").read_text().splitlines()) == 3
    assert len(list((out / "frames").iterdir())) == 3
    assert (out / "recreation.png").is_file()


def test_freeplay_quick_run(tmp_path):
    out = tmp_path / "run"
    code = main([
        "freeplay", "--out", str(out),
        "--set", "grid.width=5", "--set", "grid.height=5",
        "--set", "grid.entities=3", "--set", "grid.persistency=2",
        "--set", "planner.samples=8", "--set", "planner.horizon=3",
        "--set", "planner.elites=3", "--set", "planner.iterations=1",
        "--set", "ensemble.members=2", "--set", "ensemble.hidden=8",
        "--set", "ensemble.epochs=1",
        "--set", "play.iterations=2", "--set", "play.rollouts=2",
        "--set", "play.steps=5", "--set", "play.checkpoint_every=1",
    ])
    assert code == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0].endswith("loss_0,loss_1")
    assert len(lines) == 3
    rollouts = [json.loads(l) for l in (out / "rollout.jsonl").read_text().splitlines()]
    assert [(r["iteration"], r["rollout"]) for r in rollouts] == [
        (0, 0), (0, 1), (1, 0), (1, 1)
    ]
    assert all(len(r["steps"]) == 5 for r in rollouts)
    report = json.loads((out / "report.json").read_text())
    assert report["final_buffer_size"] == 20
    assert isinstance(report["improved"], bool)
    assert len(report["checkpoints"]) == 2
    for rel in report["checkpoints"]:
        assert (out / rel).is_file()
    assert (out / "freeplay.png").is_file()


def test_reruns_are_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["pattern", *FAST_PATTERN, "--seed", "5", "--out", str(out)]) == 0
    assert tree_bytes(a) == tree_bytes(b)


def test_worker_count_leaves_no_trace(tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")
    a, b = tmp_path / "w1", tmp_path / "w4"
    assert main(["pattern", *FAST_PATTERN, "--out", str(a), "--workers", "1"]) == 0
    assert main(["pattern", *FAST_PATTERN, "--out", str(b), "--workers", "4"]) == 0
    assert tree_bytes(a) == tree_bytes(b)
