import json

import pytest

from pregrasp.cli import main
from pregrasp.dataset import read_records, write_records
from pregrasp.geometry import Scene

from conftest import quick_records, sphere

LOOSE_TOML = """
[mala]
chains = 2
iterations = 20

[filter]
max_force_closure = 1000.0
max_penetration = 1.0
min_contact_ratio = 0.0
require_q1 = false

[refine]
iterations = 10

[plan]
waypoints = 5
max_iterations = 20
"""


@pytest.fixture
def workspace(tmp_path, hand):
    scene = Scene((sphere(0.03, [0.0, 0.0, 0.03]),))
    scene.save(tmp_path / "scene.json")
    (tmp_path / "run.toml").write_text(LOOSE_TOML)
    write_records(tmp_path / "grasps.jsonl", quick_records(hand, scene))
    return tmp_path


def run(*args):
    return main([str(a) for a in args])


def test_synth_is_reproducible_across_jobs(workspace):
    w = workspace
    base = ["synth", "--scene", w / "scene.json", "--config", w / "run.toml", "--seed", 3]
    assert run(*base, "--out", w / "a.jsonl", "--jobs", 1) == 0
    assert run(*base, "--out", w / "b.jsonl", "--jobs", 2) == 0
    assert run(*base, "--out", w / "c.jsonl", "--jobs", 1) == 0
    a = (w / "a.jsonl").read_bytes()
    assert a and a == (w / "b.jsonl").read_bytes() == (w / "c.jsonl").read_bytes()


def test_random_seed_is_reported(workspace, capsys):
    w = workspace
    assert run("synth", "--scene", w / "scene.json", "--config", w / "run.toml", "--out", w / "s.jsonl", "--jobs", 1) == 0
    assert "seed:" in capsys.readouterr().err


def test_eval_on_empty_file(workspace):
    (workspace / "empty.jsonl").write_text("")
    assert run("eval", "--in", workspace / "empty.jsonl", "--report", workspace / "r.json", "--seed", 0) == 0
    report = json.loads((workspace / "r.json").read_text())
    assert report["records"] == 0 and report["per_grasp"] == []


def test_eval_is_reproducible(workspace):
    w = workspace
    assert run("eval", "--in", w / "grasps.jsonl", "--report", w / "r1.json", "--seed", 0) == 0
    assert run("eval", "--in", w / "grasps.jsonl", "--report", w / "r2.json", "--seed", 0) == 0
    assert (w / "r1.json").read_bytes() == (w / "r2.json").read_bytes()
    assert json.loads((w / "r1.json").read_text())["records"] == 2


def test_refine_and_plan(workspace):
    w = workspace
    assert run("refine", "--in", w / "grasps.jsonl", "--out", w / "ref.jsonl", "--config", w / "run.toml", "--seed", 0) == 0
    recs = read_records(w / "ref.jsonl")
    assert len(recs) == 2 and recs[0].provenance["stage"] == "refined"
    assert run("plan-reach", "--grasp", w / "ref.jsonl", "--out", w / "traj.json", "--config", w / "run.toml", "--seed", 0) == 0
    traj = json.loads((w / "traj.json").read_text())
    assert len(traj["waypoints"]) == 5


def test_export(workspace, capsys):
    w = workspace
    assert run("export", "--grasp", w / "grasps.jsonl", "--out", w / "g", "--format", "obj") == 0
    assert (w / "g.obj").exists()
    assert run("export", "--grasp", w / "grasps.jsonl", "--out", w / "g", "--index", 9) == 2


def test_dataset_gen_and_verify(workspace):
    w = workspace
    (w / "inv.json").write_text(json.dumps([{"kind": "sphere", "dims": [0.025]}, {"kind": "sphere", "dims": [0.02]}]))
    args = ["dataset", "gen", "--inventory", w / "inv.json", "--config", w / "run.toml", "--seed", 5]
    assert run(*args, "--out", w / "d1", "--jobs", 1) == 0
    assert run(*args, "--out", w / "d2", "--jobs", 2) == 0
    for name in ("records.jsonl", "manifest.json"):
        assert (w / "d1" / name).read_bytes() == (w / "d2" / name).read_bytes()
    assert run("dataset", "verify", "--dir", w / "d1") == 0


def test_exit_codes(workspace, capsys):
    w = workspace
    assert run("synth") == 2
    assert run("eval", "--in", w / "missing.jsonl", "--report", w / "r.json", "--seed", 0) == 3
    err = capsys.readouterr().err.strip().splitlines()[-1]
    assert json.loads(err)["error"] == "io"
    (w / "bad.toml").write_text("[mala]\nchainz = 1\n")
    assert run("synth", "--scene", w / "scene.json", "--config", w / "bad.toml", "--out", w / "x.jsonl", "--seed", 0) == 2
    assert json.loads(capsys.readouterr().err.strip().splitlines()[-1])["error"] == "usage"
    (w / "junk.jsonl").write_text("{not json\n")
    assert run("eval", "--in", w / "junk.jsonl", "--report", w / "r.json", "--seed", 0) == 3
