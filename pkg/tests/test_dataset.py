import json
import math

import numpy as np
import pytest

from pregrasp.config import RunConfig
from pregrasp.dataset import (
    AlignmentError,
    DatasetError,
    align_palm,
    alignment_angle,
    generate_dataset,
    load_inventory,
    object_combinations,
    palm_direction,
    read_records,
    unalign_palm,
    verify_dataset,
    write_records,
)
from pregrasp.energy import ContactAssignment, EnergyBreakdown, total_energy
from pregrasp.geometry import ObjectShape, Scene
from pregrasp.kinematics import HandConfiguration
from pregrasp.metrics import FilterThresholds
from pregrasp.records import GraspRecord, RecordError
from pregrasp.sampler import MalaParams
from pregrasp.transforms import RigidTransform, random_quaternion

from conftest import LOOSE, sphere


def random_record(rng, hand):
    cfg = HandConfiguration(RigidTransform(rng.normal(size=3), random_quaternion(rng)), rng.uniform(hand.lower, hand.upper))
    energy = EnergyBreakdown(rng.random(2), *rng.random(4), 0)
    scene = Scene((sphere(0.03, [0, 0, 0.03]), sphere(0.02, [0.1, 0, 0.02]))).to_dict()
    return GraspRecord(scene, cfg, ContactAssignment(rng.integers(0, 500, (2, 3))), energy, None, {"seed": 1, "chain": 2})


# ------------------------------------------------------------ records
def test_records_round_trip_bit_exactly(tmp_path, hand, rng):
    recs = [random_record(rng, hand) for _ in range(100)]
    write_records(tmp_path / "r.jsonl", recs)
    back = read_records(tmp_path / "r.jsonl")
    assert len(back) == 100
    assert all(a.same_as(b) for a, b in zip(recs, back))
    assert np.array_equal(back[5].cfg.q, recs[5].cfg.q)


def test_empty_file_gives_empty_list(tmp_path):
    (tmp_path / "e.jsonl").write_text("")
    assert read_records(tmp_path / "e.jsonl") == []


def test_nan_energy_rejected_at_write(tmp_path, hand, rng):
    rec = random_record(rng, hand)
    bad = rec.replace(energy=EnergyBreakdown(np.array([np.nan, 0.0]), 0.0, 0.0, 0.0, np.nan, 0))
    with pytest.raises(RecordError):
        write_records(tmp_path / "bad.jsonl", [rec, bad])
    assert not (tmp_path / "bad.jsonl").exists()


def test_malformed_line_is_located(tmp_path, hand, rng):
    write_records(tmp_path / "r.jsonl", [random_record(rng, hand)])
    with open(tmp_path / "r.jsonl", "a") as fh:
        fh.write('{"cfg": 1}\n')
    with pytest.raises(RecordError, match=":2:"):
        read_records(tmp_path / "r.jsonl")


# ------------------------------------------------------------ alignment
def test_alignment_round_trip(hand, rng):
    scene = Scene((sphere(0.03, [0.05, -0.02, 0.03]), ObjectShape("box", [0.02, 0.03, 0.01], pose=RigidTransform([0, 0.1, 0.01]))))
    for _ in range(10):
        cfg = HandConfiguration(RigidTransform(rng.normal(size=3) * 0.1, random_quaternion(rng)), rng.uniform(hand.lower, hand.upper))
        a_cfg, a_scene, angle = align_palm(cfg, scene, hand)
        d = palm_direction(a_cfg, hand)
        assert abs(d[1]) < 1e-12 and d[0] > 0
        b_cfg, b_scene = unalign_palm(a_cfg, a_scene, angle)
        assert b_cfg.allclose(cfg, 1e-9)
        for o1, o2 in zip(b_scene.objects, scene.objects):
            assert o1.pose.allclose(o2.pose, 1e-9)


def test_already_aligned_is_identity(hand):
    # palm normal (0,0,-1) turned onto +x by a rotation about y
    cfg = hand.configuration(quaternion=(math.cos(-math.pi / 4), 0.0, math.sin(-math.pi / 4), 0.0), q=hand.mid_q())
    assert palm_direction(cfg, hand) == pytest.approx([1.0, 0.0, 0.0], abs=1e-12)
    scene = Scene((sphere(0.03, [0, 0, 0.03]),))
    a_cfg, a_scene, angle = align_palm(cfg, scene, hand)
    assert angle == 0.0
    assert a_cfg is cfg and a_scene is scene


def test_vertical_palm_raises(hand):
    with pytest.raises(AlignmentError):
        alignment_angle(hand.configuration(q=hand.mid_q()), hand)


def test_energy_invariant_under_alignment(hand, rng):
    scene = Scene((sphere(0.03, [0.05, -0.02, 0.2]), sphere(0.02, [-0.05, 0.03, 0.25])), table=False)
    for _ in range(5):
        cfg = HandConfiguration(RigidTransform([0, 0, 0.2] + rng.normal(size=3) * 0.05, random_quaternion(rng)), rng.uniform(hand.lower, hand.upper))
        contacts = ContactAssignment(rng.integers(0, 500, (2, 3)))
        a_cfg, a_scene, _ = align_palm(cfg, scene, hand)
        e0 = total_energy(hand, cfg, scene, contacts).total
        e1 = total_energy(hand, a_cfg, a_scene, contacts).total
        assert abs(e0 - e1) < 1e-9 * max(1.0, abs(e0))


# ------------------------------------------------------------ datasets
def test_combinations():
    combos = object_combinations(8)
    assert len(combos) == 36
    assert combos[:8] == [(i,) for i in range(8)]
    assert len(set(combos)) == 36
    assert len(object_combinations(4, max_objects=3)) == 4 + 6 + 4


def small_config():
    return RunConfig(mala=MalaParams(chains=2, iterations=20), filter=FilterThresholds(**LOOSE))


def write_inventory(path, n):
    items = [{"kind": "sphere", "dims": [0.02 + 0.002 * i], "name": f"ball{i}"} for i in range(n)]
    path.write_text(json.dumps({"objects": items}))
    return path


def test_generate_and_verify(tmp_path):
    inv = load_inventory(write_inventory(tmp_path / "inv.json", 3))
    manifest = generate_dataset(inv, tmp_path / "ds", small_config(), seed=4, jobs=1)
    recs = read_records(tmp_path / "ds" / "records.jsonl")
    assert manifest.total == len(recs)
    assert len(manifest.combinations) == 6
    counts = {}
    for r in recs:
        k = str(len(r.scene["objects"]))
        counts[k] = counts.get(k, 0) + 1
    assert counts == manifest.counts
    ok, problems = verify_dataset(tmp_path / "ds")
    assert ok, problems
    assert not (tmp_path / "ds" / "staging").exists()
    for r in recs:
        assert r.provenance["stage"] == "refined"
        d = palm_direction(r.cfg, __import__("pregrasp").reference_hand())
        assert abs(d[1]) < 1e-9


def test_generation_independent_of_jobs(tmp_path):
    inv = load_inventory(write_inventory(tmp_path / "inv.json", 2))
    m1 = generate_dataset(inv, tmp_path / "a", small_config(), seed=9, jobs=1)
    m2 = generate_dataset(inv, tmp_path / "b", small_config(), seed=9, jobs=2)
    assert (tmp_path / "a" / "records.jsonl").read_bytes() == (tmp_path / "b" / "records.jsonl").read_bytes()
    assert m1.digest() == m2.digest()


def test_verify_detects_tampering(tmp_path):
    inv = load_inventory(write_inventory(tmp_path / "inv.json", 1))
    generate_dataset(inv, tmp_path / "ds", small_config(), seed=1)
    path = tmp_path / "ds" / "records.jsonl"
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-1]) + "\n" if len(lines) > 1 else "")
    ok, problems = verify_dataset(tmp_path / "ds")
    assert not ok and problems


def test_no_survivors_raises(tmp_path):
    inv = load_inventory(write_inventory(tmp_path / "inv.json", 1))
    strict = RunConfig(mala=MalaParams(chains=1, iterations=5), filter=FilterThresholds(max_penetration=0.0, contact_distance=0.0))
    with pytest.raises(DatasetError):
        generate_dataset(inv, tmp_path / "ds", strict, seed=0)


def test_empty_inventory(tmp_path):
    (tmp_path / "inv.json").write_text("[]")
    with pytest.raises(ValueError):
        load_inventory(tmp_path / "inv.json")
