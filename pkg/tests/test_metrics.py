import numpy as np
import pytest

from pregrasp.geometry import Scene
from pregrasp.kinematics import HandConfiguration, link_frames, sample_hand_surface
from pregrasp.metrics import (
    FilterThresholds,
    FrictionModel,
    contact_ratio,
    contact_wrenches,
    diversity,
    penetration_components,
    penetration_depth,
    positive_combination_margin,
    q1_all_positive,
    q1_from_wrenches,
    q1_lp_oracle,
    q1_metric,
    q1_per_object,
    quality_report,
)
from pregrasp.transforms import RigidTransform, random_quaternion

from conftest import sphere

AXES = np.vstack([np.eye(3), -np.eye(3)])


def test_six_axis_contacts_match_lp_oracle():
    r = 0.03
    fr = FrictionModel(mu=0.5, edges=8)
    W = contact_wrenches(AXES * r, -AXES, fr, torque_scale=r)
    q1 = q1_from_wrenches(W)
    assert q1 > 0
    assert abs(q1 - q1_lp_oracle(W)) < 1e-6


def test_single_contact_is_exactly_zero():
    assert q1_metric([[0.03, 0, 0]], [[-1.0, 0, 0]], torque_scale=0.03) == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_random_sets_match_lp_oracle(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(2, 7)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    W = contact_wrenches(0.03 * dirs, -dirs, FrictionModel(mu=0.5, edges=6), torque_scale=0.03)
    assert abs(q1_from_wrenches(W) - q1_lp_oracle(W)) < 1e-6


def test_positive_combination_decides_q1_positivity():
    rng = np.random.default_rng(7)
    positive = 0
    for _ in range(100):
        n = rng.integers(1, 25)
        bias = rng.normal(size=3)
        dirs = rng.normal(size=(n, 3)) + rng.uniform(0, 3) * bias / np.linalg.norm(bias)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        W = contact_wrenches(0.025 * dirs, -dirs, FrictionModel(), torque_scale=0.025)
        inside = q1_from_wrenches(W) > 0
        positive += inside
        assert (positive_combination_margin(W) > 0) == inside
    assert 10 < positive < 90  # both outcomes exercised


def test_q1_gate_matches_per_object_q1(hand, rng):
    scene = Scene((sphere(0.03, [0.0, 0.0, 0.03]), sphere(0.02, [0.08, 0.0, 0.02])))
    for _ in range(5):
        dirs = rng.normal(size=(6, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        sets = [(0.03 * dirs[:k] + o.center, -dirs[:k]) for o, k in zip(scene.objects, (6, 2))]
        assert q1_all_positive(scene, sets) == (min(q1_per_object(scene, sets)) > 0)
        sets[1] = (0.02 * dirs + scene.objects[1].center, -dirs)
        assert q1_all_positive(scene, sets) == (min(q1_per_object(scene, sets)) > 0)


def test_q1_is_non_negative_and_rejects_empty():
    with pytest.raises(ValueError):
        q1_metric(np.zeros((0, 3)), np.zeros((0, 3)), torque_scale=0.03)
    assert q1_from_wrenches(np.zeros((3, 6))) == 0.0


def test_diversity():
    a = np.zeros(5)
    assert diversity([a, a]) == 0.0
    assert diversity([a, a + np.radians(2.0)]) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        diversity([a])


def test_hovering_hand_has_no_penetration(hand, one_sphere):
    cfg = hand.configuration(position=(0.0, 0.0, 0.4), q=hand.mid_q())
    assert penetration_depth(cfg, one_sphere, hand) == 0.0


def test_object_sunk_into_table():
    scene = Scene((sphere(0.03, [0.0, 0.0, 0.027]),))
    from pregrasp.kinematics import reference_hand

    hand = reference_hand()
    cfg = hand.configuration(position=(0.5, 0.5, 0.4), q=hand.mid_q())
    comp = penetration_components(cfg, scene, hand)
    assert comp["object_table"] == pytest.approx(0.003, abs=1e-12)
    assert penetration_depth(cfg, scene, hand) == pytest.approx(3.0, abs=1e-9)


def test_overlapping_objects():
    from pregrasp.kinematics import reference_hand

    hand = reference_hand()
    scene = Scene((sphere(0.03, [0.0, 0.0, 0.03]), sphere(0.03, [0.056, 0.0, 0.03])))
    comp = penetration_components(hand.configuration(position=(0.5, 0.5, 0.4), q=hand.mid_q()), scene, hand)
    assert comp["object_object"] == pytest.approx(0.004, abs=1e-4)


def test_penetration_matches_exact_sphere_oracle(hand, rng):
    # against a sphere the deepest hand point is the hand point nearest the
    # centre, so depth = R - min over primitives of sdf(centre), exactly
    R = 0.03
    scene = Scene((sphere(R, [0.0, 0.0, 0.03]),), table=False)
    c = scene.objects[0].center

    def exact(cfg):
        Rs, ts = link_frames(hand, cfg)
        d = [p.sdf_local(((c - ts[i]) @ Rs[i])[None])[0] for i, link in enumerate(hand.links) for p in link.primitives]
        return max(0.0, R - min(d))

    for _ in range(6):
        base = RigidTransform(rng.normal(size=3) * [0.02, 0.02, 0.0], random_quaternion(rng))
        q = rng.uniform(hand.lower, hand.upper)
        target = rng.uniform(0.002, 0.006)
        lo, hi = -0.3, 0.3  # bisect the height until the oracle reads the target depth
        for _ in range(50):
            z = 0.5 * (lo + hi)
            cfg = HandConfiguration(RigidTransform(base.position + [0, 0, z], base.quaternion), q)
            lo, hi = (z, hi) if exact(cfg) > target else (lo, z)
        cfg = HandConfiguration(RigidTransform(base.position + [0, 0, hi], base.quaternion), q)
        assert abs(penetration_components(cfg, scene, hand)["hand_object"] - exact(cfg)) < 1e-4


def touching_scene(hand, cfg, second=False):
    surf = sample_hand_surface(hand, cfg)
    palm = np.flatnonzero(surf.link == hand.palm_link)
    i = palm[np.argmin(np.linalg.norm(surf.points[palm] - surf.points[palm].mean(axis=0), axis=1))]
    r = 0.03
    objs = [sphere(r, surf.points[i] + surf.normals[i] * r)]
    if second:
        objs.append(sphere(r, [5.0, 5.0, r]))
    return Scene(tuple(objs), table=False)


def test_contact_ratio(hand):
    cfg = hand.configuration(position=(0.0, 0.0, 0.3), q=hand.mid_q())
    assert contact_ratio(cfg, touching_scene(hand, cfg), hand) == 1.0
    assert contact_ratio(cfg, touching_scene(hand, cfg, second=True), hand) == 0.5
    far = Scene((sphere(0.03, [2.0, 0.0, 0.03]),))
    assert contact_ratio(cfg, far, hand) == 0.0


def test_quality_report_gates(hand):
    cfg = hand.configuration(position=(0.0, 0.0, 0.3), q=hand.mid_q())
    far = Scene((sphere(0.03, [0.0, 0.0, 0.03]), sphere(0.03, [0.1, 0.0, 0.03])))
    rep = quality_report(cfg, far, hand)
    assert not rep.feasible and rep.contact_ratio == 0.0
    assert rep.q1_min == min(rep.q1_per_object)
    # push the touching sphere 5 mm into the palm: infeasible whatever Q1 is
    scene = touching_scene(hand, cfg)
    obj = scene.objects[0]
    palm_out = cfg.rotation @ hand.palm_normal
    sunk = Scene((obj.with_pose(RigidTransform(obj.center - 0.005 * palm_out)),), table=False)
    rep = quality_report(cfg, sunk, hand)
    assert rep.penetration_mm > 2.0 and not rep.feasible


def test_thresholds_validate():
    with pytest.raises(ValueError):
        FilterThresholds(max_penetration=-1.0)
    with pytest.raises(ValueError):
        FilterThresholds(min_contact_ratio=1.5)
