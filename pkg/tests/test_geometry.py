import numpy as np
import pytest
from hypothesis import given, settings
from scipy.spatial import cKDTree
from hypothesis import strategies as st

from pregrasp.geometry import (
    ObjectShape,
    PlacementError,
    Scene,
    distance_to_object,
    objects_overlap,
    place_objects,
    sample_primitive_surface,
    sdf,
)
from pregrasp.transforms import RigidTransform, random_quaternion

from conftest import sphere

SHAPES = [("box", [0.03, 0.02, 0.015]), ("cylinder", [0.025, 0.04]), ("capsule", [0.015, 0.03])]


def test_sphere_outside_and_inside():
    s = ObjectShape("sphere", [0.1])
    d, g = sdf(s, [0.2, 0.0, 0.0])
    assert d == pytest.approx(0.1, abs=1e-15)
    np.testing.assert_allclose(g, [1, 0, 0])
    d, g = sdf(s, [0.05, 0.0, 0.0])
    assert d == pytest.approx(-0.05, abs=1e-15)
    np.testing.assert_allclose(g, [1, 0, 0])


@pytest.mark.parametrize("kind,dims", SHAPES)
def test_distance_matches_dense_sampling_oracle(kind, dims, rng):
    shape = ObjectShape(kind, dims, pose=RigidTransform(rng.normal(size=3) * 0.05, random_quaternion(rng)))
    dense = shape.pose.apply(sample_primitive_surface(kind, shape.scaled_dims, 1_000_000, rng)[0])
    pts = shape.center + rng.normal(size=(40, 3)) * 0.04
    d, _ = distance_to_object(pts, shape)
    nearest = cKDTree(dense).query(pts)[0]
    # the sampling oracle resolves ~0.1 mm only away from the surface
    far = nearest > 0.005
    assert far.sum() >= 20
    assert np.max(np.abs(np.abs(d[far]) - nearest[far])) < 1e-4


@pytest.mark.parametrize("kind,dims", SHAPES + [("sphere", [0.02])])
def test_surface_points_have_zero_distance(kind, dims, rng):
    shape = ObjectShape(kind, dims, pose=RigidTransform(rng.normal(size=3), random_quaternion(rng)))
    pts, nrm = shape.surface_cloud(world=True)
    d, g = distance_to_object(pts, shape)
    assert np.max(np.abs(d)) < 1e-6


@pytest.mark.parametrize("kind,dims", SHAPES + [("sphere", [0.02])])
def test_gradient_matches_finite_differences(kind, dims, rng):
    shape = ObjectShape(kind, dims, pose=RigidTransform(rng.normal(size=3) * 0.01, random_quaternion(rng)))
    pts = shape.center + rng.normal(size=(20, 3)) * 0.03
    d, g = distance_to_object(pts, shape)
    h = 1e-7
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        fd = (distance_to_object(pts + e, shape)[0] - distance_to_object(pts - e, shape)[0]) / (2 * h)
        # a few points may sit on medial-axis kinks; most must agree tightly
        assert np.mean(np.abs(fd - g[:, k]) < 1e-5) >= 0.9


def test_point_at_depth_and_batch_agrees_with_single():
    s = sphere(0.03, [0, 0, 0.03])
    d, _ = distance_to_object(np.array([[0.0, 0.0, 0.005]]), s)
    assert d[0] == pytest.approx(-0.005, abs=1e-15)
    pts = np.random.default_rng(0).normal(size=(50, 3)) * 0.05
    batch, _ = distance_to_object(pts, s)
    single = np.array([sdf(s, p)[0] for p in pts])
    assert np.array_equal(batch, single)


@given(st.floats(0.005, 0.1), st.floats(-0.1, 0.1), st.floats(-0.1, 0.1))
@settings(max_examples=30, deadline=None)
def test_sphere_sdf_is_distance_minus_radius(r, x, y):
    s = ObjectShape("sphere", [r])
    p = np.array([x, y, 0.05])
    assert sdf(s, p)[0] == pytest.approx(np.linalg.norm(p) - r, abs=1e-12)


def test_single_sphere_rests_on_table():
    scene = place_objects([ObjectShape("sphere", [0.03])], seed=4)
    obj = scene.objects[0]
    assert obj.center[2] == pytest.approx(0.03, abs=1e-12)
    assert -0.1 <= obj.center[0] <= 0.1 and -0.1 <= obj.center[1] <= 0.1


def test_two_spheres_respect_spacing():
    shapes = [ObjectShape("sphere", [0.025]), ObjectShape("sphere", [0.025])]
    scene = place_objects(shapes, min_spacing=0.06, seed=2)
    a, b = scene.objects
    assert np.linalg.norm(a.center - b.center) >= 0.06
    assert a.lowest_point_height() == pytest.approx(0.0, abs=1e-9)
    assert not objects_overlap(a, b)
    assert place_objects(shapes, min_spacing=0.06, seed=2).to_dict() == scene.to_dict()


@pytest.mark.parametrize("kind,dims", SHAPES)
def test_placed_primitives_rest_on_table(kind, dims):
    scene = place_objects([ObjectShape(kind, dims)], seed=7)
    assert scene.objects[0].lowest_point_height() == pytest.approx(0.0, abs=1e-9)
    scene.validate()


def test_impossible_placement_raises():
    shapes = [ObjectShape("sphere", [0.05]) for _ in range(3)]
    with pytest.raises(PlacementError):
        place_objects(shapes, region=((0, 0.01), (0, 0.01)), seed=0, attempts=20)


def test_scene_round_trip(tmp_path, two_spheres):
    two_spheres.save(tmp_path / "s.json")
    assert Scene.load(tmp_path / "s.json").to_dict() == two_spheres.to_dict()


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        ObjectShape("torus", [0.1])
