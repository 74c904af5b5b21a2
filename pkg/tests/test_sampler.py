import itertools

import numpy as np
import pytest
from scipy import stats

from pregrasp.energy import ContactAssignment, EnergyProblem, EnergyWeights, force_closure_error
from pregrasp.geometry import Scene
from pregrasp.kinematics import HandConfiguration, HandModel, sample_hand_surface
from pregrasp.metrics import FilterThresholds, penetration_depth
from pregrasp.sampler import (
    MalaParams,
    evaluate_state,
    initial_configuration,
    mala_chain,
    mala_step,
    mh_log_ratio,
    passes_filter,
    resample_contacts,
    run_chain,
    run_chains,
    synthesize,
)
from pregrasp.transforms import RigidTransform

from conftest import sphere

QUICK = MalaParams(iterations=40, chains=3, resample_period=5)


def quadratic(x):
    return 0.5 * float(x @ x), x.copy()


def test_temperature_schedule():
    p = MalaParams(temperature=1e-2, decay=0.99, temperature_floor=1e-4)
    T = np.array([p.temperature_at(t) for t in range(2000)])
    assert T[0] == 1e-2
    assert np.all(np.diff(T) <= 0)
    assert T.min() == 1e-4


def test_params_validate():
    with pytest.raises(ValueError):
        MalaParams(step_position=0.0)
    with pytest.raises(ValueError):
        MalaParams(temperature=1e-6, temperature_floor=1e-5)
    with pytest.raises(ValueError):
        MalaParams(init_distance=(0.3, 0.1))


def test_quadratic_stationary_variance():
    rng = np.random.default_rng(7)
    xs, _, acc = mala_chain(quadratic, [0.0], 0.5, 1.0, 101_000, rng)
    assert abs(np.var(xs[1000:]) - 1.0) < 0.05
    assert 0.5 < acc < 1.0


def test_quadratic_ks_at_unit_temperature():
    rng = np.random.default_rng(11)
    # with step 1 the Langevin proposal is N(0, 2) whatever the state, so
    # thinning by 2 leaves nearly independent draws for the KS test
    xs, _, _ = mala_chain(quadratic, [0.0], 1.0, 1.0, 1000 + 100_000 * 2, rng)
    sample = xs[1000::2, 0]
    assert len(sample) == 100_000
    assert stats.kstest(sample, "norm").pvalue > 0.01


def test_noiseless_steps_descend():
    rng = np.random.default_rng(0)
    _, e, _ = mala_chain(lambda x: (float(np.sum(x**4)), 4 * x**3), [1.0, -0.7], 0.01, 1.0, 100, rng, noise=False)
    assert np.all(np.diff(e) <= 0)
    assert e[-1] < e[0]


def test_vanishing_step_accepts_with_certainty():
    x = np.array([0.3, -0.2])
    step = 1e-12
    e, g = quadratic(x)
    delta = -step * g + np.sqrt(2 * step) * np.array([0.5, -1.0])
    en, gn = quadratic(x + delta)
    assert abs(mh_log_ratio(e, en, g, gn, delta, step, 1.0)) < 1e-9


def test_hand_noiseless_steps_descend(hand, one_sphere):
    problem = EnergyProblem(hand, one_sphere)
    rng = np.random.default_rng(3)
    params = MalaParams(step_position=1e-5, step_rotation=1e-4, step_joints=1e-3)
    cfg = initial_configuration(hand, one_sphere, rng, params)
    st = evaluate_state(problem, cfg, ContactAssignment.random(1, 3, problem.n_points, rng), EnergyWeights())
    energies = [st.total]
    for _ in range(100):
        st, _ = mala_step(st, params, problem=problem, temperature=1e-3, rng=rng, noise=False)
        energies.append(st.total)
    assert np.all(np.diff(energies) <= 0)
    assert energies[-1] < energies[0]


def test_resample_with_zero_probability_is_identity(hand, one_sphere):
    problem = EnergyProblem(hand, one_sphere)
    rng = np.random.default_rng(0)
    cfg = initial_configuration(hand, one_sphere, rng)
    st = evaluate_state(problem, cfg, ContactAssignment.random(1, 3, problem.n_points, rng), EnergyWeights())
    out = resample_contacts(st, MalaParams(resample_probability=0.0), problem, rng=rng)
    assert out is st


def test_resample_at_zero_temperature_never_raises_energy(hand, one_sphere):
    problem = EnergyProblem(hand, one_sphere)
    rng = np.random.default_rng(1)
    cfg = initial_configuration(hand, one_sphere, rng)
    st = evaluate_state(problem, cfg, ContactAssignment.random(1, 3, problem.n_points, rng), EnergyWeights())
    params = MalaParams(resample_probability=0.5, resample_radius=0.0)
    changed = 0
    for _ in range(200):
        new = resample_contacts(st, params, problem, rng=rng, temperature=1e-300)
        assert new.total <= st.total
        changed += new is not st
        st = new
    assert changed > 0


def tiny_hand(n_samples=12):
    return HandModel.from_dict(
        {"links": [{"name": "ball", "parent": None, "collision": [{"type": "sphere", "radius": 0.03}], "surface_samples": n_samples}]}
    )


def test_resampling_finds_brute_force_assignment():
    model = tiny_hand()
    scene = Scene((sphere(0.02, [0.0, 0.0, 0.1]),), table=False)
    cfg = HandConfiguration(RigidTransform([0.0, 0.0, 0.1]), np.zeros(0))  # ball around the object
    weights = EnergyWeights(contact_distance=100.0)
    problem = EnergyProblem(model, scene)
    surf = sample_hand_surface(model, cfg)
    brute = min(
        force_closure_error(c, surf, scene.objects[0], weights.contact_distance)[0]
        for c in itertools.combinations(range(problem.n_points), 3)
    )
    rng = np.random.default_rng(5)
    st = evaluate_state(problem, cfg, ContactAssignment(np.array([[0, 1, 2]])), weights)
    params = MalaParams(resample_probability=0.3, resample_radius=0.0)
    best = st.energy.force_closure[0]
    for _ in range(1000):
        st = resample_contacts(st, params, problem, weights, rng, temperature=0.05)
        best = min(best, st.energy.force_closure[0])
    assert best <= 1.05 * brute + 1e-12


def test_initial_pose_is_clear_and_at_distance(hand, two_spheres):
    rng = np.random.default_rng(2)
    params = MalaParams(init_distance=(0.15, 0.25))
    for _ in range(5):
        cfg = initial_configuration(hand, two_spheres, rng, params)
        assert penetration_depth(cfg, two_spheres, hand, refine=False) == 0.0
        assert np.all(cfg.q >= hand.lower) and np.all(cfg.q <= hand.upper)


def test_chain_depends_only_on_seed_and_id(hand, one_sphere):
    all_chains = run_chains(one_sphere, hand, EnergyWeights(), QUICK, chains=[0, 1, 2])
    alone = run_chains(one_sphere, hand, EnergyWeights(), QUICK, chains=[2])
    assert all_chains[2].best.cfg.allclose(alone[0].best.cfg, 0.0)
    assert all_chains[2].best.total == alone[0].best.total


def test_parallel_chains_match_serial(hand, one_sphere):
    serial = run_chains(one_sphere, hand, EnergyWeights(), QUICK, jobs=1)
    parallel = run_chains(one_sphere, hand, EnergyWeights(), QUICK, jobs=2)
    for a, b in zip(serial, parallel):
        assert a.chain == b.chain
        assert a.best.total == b.best.total
        assert np.array_equal(a.best.contacts.indices, b.best.contacts.indices)


def test_strict_thresholds_give_empty_list(hand, one_sphere):
    strict = FilterThresholds(max_penetration=0.0, min_contact_ratio=1.0, contact_distance=0.0)
    assert synthesize(one_sphere, hand, EnergyWeights(), QUICK, strict) == []


def test_feasible_state_passes_remeasurement(hand, one_sphere):
    loose = FilterThresholds(max_force_closure=10.0, max_penetration=0.05, min_contact_ratio=0.0, require_q1=False)
    problem = EnergyProblem(hand, one_sphere)
    res = run_chain(problem, EnergyWeights(), QUICK, 0, loose)
    assert res.feasible is not None
    assert res.feasible.total >= res.best.total
    assert penetration_depth(res.feasible.cfg, one_sphere, hand) <= 50.0


def test_one_sided_contact_fails_the_q1_gate(hand):
    from pregrasp.metrics import quality_report
    from pregrasp.refine import flat_hand

    scene = Scene((sphere(0.03, [0.0, 0.0, 0.03]),), table=False)
    cfg = flat_hand(hand)
    surf = sample_hand_surface(hand, cfg)
    palm = np.flatnonzero(surf.link == hand.palm_link)
    i = palm[np.argmin(surf.points[palm, 2])]
    # palm resting 1 mm above the top of the sphere: touching, but all from one side
    cfg = hand.configuration(position=cfg.position - [surf.points[i, 0], surf.points[i, 1], surf.points[i, 2] - 0.061], q=cfg.q)
    contacts = ContactAssignment(np.array([[0, 1, 2]]))
    energy, _ = EnergyProblem(hand, scene).evaluate(cfg, contacts, EnergyWeights(), want_grad=False)
    gate = dict(max_force_closure=1e3, max_penetration=0.002, min_contact_ratio=1.0)
    assert quality_report(cfg, scene, hand).contact_ratio == 1.0
    assert quality_report(cfg, scene, hand).q1_min == 0.0
    assert passes_filter(cfg, energy, scene, hand, FilterThresholds(**gate, require_q1=False), 3)
    assert not passes_filter(cfg, energy, scene, hand, FilterThresholds(**gate), 3)


def test_synthesize_requires_objects(hand):
    with pytest.raises(ValueError):
        synthesize(Scene(()), hand, params=QUICK)
