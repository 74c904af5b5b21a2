import numpy as np
import pytest

from pregrasp.geometry import ObjectShape, Scene
from pregrasp.kinematics import reference_hand
from pregrasp.transforms import RigidTransform


@pytest.fixture(scope="session")
def hand():
    return reference_hand()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sphere(r, center):
    return ObjectShape("sphere", [r], pose=RigidTransform(np.asarray(center, dtype=float)))


@pytest.fixture
def one_sphere():
    return Scene((sphere(0.03, [0.0, 0.0, 0.03]),))


@pytest.fixture
def two_spheres():
    return Scene((sphere(0.025, [-0.03, 0.0, 0.025]), sphere(0.025, [0.03, 0.0, 0.025])))


LOOSE = dict(max_force_closure=1e3, max_penetration=1.0, min_contact_ratio=0.0, require_q1=False)


def quick_records(model, scene, chains=2, iterations=30, seed=0):
    """Cheap records for plumbing tests; the filter lets everything through."""
    from pregrasp.energy import EnergyWeights
    from pregrasp.metrics import FilterThresholds
    from pregrasp.sampler import MalaParams, synthesize

    params = MalaParams(chains=chains, iterations=iterations, seed=seed)
    return synthesize(scene, model, EnergyWeights(), params, FilterThresholds(**LOOSE))


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, [])

    def record(criterion, ok, detail=""):
        lines.append(f"criterion {criterion:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[-1])):
            terminalreporter.write_line(line)
