"""Annealed Langevin (MALA) synthesis of multi-object grasps.

Each chain alternates Metropolis-adjusted Langevin moves on the hand pose
``(p, R, q)`` with stochastic contact-index resampling, under a
geometrically decaying temperature. The best state of every chain is kept
and filtered by force-closure, penetration and contact thresholds.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields, replace

import numpy as np

from . import __version__
from .energy import ContactAssignment, EnergyBreakdown, EnergyProblem, EnergyWeights, NumericalError
from .geometry import Scene, distance_to_object
from .kinematics import HandConfiguration, HandModel, cached_local_samples, sample_hand_surface
from .metrics import FilterThresholds, FrictionModel, contact_ratio, contact_sets, penetration_depth, q1_all_positive, quality_report
from .records import GraspRecord
from .transforms import RigidTransform, matrix_to_quat, rotvec_to_matrix

log = logging.getLogger(__name__)

MAX_LOG_SCALE = np.log(100.0)

__all__ = [
    "ChainState",
    "FilterThresholds",
    "MalaParams",
    "initial_configuration",
    "mala_chain",
    "mala_step",
    "passes_filter",
    "resample_contacts",
    "run_chain",
    "synthesize",
]


@dataclass(frozen=True)
class MalaParams:
    """Sampler settings.

    Step sizes are per block: base position (m), rotation tangent (rad) and
    joints (rad). The temperature follows ``max(floor, T0 * decay**t)``.
    Contacts are resampled every ``resample_period`` iterations; see
    :func:`resample_contacts` for the proposal. Initial palm centres lie
    ``init_distance`` (m) from the object centroid.
    """

    step_position: float = 1e-5
    step_rotation: float = 1e-3
    step_joints: float = 1e-2
    temperature: float = 0.1
    decay: float = 0.998
    temperature_floor: float = 1e-5
    iterations: int = 2000
    resample_period: int = 3
    resample_probability: float = 0.1
    resample_radius: float = 0.02
    resample_normal_width: float = 0.5
    chains: int = 64
    seed: int = 0
    init_distance: tuple = (0.06, 0.08)
    init_joint_noise: float = 0.1
    adapt_target: float = 0.574
    adapt_rate: float = 0.05

    def __post_init__(self):
        for name in ("step_position", "step_rotation", "step_joints"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not (self.temperature >= self.temperature_floor > 0):
            raise ValueError("need temperature >= temperature_floor > 0")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.iterations < 1 or self.chains < 1 or self.resample_period < 1:
            raise ValueError("iterations, chains and resample_period must be at least 1")
        if not 0 <= self.resample_probability <= 1:
            raise ValueError("resample_probability must lie in [0, 1]")
        if self.resample_radius < 0 or self.resample_normal_width < 0:
            raise ValueError("resample_radius and resample_normal_width must be non-negative")
        if not 0 <= self.adapt_target < 1 or self.adapt_rate < 0:
            raise ValueError("adapt_target must lie in [0, 1) and adapt_rate be non-negative")
        lo, hi = self.init_distance
        if not 0 < lo <= hi:
            raise ValueError("init_distance must be an increasing positive pair")
        object.__setattr__(self, "init_distance", (float(lo), float(hi)))

    def temperature_at(self, t: int) -> float:
        return max(self.temperature_floor, self.temperature * self.decay**t)

    def step_vector(self, n_joints: int) -> np.ndarray:
        return np.concatenate([np.full(3, self.step_position), np.full(3, self.step_rotation), np.full(n_joints, self.step_joints)])

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["init_distance"] = list(self.init_distance)
        return out


@dataclass(frozen=True, eq=False)
class ChainState:
    """Current sample of one chain; ``energy`` and ``grad`` match ``cfg``."""

    cfg: HandConfiguration
    contacts: ContactAssignment
    energy: EnergyBreakdown
    grad: np.ndarray
    chain: int = 0
    iteration: int = 0
    nonfinite: int = 0

    @property
    def total(self) -> float:
        return self.energy.total


# ------------------------------------------------------------ generic MALA
def _log_q(delta, grad, step, temperature) -> float:
    """Log density (up to a constant) of a Langevin displacement ``delta``."""
    r = delta + step * grad
    return -float(np.sum(r * r / step)) / (4.0 * temperature)


def mh_log_ratio(e_old, e_new, g_old, g_new, delta, step, temperature) -> float:
    """Log acceptance ratio for target ``exp(-E/T)`` and a Langevin move."""
    return -(e_new - e_old) / temperature + _log_q(-delta, g_new, step, temperature) - _log_q(delta, g_old, step, temperature)


def mala_chain(energy_grad, x0, step, temperature: float, n_steps: int, rng, noise: bool = True):
    """Run MALA on a vector-valued state.

    Args:
        energy_grad: Callable returning ``(E, dE/dx)``.
        x0: Initial state.
        step: Scalar or per-component step size.
        temperature: Target is ``exp(-E / temperature)``.
        n_steps: Number of proposals.
        rng: Random generator.
        noise: With ``False`` every proposal is a plain gradient step that is
            kept only if it does not raise the energy.

    Returns:
        ``(samples, energies, acceptance_rate)``; ``samples`` holds the
        state after every proposal.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    step = np.broadcast_to(np.asarray(step, dtype=float), x.shape)
    e, g = energy_grad(x)
    out = np.empty((n_steps,) + x.shape)
    energies = np.empty(n_steps)
    accepted = 0
    for k in range(n_steps):
        xi = rng.standard_normal(x.shape) if noise else np.zeros(x.shape)
        delta = -step * g + np.sqrt(2.0 * step * temperature) * xi
        xn = x + delta
        en, gn = energy_grad(xn)
        if noise:
            ok = np.isfinite(en) and np.log(rng.random()) < mh_log_ratio(e, en, g, gn, delta, step, temperature)
        else:
            ok = np.isfinite(en) and en <= e
        if ok:
            x, e, g = xn, en, gn
            accepted += 1
        out[k] = x
        energies[k] = e
    return out, energies, accepted / max(n_steps, 1)


# ------------------------------------------------------------ hand moves
def _problem(problem, scene, model, sample_seed: int = 0) -> EnergyProblem:
    return problem if problem is not None else EnergyProblem(model, scene, sample_seed)


def evaluate_state(problem: EnergyProblem, cfg, contacts, weights: EnergyWeights, chain: int = 0, iteration: int = 0) -> ChainState:
    bd, g = problem.evaluate(cfg, contacts, weights)
    if not (np.isfinite(bd.total) and np.all(np.isfinite(g))):
        raise NumericalError("total", "initial state has a non-finite energy")
    return ChainState(cfg, contacts, bd, g, chain, iteration)


def mala_step(
    state: ChainState, params: MalaParams, scene: Scene | None = None, model: HandModel | None = None,
    weights: EnergyWeights = EnergyWeights(), *, temperature: float | None = None, rng=None,
    noise: bool = True, problem: EnergyProblem | None = None, step_scale=1.0,
):  # fmt: skip
    """One Metropolis-adjusted Langevin move of the hand pose.

    The proposal is ``H' = H - eps * grad + sqrt(2 eps T) xi`` per block, with
    the rotation block applied as a left tangent rotation about the base.
    Non-finite proposals are rejected and counted in ``state.nonfinite``.
    ``step_scale`` (scalar or per-coordinate) multiplies the block step sizes.

    Returns:
        ``(new_state, accepted)``.
    """
    problem = _problem(problem, scene, model)
    rng = rng if rng is not None else np.random.default_rng()
    T = params.temperature_at(state.iteration) if temperature is None else temperature
    step = step_scale * params.step_vector(problem.model.n_joints)
    g = state.grad
    xi = rng.standard_normal(g.shape) if noise else np.zeros(g.shape)
    delta = -step * g + np.sqrt(2.0 * step * T) * xi
    cfg = state.cfg.step(delta)
    nxt = replace(state, iteration=state.iteration + 1)
    bd, gn = problem.evaluate(cfg, state.contacts, weights)
    if not (np.isfinite(bd.total) and np.all(np.isfinite(gn))):
        return replace(nxt, nonfinite=state.nonfinite + 1), False
    if noise:
        log_alpha = mh_log_ratio(state.total, bd.total, g, gn, delta, step, T)
        ok = np.log(rng.random()) < log_alpha
    else:
        ok = bd.total <= state.total
    if not ok:
        return nxt, False
    return replace(nxt, cfg=cfg, energy=bd, grad=gn), True


def resample_contacts(
    state: ChainState, params: MalaParams, problem: EnergyProblem, weights: EnergyWeights = EnergyWeights(),
    rng=None, temperature: float | None = None,
) -> ChainState:  # fmt: skip
    """Stochastically replace contact indices, accepted by Metropolis.

    Every contact is replaced with probability ``params.resample_probability``
    by a hand sample not already used for that object. Replacements are drawn
    from samples within ``params.resample_radius`` of the object surface, or
    from all samples if the radius is 0 or no sample is that close. With
    ``params.resample_normal_width > 0`` the draw is weighted by
    ``exp(-|n' - n|^2 / (2 w^2))``, where ``n`` and ``n'`` are the object
    normals nearest the old and new sample, so a replacement tends to keep
    the wrench balance of the assignment; otherwise it is uniform.
    """
    rng = rng if rng is not None else np.random.default_rng()
    T = params.temperature_at(state.iteration) if temperature is None else temperature
    idx = state.contacts.indices.copy()
    all_points = np.arange(problem.n_points)
    near = None
    changed = False
    width = params.resample_normal_width
    for j in range(idx.shape[0]):
        for c in range(idx.shape[1]):
            if rng.random() >= params.resample_probability:
                continue
            pool = all_points
            if params.resample_radius > 0:
                if near is None:
                    pts = sample_hand_surface(problem.model, state.cfg, problem.seed).points
                    near = [distance_to_object(pts, o) for o in problem.scene.objects]
                d, n = near[j]
                close = np.abs(d) <= params.resample_radius
                if close.any():
                    pool = all_points[close]
            free = np.setdiff1d(pool, idx[j])
            if len(free) == 0:
                continue
            if width > 0 and near is not None:
                n = near[j][1]
                gap = np.sum((n[free] - n[idx[j, c]]) ** 2, axis=1)
                p = np.exp(-(gap - gap.min()) / (2 * width * width))
                idx[j, c] = free[rng.choice(len(free), p=p / p.sum())]
            else:
                idx[j, c] = free[rng.integers(len(free))]
            changed = True
    if not changed:
        return state
    contacts = ContactAssignment(idx)
    bd, g = problem.evaluate(state.cfg, contacts, weights)
    if not (np.isfinite(bd.total) and np.all(np.isfinite(g))):
        return replace(state, nonfinite=state.nonfinite + 1)
    dE = bd.total - state.total
    if dE < 0 or rng.random() < np.exp(-dE / T):
        return replace(state, contacts=contacts, energy=bd, grad=g)
    return state


# ------------------------------------------------------------ initial pose
def _palm_center(model: HandModel) -> np.ndarray:
    local, _, owner = cached_local_samples(model, 0)
    on_palm = owner == model.palm_link
    return local[on_palm].mean(axis=0) if on_palm.any() else np.zeros(3)


def _rotation_taking(a, b) -> np.ndarray:
    """A rotation mapping unit vector ``a`` onto unit vector ``b``."""
    v = np.cross(a, b)
    c = float(a @ b)
    s = np.linalg.norm(v)
    if s < 1e-12:
        if c > 0:
            return np.eye(3)
        perp = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(perp) < 1e-6:
            perp = np.cross(a, [0.0, 1.0, 0.0])
        return rotvec_to_matrix(np.pi * perp / np.linalg.norm(perp))
    return rotvec_to_matrix(v / s * np.arctan2(s, c))


def initial_configuration(model: HandModel, scene: Scene, rng, params: MalaParams = MalaParams(), attempts: int = 200):
    """A random pre-manipulation pose facing the objects.

    The palm centre is placed ``init_distance`` from the object centroid,
    in a direction at least 30 degrees above the table, with the palm
    normal pointing at the centroid, a random roll, and mid-range joints
    with Gaussian noise. Poses touching the table or an object are redrawn.
    """
    centroid = scene.centroid
    palm_c = _palm_center(model)
    normal = np.asarray(model.palm_normal, dtype=float)
    lo, hi = params.init_distance
    cfg = None
    for _ in range(attempts):
        z = rng.uniform(0.5, 1.0)
        az = rng.uniform(0.0, 2 * np.pi)
        direction = np.array([np.sqrt(1 - z * z) * np.cos(az), np.sqrt(1 - z * z) * np.sin(az), z])
        dist = rng.uniform(lo, hi)
        roll = rng.uniform(-np.pi, np.pi)
        R = rotvec_to_matrix(direction * roll) @ _rotation_taking(normal, -direction)
        target = centroid + dist * direction
        q = model.clamp(model.mid_q() + params.init_joint_noise * rng.standard_normal(model.n_joints))
        cfg = HandConfiguration(RigidTransform(target - R @ palm_c, matrix_to_quat(R)), q)
        pts = sample_hand_surface(model, cfg).points
        if scene.table and pts[:, 2].min() <= 0.0:
            continue
        if any(_any_inside(o, pts) for o in scene.objects):
            continue
        return cfg
    log.warning("no clear initial pose in %d attempts; using the last draw", attempts)
    return cfg


def _any_inside(obj, pts) -> bool:
    d, _ = distance_to_object(pts, obj)
    return bool((d < 0).any())


# ------------------------------------------------------------ chains
@dataclass(frozen=True, eq=False)
class ChainResult:
    """Outcome of one chain.

    ``best`` is the lowest-energy state visited; ``feasible`` is the
    lowest-energy visited state that passed the filter (None if no state
    passed or no thresholds were given).
    """

    chain: int
    best: ChainState
    best_iteration: int
    accepted: int
    nonfinite: int
    feasible: ChainState | None = None
    feasible_iteration: int = -1


def run_chain(
    problem: EnergyProblem, weights: EnergyWeights, params: MalaParams, chain: int,
    thresholds: FilterThresholds | None = None, friction: FrictionModel = FrictionModel(),
) -> ChainResult:  # fmt: skip
    """Run one annealed chain; its randomness depends only on ``(seed, chain)``.

    A common multiplier on the block step sizes is adapted towards
    ``params.adapt_target`` acceptance (``adapt_rate = 0`` keeps it at 1).
    With ``thresholds``, every visited state that lowers the best passing
    energy is tested against the filter; the Q1 part of that test uses the
    LP alone and the final kept state is confirmed with the exact hull.
    """
    rng = np.random.default_rng([params.seed, chain])
    model = problem.model
    cfg = initial_configuration(model, problem.scene, rng, params)
    contacts = ContactAssignment.random(problem.n_objects, weights.n_contacts, problem.n_points, rng)
    state = evaluate_state(problem, cfg, contacts, weights, chain)
    best, best_it, accepted = state, 0, 0
    feasible, feasible_it = None, -1
    log_scale = 0.0
    for t in range(params.iterations):
        T = params.temperature_at(t)
        prev = state
        state, ok = mala_step(state, params, weights=weights, temperature=T, rng=rng, problem=problem, step_scale=np.exp(log_scale))
        accepted += ok
        # Robbins-Monro control of a common step multiplier
        log_scale = min(max(log_scale + params.adapt_rate * (ok - params.adapt_target), -MAX_LOG_SCALE), MAX_LOG_SCALE)
        if (t + 1) % params.resample_period == 0 and params.resample_probability > 0:
            state = resample_contacts(state, params, problem, weights, rng, T)
        if state.total < best.total:
            best, best_it = state, t + 1
        if (
            thresholds is not None
            and state is not prev
            and (feasible is None or state.total < feasible.total)
            and passes_filter(state.cfg, state.energy, problem.scene, model, thresholds, weights.n_contacts, problem.seed, friction, False)
        ):
            feasible, feasible_it = state, t + 1
    # the in-loop Q1 test is the LP alone; confirm the kept state with the hull
    if feasible is not None and thresholds.require_q1:
        sets = contact_sets(feasible.cfg, problem.scene, model, thresholds.contact_distance, problem.seed)
        if not q1_all_positive(problem.scene, sets, friction):
            log.info("chain %d: kept state fails the exact Q1 check; dropped", chain)
            feasible, feasible_it = None, -1
    return ChainResult(chain, best, best_it, accepted, state.nonfinite, feasible, feasible_it)


def passes_filter(
    state_cfg, energy: EnergyBreakdown, scene: Scene, model: HandModel, thresholds: FilterThresholds, n_contacts: int,
    seed: int = 0, friction: FrictionModel = FrictionModel(), exact_q1: bool = True,
) -> bool:  # fmt: skip
    """Threshold test shared by synthesis and re-measurement.

    Cheap tests run first; the sample-based depth bounds the refined depth
    from below, so it can reject before the refined measurement. With
    ``thresholds.require_q1`` the re-measured contacts must also give
    ``q1_min > 0``: the energy's contacts can balance while hovering a few
    millimetres off the surface, which the other thresholds do not catch.
    ``exact_q1=False`` decides that with the LP test only (see
    :func:`q1_all_positive`).
    """
    if np.any(energy.force_closure > thresholds.max_force_closure):
        return False
    if contact_ratio(state_cfg, scene, model, thresholds.contact_distance, n_contacts, seed) < thresholds.min_contact_ratio:
        return False
    limit = 1000.0 * thresholds.max_penetration
    if penetration_depth(state_cfg, scene, model, seed, refine=False) > limit:
        return False
    if penetration_depth(state_cfg, scene, model, seed) > limit:
        return False
    if thresholds.require_q1:
        sets = contact_sets(state_cfg, scene, model, thresholds.contact_distance, seed)
        return q1_all_positive(scene, sets, friction, exact_q1)
    return True


def _run_chunk(args):
    model, scene, weights, params, sample_seed, chains, thresholds, friction = args
    problem = EnergyProblem(model, scene, sample_seed)
    return [run_chain(problem, weights, params, c, thresholds, friction) for c in chains]


def run_chains(
    scene, model, weights, params, jobs: int = 1, sample_seed: int = 0, chains=None, thresholds=None, friction: FrictionModel = FrictionModel(),
) -> list:  # fmt: skip
    """Run chains serially or in worker processes; ordered by chain id."""
    chains = list(range(params.chains)) if chains is None else list(chains)
    if jobs <= 1 or len(chains) <= 1:
        return _run_chunk((model, scene, weights, params, sample_seed, chains, thresholds, friction))
    chunks = [chains[i::jobs] for i in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(_run_chunk, [(model, scene, weights, params, sample_seed, c, thresholds, friction) for c in chunks if c])
        results = [r for part in parts for r in part]
    return sorted(results, key=lambda r: r.chain)


def synthesize(
    scene: Scene, model: HandModel, weights: EnergyWeights = EnergyWeights(), params: MalaParams = MalaParams(),
    thresholds: FilterThresholds = FilterThresholds(), *, jobs: int = 1, friction: FrictionModel = FrictionModel(),
    sample_seed: int = 0, scene_ref: str | None = None,
) -> list:  # fmt: skip
    """Synthesize grasps with parallel annealed chains.

    Returns:
        One :class:`GraspRecord` per surviving chain holding its lowest-energy
        state among those passing ``thresholds``, sorted by
        ``(total energy, chain id)``. An empty list means no chain survived.
    """
    scene.require_objects()
    results = run_chains(scene, model, weights, params, jobs, sample_seed, thresholds=thresholds, friction=friction)
    records = []
    for res in results:
        st = res.feasible
        if st is None:
            continue
        quality = quality_report(st.cfg, scene, model, friction, thresholds, weights.n_contacts, sample_seed)
        prov = {
            "seed": int(params.seed),
            "chain": int(res.chain),
            "iterations": int(params.iterations),
            "best_iteration": int(res.feasible_iteration),
            "sample_seed": int(sample_seed),
            "stage": "synth",
            "version": __version__,
        }
        records.append(GraspRecord(scene_ref or scene.to_dict(), st.cfg, st.contacts, st.energy, quality, prov))
    records.sort(key=lambda r: (r.energy.total, r.provenance["chain"]))
    log.info("%d of %d chains passed the filter", len(records), len(results))
    return records
