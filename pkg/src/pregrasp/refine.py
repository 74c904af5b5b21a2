"""Grasp refinement and reach-trajectory planning.

Refinement runs gradient descent on the penetration energy plus an
attraction of hand samples lying within a shrinking distance band of an
object surface. Reach planning interpolates from a flat hand to the
pre-grasp pose and then smooths the interior waypoints away from
penetration with L-BFGS.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.optimize import minimize

from .energy import ContactAssignment, EnergyBreakdown, EnergyProblem, EnergyWeights
from .geometry import Scene
from .kinematics import HandConfiguration, HandModel, cached_local_samples
from .metrics import penetration_components
from .transforms import RigidTransform, slerp

log = logging.getLogger(__name__)

FLAT_HEIGHT = 0.30


@dataclass(frozen=True)
class RefineParams:
    """Refinement settings; distances in meters.

    ``attraction_sign`` is +1 to pull in-band samples onto the surface and
    -1 for the literal subtracted form, which pushes them outward.
    """

    attraction: float = 1.0
    tau_start: float = 0.002
    tau_end: float = 0.001
    iterations: int = 300
    step: float = 1e-3
    attraction_sign: float = 1.0
    max_halvings: int = 30

    def __post_init__(self):
        if not self.tau_start >= self.tau_end > 0:
            raise ValueError("need tau_start >= tau_end > 0")
        if self.iterations < 1 or not self.step > 0 or self.attraction < 0:
            raise ValueError("iterations and step must be positive and attraction non-negative")
        if self.attraction_sign not in (1.0, -1.0):
            raise ValueError("attraction_sign must be +1 or -1")

    def tau_schedule(self) -> np.ndarray:
        """Band width per iteration, linear from ``tau_start`` to ``tau_end``."""
        if self.iterations == 1:
            return np.array([self.tau_start])
        return np.linspace(self.tau_start, self.tau_end, self.iterations)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class RefineResult:
    cfg: HandConfiguration
    before: EnergyBreakdown
    after: EnergyBreakdown
    tau_trace: np.ndarray
    energy_trace: np.ndarray
    aborted: bool = False


def _empty_contacts(n_objects: int) -> ContactAssignment:
    return ContactAssignment(np.zeros((n_objects, 0), dtype=np.int64))


def refine(
    cfg: HandConfiguration, scene: Scene, model: HandModel, params: RefineParams = RefineParams(),
    *, contacts: ContactAssignment | None = None, weights: EnergyWeights = EnergyWeights(), seed: int = 0,
) -> RefineResult:  # fmt: skip
    """Remove penetration and pull near-contact samples onto the objects.

    Minimises ``E_p + sign * lam_c / (N_o * |S|) * sum d`` over samples with
    ``0 < d <= tau(t)``. Each iteration takes one gradient step, halving the
    step until the objective does not increase, and clamps joints to their
    limits. ``before``/``after`` are full energy breakdowns under
    ``weights``; with no ``contacts`` the force-closure entries are zero.
    """
    model.check(cfg)
    problem = EnergyProblem(model, scene, seed)
    contacts = contacts if contacts is not None else _empty_contacts(scene.n_objects)
    before, _ = problem.evaluate(cfg, contacts, weights, want_grad=False)
    none = _empty_contacts(scene.n_objects)
    scale = params.attraction_sign * params.attraction / (max(scene.n_objects, 1) * problem.n_points)
    taus = params.tau_schedule()
    energies = np.zeros(params.iterations)
    aborted = False

    def objective(c, tau, grad=True):
        w = np.array([0.0, 1.0, 0.0, 0.0, 0.0, scale, tau, weights.clearance])
        terms, g, _ = problem.raw(c, none, w, grad)
        return terms[scene.n_objects] + scale * terms[scene.n_objects + 3], g

    for t, tau in enumerate(taus):
        e, g = objective(cfg, tau)
        if not (np.isfinite(e) and np.all(np.isfinite(g))):
            log.warning("non-finite refinement gradient at iteration %d; keeping last iterate", t)
            energies[t:] = np.nan
            aborted = True
            break
        energies[t] = e
        if not g.any():
            continue
        step = params.step
        for _ in range(params.max_halvings):
            delta = -step * g
            cand = cfg.step(delta)
            cand = cand.with_q(model.clamp(cand.q))
            e_new, _ = objective(cand, tau, grad=False)
            if np.isfinite(e_new) and e_new <= e:
                cfg = cand
                break
            step *= 0.5
    after, _ = problem.evaluate(cfg, contacts, weights, want_grad=False)
    return RefineResult(cfg, before, after, taus, energies, aborted)


# ------------------------------------------------------------ reaching
@dataclass(frozen=True, eq=False)
class Trajectory:
    """Waypoints with uniform timestamps (s)."""

    waypoints: list
    timestamps: np.ndarray
    warning: bool = False
    max_penetration_before: float = 0.0
    max_penetration_after: float = 0.0
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.waypoints) != len(self.timestamps):
            raise ValueError("one timestamp per waypoint is required")

    def __len__(self) -> int:
        return len(self.waypoints)

    def to_dict(self) -> dict:
        return {
            "waypoints": [w.to_dict() for w in self.waypoints],
            "timestamps": [float(t) for t in self.timestamps],
            "warning": bool(self.warning),
            "max_penetration_before": float(self.max_penetration_before),
            "max_penetration_after": float(self.max_penetration_after),
            "info": dict(self.info),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        return cls(
            [HandConfiguration.from_dict(w) for w in data["waypoints"]],
            np.asarray(data["timestamps"], dtype=float),
            bool(data.get("warning", False)),
            float(data.get("max_penetration_before", 0.0)),
            float(data.get("max_penetration_after", 0.0)),
            dict(data.get("info", {})),
        )


@dataclass(frozen=True)
class PlanParams:
    waypoints: int = 32
    smoothness: float = 10.0
    penetration_weight: float = 1e4
    duration: float = 1.0
    max_iterations: int = 500
    warn_depth: float = 0.001

    def __post_init__(self):
        if self.waypoints < 3:
            raise ValueError("a trajectory needs at least 3 waypoints")
        if self.smoothness < 0 or self.penetration_weight < 0 or not self.duration > 0:
            raise ValueError("weights must be non-negative and duration positive")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def flat_hand(model: HandModel, height: float = FLAT_HEIGHT) -> HandConfiguration:
    """Mid-range joints, palm down, palm centre ``height`` above the table origin."""
    local, _, owner = cached_local_samples(model, 0)
    on_palm = owner == model.palm_link
    palm_c = local[on_palm].mean(axis=0) if on_palm.any() else np.zeros(3)
    return HandConfiguration(RigidTransform(np.array([0.0, 0.0, height]) - palm_c), model.mid_q())


def interpolate(start: HandConfiguration, goal: HandConfiguration, n: int) -> list:
    """Linear in position and joints, spherical in orientation; exact endpoints."""
    out = [start]
    for s in np.linspace(0.0, 1.0, n)[1:-1]:
        p = (1 - s) * start.position + s * goal.position
        quat = slerp(start.base.quaternion, goal.base.quaternion, s)
        out.append(HandConfiguration(RigidTransform(p, quat), (1 - s) * start.q + s * goal.q))
    out.append(goal)
    return out


def hand_penetration(cfg: HandConfiguration, scene: Scene, model: HandModel, seed: int = 0) -> float:
    """Deepest hand sample inside an object or the table (m)."""
    comp = penetration_components(cfg, scene, model, seed)
    return max(comp["hand_object"], comp["hand_table"])


def plan_reach(
    start: HandConfiguration | None, goal: HandConfiguration, scene: Scene, model: HandModel,
    params: PlanParams = PlanParams(), seed: int = 0,
) -> Trajectory:  # fmt: skip
    """Reach trajectory from ``start`` (flat hand if None) to ``goal``.

    Interior waypoint positions and joints minimise
    ``w_p * sum E_p + mu * sum |second difference|^2`` with the orientations
    kept on the interpolated path. The endpoints are never touched. If the
    deepest remaining penetration exceeds ``params.warn_depth`` the result
    carries ``warning=True``.
    """
    start = flat_hand(model) if start is None else start
    model.check(start)
    model.check(goal)
    n = params.waypoints
    path = interpolate(start, goal, n)
    times = np.linspace(0.0, params.duration, n)
    depth_before = max(hand_penetration(c, scene, model, seed) for c in path)

    problem = EnergyProblem(model, scene, seed)
    none = _empty_contacts(scene.n_objects)
    wvec = np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, EnergyWeights().clearance])
    nj = model.n_joints
    rots = [c.base.quaternion for c in path]
    X0 = np.array([np.concatenate([c.position, c.q]) for c in path])
    k = 3 + nj

    def unpack(z):
        X = X0.copy()
        X[1:-1] = z.reshape(n - 2, k)
        return X

    def fun(z):
        X = unpack(z)
        total = 0.0
        G = np.zeros_like(X)
        for i in range(1, n - 1):
            c = HandConfiguration(RigidTransform(X[i, :3], rots[i]), X[i, 3:])
            terms, g, _ = problem.raw(c, none, wvec)
            total += params.penetration_weight * terms[scene.n_objects]
            G[i, :3] = params.penetration_weight * g[:3]
            G[i, 3:] = params.penetration_weight * g[6:]
        D = X[2:] - 2 * X[1:-1] + X[:-2]
        total += params.smoothness * float(np.sum(D * D))
        dD = 2 * params.smoothness * D
        G[:-2] += dD
        G[1:-1] -= 2 * dD
        G[2:] += dD
        return total, G[1:-1].ravel()

    z0 = X0[1:-1].ravel()
    f0, g0 = fun(z0)
    info = {"iterations": 0, "objective_before": f0}
    z = z0
    if np.any(g0):
        bounds = [(None, None)] * 3 + list(zip(model.lower, model.upper))
        res = minimize(fun, z0, jac=True, method="L-BFGS-B", bounds=bounds * (n - 2), options={"maxiter": params.max_iterations})
        z = res.x
        info["iterations"] = int(res.nit)
    X = unpack(z)
    waypoints = [start]
    for i in range(1, n - 1):
        waypoints.append(HandConfiguration(RigidTransform(X[i, :3], rots[i]), X[i, 3:]))
    waypoints.append(goal)
    info["objective_after"] = fun(z)[0]
    depth_after = max(hand_penetration(c, scene, model, seed) for c in waypoints)
    warn = depth_after > params.warn_depth
    if warn:
        log.warning("reach trajectory keeps %.2f mm of penetration", 1000 * depth_after)
    return Trajectory(waypoints, times, warn, depth_before, depth_after, info)
