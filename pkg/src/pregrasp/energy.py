"""Multi-object grasp energy, its terms and its gradient.

The energy of a hand configuration over a scene is

    sum_j E_fc(x_j, O_j) + lam_p * E_p + lam_sp * E_sp + lam_q * E_q

where ``x_j`` are contact points picked from the hand surface samples for
object ``j``. The force-closure term is the squared net wrench of unit
inward-normal forces at the contacts plus ``lam_d`` times the squared
contact-to-surface distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields

import numpy as np

from . import backend
from ._fallback import link_frames as _frames_raw
from ._fallback import self_collision
from .geometry import Scene, distance_to_object, scene_arrays
from .kinematics import HandConfiguration, HandModel, HandSurfacePoints, cached_local_samples

log = logging.getLogger(__name__)

SELF_CLEARANCE = 0.002


class NumericalError(FloatingPointError):
    """A non-finite value appeared while evaluating an energy term."""

    def __init__(self, term: str, message: str = ""):
        self.term = term
        super().__init__(message or f"non-finite value in energy term {term!r}")


@dataclass(frozen=True)
class EnergyWeights:
    """Weights of the energy terms; ``n_contacts`` is contacts per object."""

    penetration: float = 1e4
    self_penetration: float = 10.0
    joint_limits: float = 1.0
    contact_distance: float = 300.0
    n_contacts: int = 3
    clearance: float = SELF_CLEARANCE

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"energy weight {f.name} must be finite and non-negative")
        if self.n_contacts < 1:
            raise ValueError("n_contacts must be at least 1")

    def scaled(self, **factors) -> "EnergyWeights":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, c in factors.items():
            vals[k] = vals[k] * c
        return EnergyWeights(**vals)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True, eq=False)
class ContactAssignment:
    """Hand-sample indices used as contacts, one row per object."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 2:
            raise ValueError("contact indices must be a 2-D array (objects x contacts)")
        object.__setattr__(self, "indices", idx)

    @property
    def n_objects(self) -> int:
        return self.indices.shape[0]

    @property
    def n_contacts(self) -> int:
        return self.indices.shape[1]

    def validate(self, n_points: int, n_objects: int | None = None) -> None:
        if n_objects is not None and self.n_objects != n_objects:
            raise ValueError(f"contacts cover {self.n_objects} objects, scene has {n_objects}")
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n_points):
            raise ValueError("contact index out of range")

    def replace_row(self, j: int, row) -> "ContactAssignment":
        idx = self.indices.copy()
        idx[j] = row
        return ContactAssignment(idx)

    def to_list(self) -> list:
        return [[int(i) for i in row] for row in self.indices]

    @classmethod
    def random(cls, n_objects: int, n_contacts: int, n_points: int, rng) -> "ContactAssignment":
        rows = [rng.choice(n_points, size=n_contacts, replace=False) for _ in range(n_objects)]
        return cls(np.array(rows, dtype=np.int64).reshape(n_objects, n_contacts))


@dataclass(frozen=True, eq=False)
class EnergyBreakdown:
    """Per-term energies; ``total`` uses the weights it was evaluated with."""

    force_closure: np.ndarray
    penetration: float
    self_penetration: float
    joint_limits: float
    total: float
    degenerate_contacts: int = 0
    attraction: float = 0.0

    def to_dict(self) -> dict:
        return {
            "force_closure": [float(v) for v in self.force_closure],
            "penetration": float(self.penetration),
            "self_penetration": float(self.self_penetration),
            "joint_limits": float(self.joint_limits),
            "total": float(self.total),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EnergyBreakdown":
        return cls(
            np.asarray(data["force_closure"], dtype=float),
            float(data["penetration"]),
            float(data["self_penetration"]),
            float(data["joint_limits"]),
            float(data["total"]),
        )


def combine(fc, ep, esp, eq, weights: EnergyWeights) -> float:
    return float(np.sum(fc) + weights.penetration * ep + weights.self_penetration * esp + weights.joint_limits * eq)


# ------------------------------------------------------------ term functions
def force_closure_error(contacts, surface: HandSurfacePoints, shape, contact_distance: float = 300.0):
    """Force-closure residual of one object's contacts.

    Args:
        contacts: Indices into ``surface`` for this object.
        surface: Posed hand samples.
        shape: The object.
        contact_distance: Weight of the squared contact-distance term.

    Returns:
        ``(value, degenerate)``; ``degenerate`` counts contacts whose normal
        was undefined (replaced by a fixed direction).
    """
    x = surface.points[np.asarray(contacts, dtype=np.int64)]
    R = shape.pose.rotation
    from .geometry import primitive_sdf

    d, g, deg = primitive_sdf(shape.kind, shape.scaled_dims, (x - shape.center) @ R)
    n = -(g @ R.T)
    r = x - shape.center
    F = n.sum(axis=0)
    T = np.cross(r, n).sum(axis=0)
    value = float(F @ F + T @ T + contact_distance * float(d @ d))
    if deg.any():
        log.debug("%d contacts at degenerate points", int(deg.sum()))
    return value, int(deg.sum())


def penetration_energy(surface: HandSurfacePoints, scene: Scene) -> float:
    """Sum of squared penetration depths of hand samples into objects and table (m^2)."""
    total = 0.0
    for obj in scene.objects:
        d, _ = distance_to_object(surface.points, obj)
        pen = np.minimum(d, 0.0)
        total += float(np.sum(pen * pen))
    if scene.table:
        pen = np.minimum(surface.points[:, 2], 0.0)
        total += float(np.sum(pen * pen))
    return total


def link_frames(model: HandModel, cfg: HandConfiguration):
    model.check(cfg)
    a = model.arrays
    return _frames_raw(a["parent"], a["qidx"], a["axis"], a["orig_R"], a["orig_t"], cfg.base.position, cfg.base.rotation, cfg.q)


def self_penetration_pairs(model: HandModel, cfg: HandConfiguration, clearance: float = SELF_CLEARANCE):
    """Primitive pair distances (m) for the non-adjacent pairs."""
    Rs, ts = link_frames(model, cfg)
    pa = model.primitive_arrays
    _, _, _, _, dist = self_collision(pa["link"], pa["kind"], pa["a"], pa["b"], pa["R"], pa["r"], pa["pairs"], Rs, ts, clearance)
    return dist


def self_penetration_energy(model: HandModel, cfg: HandConfiguration, clearance: float = SELF_CLEARANCE) -> float:
    """Squared clearance violations over non-adjacent primitive pairs (m^2)."""
    Rs, ts = link_frames(model, cfg)
    pa = model.primitive_arrays
    E, *_ = self_collision(pa["link"], pa["kind"], pa["a"], pa["b"], pa["R"], pa["r"], pa["pairs"], Rs, ts, clearance)
    return E


def joint_limit_energy(model: HandModel, cfg: HandConfiguration) -> float:
    """Squared joint-limit violations (rad^2)."""
    model.check(cfg)
    over = np.maximum(cfg.q - model.upper, 0.0)
    under = np.maximum(model.lower - cfg.q, 0.0)
    return float(over @ over + under @ under)


# --------------------------------------------------------------- fused path
@dataclass
class EnergyProblem:
    """A hand, a scene and a surface-sample seed packed for the kernels."""

    model: HandModel
    scene: Scene
    seed: int = 0
    kernel_name: str | None = None
    _arrays: dict = field(init=False, repr=False)

    def __post_init__(self):
        m = self.model.arrays
        p = self.model.primitive_arrays
        local, _, owner = cached_local_samples(self.model, self.seed)
        kind, dims, R, t = scene_arrays(self.scene)
        self._arrays = dict(
            head=(m["parent"], m["qidx"], m["axis"], m["orig_R"], m["orig_t"], m["lower"], m["upper"], owner, local),
            prims=(p["link"], p["kind"], p["a"], p["b"], p["R"], p["r"], p["pairs"]),
            scene=(kind, dims, R, t, int(self.scene.table)),
        )
        self.kernel = backend.get(self.kernel_name)

    @property
    def n_points(self) -> int:
        return len(self._arrays["head"][7])

    @property
    def n_objects(self) -> int:
        return self.scene.n_objects

    def raw(self, cfg: HandConfiguration, contacts, wvec, want_grad: bool = True):
        """Run the kernel; returns ``(terms, grad, degenerate)``."""
        idx = contacts.indices if isinstance(contacts, ContactAssignment) else np.asarray(contacts, dtype=np.int64)
        idx = idx.reshape(self.n_objects, -1) if self.n_objects else np.zeros((0, 0), dtype=np.int64)
        idx = np.ascontiguousarray(idx, dtype=np.int64)
        if cfg.q.shape != (self.model.n_joints,):
            self.model.check(cfg)
        terms = np.zeros(self.n_objects + 4)
        grad = np.zeros(self.model.n_dof)
        deg = self.kernel.evaluate(
            *self._arrays["head"],
            *self._arrays["prims"],
            *self._arrays["scene"],
            idx,
            np.asarray(wvec, dtype=float),
            np.ascontiguousarray(cfg.base.position),
            np.ascontiguousarray(cfg.base.rotation),
            np.ascontiguousarray(cfg.q),
            terms,
            grad,
            int(want_grad),
        )
        return terms, grad, deg

    def evaluate(self, cfg, contacts, weights: EnergyWeights, want_grad: bool = True):
        """Energy breakdown and gradient of the weighted total."""
        wvec = weight_vector(weights)
        terms, grad, deg = self.raw(cfg, contacts, wvec, want_grad)
        O = self.n_objects
        fc = terms[:O].copy()
        bd = EnergyBreakdown(fc, terms[O], terms[O + 1], terms[O + 2], combine(fc, terms[O], terms[O + 1], terms[O + 2], weights), deg)
        return bd, grad


def weight_vector(weights: EnergyWeights, fc: float = 1.0, attract: float = 0.0, tau: float = 0.0) -> np.ndarray:
    return np.array(
        [
            fc,
            weights.penetration,
            weights.self_penetration,
            weights.joint_limits,
            weights.contact_distance,
            attract,
            tau,
            weights.clearance,
        ]
    )


def _as_contacts(contacts) -> ContactAssignment:
    return contacts if isinstance(contacts, ContactAssignment) else ContactAssignment(contacts)


def _check(problem: EnergyProblem, cfg, contacts: ContactAssignment):
    problem.model.check(cfg)
    problem.scene.require_objects()
    contacts.validate(problem.n_points, problem.n_objects)


def total_energy(model, cfg, scene, contacts, weights: EnergyWeights | None = None, seed: int = 0) -> EnergyBreakdown:
    """Weighted total energy and its per-term breakdown."""
    weights = weights or EnergyWeights()
    contacts = _as_contacts(contacts)
    problem = EnergyProblem(model, scene, seed)
    _check(problem, cfg, contacts)
    bd, _ = problem.evaluate(cfg, contacts, weights, want_grad=False)
    _raise_nonfinite(bd)
    return bd


def _raise_nonfinite(bd: EnergyBreakdown) -> None:
    for name, val in (
        ("force_closure", np.sum(bd.force_closure)),
        ("penetration", bd.penetration),
        ("self_penetration", bd.self_penetration),
        ("joint_limits", bd.joint_limits),
    ):
        if not np.isfinite(val):
            raise NumericalError(name)


def energy_gradient(model, cfg, scene, contacts, weights: EnergyWeights | None = None, seed: int = 0) -> np.ndarray:
    """Gradient of the total energy w.r.t. ``(p, rotation tangent, q)``.

    Raises:
        NumericalError: naming the first term whose value or gradient is
            not finite.
    """
    weights = weights or EnergyWeights()
    contacts = _as_contacts(contacts)
    problem = EnergyProblem(model, scene, seed)
    _check(problem, cfg, contacts)
    bd, grad = problem.evaluate(cfg, contacts, weights)
    _raise_nonfinite(bd)
    if not np.all(np.isfinite(grad)):
        isolate = {
            "force_closure": (1.0, 0, 0, 0),
            "penetration": (0.0, weights.penetration, 0, 0),
            "self_penetration": (0.0, 0, weights.self_penetration, 0),
            "joint_limits": (0.0, 0, 0, weights.joint_limits),
        }
        for name, (f, p, sp, q) in isolate.items():
            w = np.array([f, p, sp, q, weights.contact_distance, 0.0, 0.0, weights.clearance])
            _, g, _ = problem.raw(cfg, contacts, w)
            if not np.all(np.isfinite(g)):
                raise NumericalError(name)
        raise NumericalError("unknown")
    return grad


# ------------------------------------------------------ finite differences
def _rotvec_matrix(w, dt):
    w = np.asarray(w, dtype=dt)
    th = np.sqrt(w @ w)
    K = np.array([[0, -w[2], w[1]], [w[2], 0, -w[0]], [-w[1], w[0], 0]], dtype=dt)
    if th < 1e-30:
        return np.eye(3, dtype=dt) + K
    K = K / th
    return np.eye(3, dtype=dt) + np.sin(th) * K + (1 - np.cos(th)) * (K @ K)


def perturbed_terms(problem: EnergyProblem, cfg: HandConfiguration, contacts, wvec, delta, dtype=np.longdouble):
    """Kernel terms at ``cfg`` stepped by the tangent vector ``delta``.

    The step and the whole evaluation are carried out in ``dtype`` with the
    numpy kernel, so differences of nearby energies are not swamped by
    double-precision roundoff.
    """
    from . import _fallback

    delta = np.asarray(delta, dtype=dtype)
    head = [np.asarray(a, dtype=dtype) if a.dtype.kind == "f" else a for a in problem._arrays["head"]]
    prims = [np.asarray(a, dtype=dtype) if a.dtype.kind == "f" else a for a in problem._arrays["prims"]]
    kind, dims, R, t, table = problem._arrays["scene"]
    scene = (kind, dims.astype(dtype), R.astype(dtype), t.astype(dtype), table)
    idx = contacts.indices if isinstance(contacts, ContactAssignment) else np.asarray(contacts, dtype=np.int64)
    base_R = _rotvec_matrix(delta[3:6], dtype) @ cfg.base.rotation.astype(dtype)
    base_t = cfg.base.position.astype(dtype) + delta[:3]
    q = cfg.q.astype(dtype) + delta[6:]
    terms = np.zeros(problem.n_objects + 4, dtype=dtype)
    _fallback.evaluate(
        *head, *prims, *scene, idx.reshape(problem.n_objects, -1), np.asarray(wvec, dtype=dtype),
        base_t, base_R, q, terms, np.zeros(problem.model.n_dof, dtype=dtype), 0,
    )  # fmt: skip
    return terms


def weighted_total(terms, wvec, n_objects: int):
    w_fc, lam_p, lam_sp, lam_q, _, attract = wvec[:6]
    O = n_objects
    return w_fc * np.sum(terms[:O]) + lam_p * terms[O] + lam_sp * terms[O + 1] + lam_q * terms[O + 2] + attract * terms[O + 3]


def finite_difference_gradient(problem: EnergyProblem, cfg, contacts, weights: EnergyWeights, h: float = 1e-6, dtype=np.longdouble):
    """Central-difference gradient of the weighted total (test oracle)."""
    wvec = weight_vector(weights)
    n = problem.model.n_dof
    out = np.zeros(n)
    for k in range(n):
        e = np.zeros(n)
        e[k] = h
        hi = weighted_total(perturbed_terms(problem, cfg, contacts, wvec, e, dtype), wvec, problem.n_objects)
        lo = weighted_total(perturbed_terms(problem, cfg, contacts, wvec, -e, dtype), wvec, problem.n_objects)
        out[k] = float((hi - lo) / (2 * dtype(h)))
    return out
