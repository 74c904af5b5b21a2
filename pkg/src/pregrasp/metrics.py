"""Grasp quality measurements.

Q1 (the radius of the largest origin-centred ball inside the convex hull of
the contact wrenches), maximal penetration depth, joint-angle diversity,
contact ratio and the static feasibility predicate that combines them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .geometry import Scene, distance_to_object, primitive_sdf
from .kinematics import HandConfiguration, HandModel, link_frames, sample_hand_surface

log = logging.getLogger(__name__)

HULL_TOL = 1e-12
REFINE_CANDIDATES = 8
REFINE_ITERS = 40


@dataclass(frozen=True)
class FrictionModel:
    """Coulomb friction with a polyhedral cone.

    Args:
        mu: Friction coefficient.
        edges: Number of cone edges.
        torque_scale: Length (m) dividing torques; ``None`` uses the
            object's bounding radius.
    """

    mu: float = 0.5
    edges: int = 8
    torque_scale: float | None = None

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("friction coefficient must be positive")
        if self.edges < 3:
            raise ValueError("a friction cone needs at least 3 edges")
        if self.torque_scale is not None and not self.torque_scale > 0:
            raise ValueError("torque scale must be positive")

    def to_dict(self) -> dict:
        return {"mu": self.mu, "edges": self.edges, "torque_scale": self.torque_scale}


@dataclass(frozen=True)
class FilterThresholds:
    """Acceptance thresholds for synthesized grasps (lengths in meters)."""

    max_force_closure: float = 0.05
    max_penetration: float = 0.002
    min_contact_ratio: float = 1.0
    contact_distance: float = 0.003
    require_q1: bool = True  # also demand q1_min > 0 on the re-measured contacts

    def __post_init__(self):
        for name in ("max_force_closure", "max_penetration", "min_contact_ratio", "contact_distance"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative")
        if self.min_contact_ratio > 1:
            raise ValueError("min_contact_ratio must lie in [0, 1]")
        if not isinstance(self.require_q1, bool):
            raise ValueError("require_q1 must be true or false")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("max_force_closure", "max_penetration", "min_contact_ratio", "contact_distance", "require_q1")}


@dataclass(frozen=True)
class QualityReport:
    q1_per_object: tuple
    q1_min: float
    penetration_mm: float
    contact_ratio: float
    feasible: bool

    def to_dict(self) -> dict:
        return {
            "q1_per_object": [float(v) for v in self.q1_per_object],
            "q1_min": float(self.q1_min),
            "penetration_mm": float(self.penetration_mm),
            "contact_ratio": float(self.contact_ratio),
            "feasible": bool(self.feasible),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QualityReport":
        return cls(
            tuple(float(v) for v in data["q1_per_object"]),
            float(data["q1_min"]),
            float(data["penetration_mm"]),
            float(data["contact_ratio"]),
            bool(data["feasible"]),
        )


# ------------------------------------------------------------------- Q1
def _tangents(n):
    # any vector not parallel to n
    a = np.where(np.abs(n[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = np.cross(n, a)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(n, t1)
    return t1, t2


def contact_wrenches(points, normals, friction: FrictionModel = FrictionModel(), center=(0.0, 0.0, 0.0), torque_scale=None):
    """Friction-cone edge wrenches ``(f, r x f / rho)`` for inward normals.

    Each edge force is ``n + mu * t`` with ``t`` a unit tangent, so every
    edge carries a unit normal component.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    N = np.atleast_2d(np.asarray(normals, dtype=float))
    N = N / np.linalg.norm(N, axis=1, keepdims=True)
    rho = torque_scale or friction.torque_scale
    if rho is None:
        raise ValueError("torque scale required")
    t1, t2 = _tangents(N)
    ang = 2.0 * np.pi * np.arange(friction.edges) / friction.edges
    f = N[:, None, :] + friction.mu * (np.cos(ang)[None, :, None] * t1[:, None, :] + np.sin(ang)[None, :, None] * t2[:, None, :])
    r = P - np.asarray(center, dtype=float)
    tau = np.cross(r[:, None, :], f) / rho
    return np.concatenate([f, tau], axis=2).reshape(-1, 6)


def q1_from_wrenches(W) -> float:
    """Distance from the origin to the hull boundary, 0 unless strictly inside."""
    W = np.asarray(W, dtype=float)
    if len(W) < 7 or np.linalg.matrix_rank(W, tol=1e-10) < 6:
        return 0.0
    try:
        hull = ConvexHull(W)
    except QhullError:
        return 0.0
    # equations: n . x + b <= 0 inside, with unit n
    dist = -hull.equations[:, -1]
    q = float(dist.min())
    return q if q > HULL_TOL else 0.0


def positive_combination_margin(W) -> float:
    """Largest ``t`` with ``W.T @ lam = 0``, ``sum(lam) = 1``, ``lam >= t``.

    The origin is strictly inside the hull of full-rank wrenches ``W`` iff
    the margin is positive, so this one LP decides ``Q1 > 0`` without a
    hull. Rank-deficient sets give 0.
    """
    W = np.asarray(W, dtype=float)
    n = len(W)
    if n < 7 or np.linalg.matrix_rank(W, tol=1e-10) < 6:
        return 0.0
    A_eq = np.zeros((7, n + 1))
    A_eq[:6, :n] = W.T
    A_eq[6, :n] = 1.0
    b_eq = np.zeros(7)
    b_eq[6] = 1.0
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])  # t - lam_i <= 0
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b_eq, bounds=[(0, None)] * n + [(None, 1.0)], method="highs")
    return float(max(res.x[-1], 0.0)) if res.status == 0 else 0.0


def q1_metric(points, normals, friction: FrictionModel = FrictionModel(), center=(0.0, 0.0, 0.0), torque_scale=None) -> float:
    """Ferrari-Canny Q1 of a contact set.

    Args:
        points: ``(n, 3)`` contact positions (m).
        normals: ``(n, 3)`` inward (object-pushing) normals.
        friction: Cone model.
        center: Reference point for torques, usually the object centre.
        torque_scale: Overrides ``friction.torque_scale``.

    Returns:
        Q1 >= 0; exactly 0 when the origin is not strictly inside the hull.
    """
    if len(np.atleast_2d(points)) == 0:
        raise ValueError("q1_metric needs at least one contact")
    return q1_from_wrenches(contact_wrenches(points, normals, friction, center, torque_scale))


def q1_lp_oracle(W, n_starts: int = 48, max_iter: int = 60, seed: int = 0) -> float:
    """Q1 through linear programs on the polar polytope.

    The hull contains a ball of radius ``r`` about the origin iff its polar
    ``{y : W y <= 1}`` fits in a ball of radius ``1 / r``. Starting from
    sampled directions ``u``, the support LP ``max u.y`` is re-solved with
    ``u <- y / |y|`` until the polar vertex stops moving; the farthest
    vertex found gives ``Q1 = 1 / |y|``. An unbounded LP means the origin
    is not strictly inside, so Q1 is 0.
    """
    W = np.asarray(W, dtype=float)
    rng = np.random.default_rng(seed)
    starts = np.concatenate([np.eye(6), -np.eye(6), rng.normal(size=(n_starts, 6))])
    ones = np.ones(len(W))
    best = 0.0
    for u in starts:
        u = u / np.linalg.norm(u)
        y_prev = None
        for _ in range(max_iter):
            res = linprog(-u, A_ub=W, b_ub=ones, bounds=[(None, None)] * 6, method="highs")
            if res.status == 3:
                return 0.0
            if res.status != 0:
                break
            y = res.x
            if y_prev is not None and np.linalg.norm(y - y_prev) <= 1e-12 * max(1.0, np.linalg.norm(y)):
                break
            y_prev = y
            u = y / np.linalg.norm(y)
        if y_prev is not None:
            best = max(best, float(np.linalg.norm(y_prev)))
    return 1.0 / best if best > 0 else 0.0


# --------------------------------------------------------------- contacts
def contact_sets(cfg: HandConfiguration, scene: Scene, model: HandModel, contact_distance: float = 0.003, seed: int = 0):
    """Per-object hand samples within ``contact_distance`` of the surface.

    Returns a list of ``(points, inward_normals)`` pairs, normals taken from
    the object.
    """
    surf = sample_hand_surface(model, cfg, seed)
    out = []
    for obj in scene.objects:
        d, g = distance_to_object(surf.points, obj)
        near = np.abs(d) <= contact_distance
        out.append((surf.points[near], -g[near]))
    return out


def q1_per_object(scene: Scene, sets, friction: FrictionModel = FrictionModel()) -> list:
    """Q1 of each object from its :func:`contact_sets` entry."""
    out = []
    for obj, (pts, nrm) in zip(scene.objects, sets):
        rho = friction.torque_scale or obj.bounding_radius
        out.append(q1_metric(pts, nrm, friction, obj.center, rho) if len(pts) else 0.0)
    return out


def q1_all_positive(scene: Scene, sets, friction: FrictionModel = FrictionModel(), exact: bool = True) -> bool:
    """Whether every object has ``Q1 > 0``, usually far cheaper than Q1 itself.

    A positive-combination LP rejects failing sets. With ``exact`` the hull
    is also built for sets the LP accepts, so the answer always equals
    ``min(q1_per_object(...)) > 0``; without it the LP alone decides, which
    can differ only for margins within the hull tolerance.
    """
    for obj, (pts, nrm) in zip(scene.objects, sets):
        if not len(pts):
            return False
        rho = friction.torque_scale or obj.bounding_radius
        W = contact_wrenches(pts, nrm, friction, obj.center, rho)
        if positive_combination_margin(W) <= 0.0 or (exact and q1_from_wrenches(W) <= 0.0):
            return False
    return True


def contact_ratio(cfg, scene: Scene, model: HandModel, contact_distance: float = 0.003, n_contacts: int = 3, seed: int = 0) -> float:
    """Fraction of objects touched by at least ``n_contacts`` hand samples."""
    if contact_distance < 0:
        raise ValueError("contact distance must be non-negative")
    if scene.n_objects == 0:
        return 0.0
    sets = contact_sets(cfg, scene, model, contact_distance, seed)
    return sum(len(p) >= n_contacts for p, _ in sets) / scene.n_objects


# ------------------------------------------------------------ penetration
def _ascend(y, depth_fn, project, step: float = 5e-4, iters: int = REFINE_ITERS):
    """Projected ascent of ``depth_fn`` over a surface, batched over rows of ``y``.

    Each row keeps its own step, grown by 1.5 on improvement and halved
    otherwise; a row stops once its step drops below 1e-7. Returns the best
    depth per row.
    """
    y = np.array(y, dtype=float, copy=True)
    best, grad = depth_fn(y)
    steps = np.full(len(y), step)
    for _ in range(iters):
        live = steps >= 1e-7
        if not live.any():
            break
        cand = project(y[live] + steps[live, None] * grad[live])
        val, g = depth_fn(cand)
        up = val > best[live]
        idx = np.nonzero(live)[0]
        won = idx[up]
        y[won], best[won], grad[won] = cand[up], val[up], g[up]
        steps[idx] = np.where(up, steps[idx] * 1.5, steps[idx] * 0.5)
    return best


def _surface_projector(kind, dims):
    def project(P):
        d, g, _ = primitive_sdf(kind, dims, P)
        return P - d[:, None] * g

    return project


def _deepest_hand_point(model, Rs, ts, surf, depth_world, seeds):
    """Refine penetration depth of hand samples ``seeds`` on their primitives."""
    groups = {}
    for i in seeds:
        li = int(surf.link[i])
        link = model.links[li]
        local = surf.local_points[i]
        k = min(range(len(link.primitives)), key=lambda j: abs(link.primitives[j].sdf_local(local)[0]))
        groups.setdefault((li, k), []).append(i)
    best = 0.0
    for (li, k), members in groups.items():
        PR, pc, (kind, dims) = model.links[li].primitives[k].frame()
        M = Rs[li] @ PR
        origin = Rs[li] @ pc + ts[li]
        y0 = (surf.local_points[members] - pc) @ PR

        def depth_fn(Y, M=M, origin=origin):
            dd, gg = depth_world(Y @ M.T + origin)
            return -dd, -(gg @ M)

        best = max(best, float(_ascend(y0, depth_fn, _surface_projector(kind, dims)).max()))
    return best


def penetration_components(cfg, scene: Scene, model: HandModel, seed: int = 0, refine: bool = True) -> dict:
    """Maximal penetration depth (m) per contact category.

    Hand depths start from the material surface samples; with ``refine``
    the deepest few are pushed further by projected ascent over their
    primitive surfaces. Object-table depth is exact; object-object depth
    uses both surface clouds, refined the same way.
    """
    surf = sample_hand_surface(model, cfg, seed)
    Rs, ts = link_frames(model, cfg)
    out = {"hand_object": 0.0, "hand_table": 0.0, "object_object": 0.0, "object_table": 0.0}

    def hand_depth(fn):
        d, _ = fn(surf.points)
        pen = max(0.0, float(-d.min())) if len(d) else 0.0
        if refine and len(d):
            order = np.argsort(d, kind="stable")[:REFINE_CANDIDATES]
            seeds = [i for i in order if d[i] < 1e-3]
            if seeds:
                pen = max(pen, _deepest_hand_point(model, Rs, ts, surf, fn, seeds))
        return pen

    for obj in scene.objects:
        out["hand_object"] = max(out["hand_object"], hand_depth(lambda X, o=obj: distance_to_object(X, o)))
    if scene.table:
        out["hand_table"] = hand_depth(_table_distance)
        out["object_table"] = max([0.0] + [-o.lowest_point_height() for o in scene.objects])
    for a in range(scene.n_objects):
        for b in range(scene.n_objects):
            if a != b:
                out["object_object"] = max(out["object_object"], _object_into_object(scene.objects[a], scene.objects[b], refine))
    return out


def _table_distance(X):
    g = np.zeros_like(X)
    g[:, 2] = 1.0
    return X[:, 2].copy(), g


def _object_into_object(a, b, refine: bool) -> float:
    """Deepest point of ``a``'s surface inside ``b`` (m)."""
    pts, _ = a.surface_cloud(world=True)
    d, _ = distance_to_object(pts, b)
    pen = max(0.0, float(-d.min()))
    if not refine:
        return pen
    R, t = a.pose.rotation, a.pose.position
    project = _surface_projector(a.kind, a.scaled_dims)

    def depth_fn(Y):
        dd, gg = distance_to_object(Y @ R.T + t, b)
        return -dd, -(gg @ R)

    seeds = [i for i in np.argsort(d, kind="stable")[:REFINE_CANDIDATES] if d[i] < 1e-3]
    if seeds:
        pen = max(pen, float(_ascend((pts[seeds] - t) @ R, depth_fn, project).max()))
    return pen


def penetration_depth(cfg, scene: Scene, model: HandModel, seed: int = 0, refine: bool = True) -> float:
    """Maximal intersection depth between hand, objects and table, in mm."""
    return 1000.0 * max(penetration_components(cfg, scene, model, seed, refine).values())


# ------------------------------------------------------------- diversity
def diversity(grasps) -> float:
    """Mean per-joint population variance of joint angles measured in degrees.

    Args:
        grasps: Configurations of the same hand.

    Returns:
        The average over joints of the variance of ``degrees(q_i)``.
    """
    grasps = list(grasps)
    if len(grasps) < 2:
        raise ValueError("diversity needs at least two grasps")
    Q = np.array([np.asarray(g.q if isinstance(g, HandConfiguration) else g, dtype=float) for g in grasps])
    return float(np.mean(np.var(np.degrees(Q), axis=0)))


# ---------------------------------------------------------- feasibility
def quality_report(
    cfg, scene: Scene, model: HandModel, friction: FrictionModel = FrictionModel(), thresholds: FilterThresholds = FilterThresholds(),
    n_contacts: int = 3, seed: int = 0,
) -> QualityReport:  # fmt: skip
    """All static metrics for one grasp, plus the feasibility predicate."""
    sets = contact_sets(cfg, scene, model, thresholds.contact_distance, seed)
    q1 = q1_per_object(scene, sets, friction)
    ratio = sum(len(p) >= n_contacts for p, _ in sets) / scene.n_objects if scene.n_objects else 0.0
    pen_mm = penetration_depth(cfg, scene, model, seed)
    q1_min = min(q1) if q1 else 0.0
    feasible = bool(q1_min > 0 and pen_mm <= 1000.0 * thresholds.max_penetration and ratio >= 1.0)
    return QualityReport(tuple(q1), q1_min, pen_mm, ratio, feasible)


def static_feasibility(
    cfg, scene, model, friction: FrictionModel = FrictionModel(), thresholds: FilterThresholds = FilterThresholds(),
    n_contacts: int = 3, seed: int = 0,
) -> QualityReport:  # fmt: skip
    """Feasible when Q1 > 0, penetration is within threshold and every object is touched."""
    return quality_report(cfg, scene, model, friction, thresholds, n_contacts, seed)
