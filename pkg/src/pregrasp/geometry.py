"""Analytic signed distances, object shapes, scenes and tabletop placement.

All primitives are centred at their local origin. Cylinders and capsules
are aligned with local ``z``; ``dims`` holds ``(radius,)`` for spheres,
half extents for boxes and ``(radius, half_length)`` for cylinders and
capsules. Distances are negative inside and gradients point outward.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .transforms import RigidTransform, axis_rotation, quat_to_matrix, z_rotation

log = logging.getLogger(__name__)

KINDS = ("sphere", "box", "cylinder", "capsule")
KIND_CODES = {name: i for i, name in enumerate(KINDS)}
DEFAULT_CLOUD_POINTS = 512

_FALLBACK_DIR = np.array([0.0, 0.0, 1.0])
_EPS = 1e-12


class PlacementError(RuntimeError):
    """Raised when no valid object placement is found within the attempt budget."""


def _dims3(kind: str, dims) -> np.ndarray:
    dims = np.asarray(dims, dtype=float).ravel()
    out = np.zeros(3)
    need = {"sphere": 1, "box": 3, "cylinder": 2, "capsule": 2}[kind]
    if dims.size < need:
        raise ValueError(f"{kind} needs {need} dimensions, got {dims.size}")
    out[:need] = dims[:need]
    if np.any(out[:need] <= 0):
        raise ValueError(f"{kind} dimensions must be positive")
    return out


def primitive_sdf(kind: str, dims, points, hessian: bool = False):
    """Signed distance of local-frame points to a primitive.

    Args:
        kind: One of ``KINDS``.
        dims: Primitive dimensions (already scaled).
        points: ``(N, 3)`` points in the primitive frame.
        hessian: Also return the ``(N, 3, 3)`` Hessian of the distance.

    Returns:
        ``(dist, grad, degenerate)`` or ``(dist, grad, hess, degenerate)``,
        where ``degenerate`` marks points with an undefined gradient (the
        centre of a sphere, the axis of a capsule); those get the local
        ``+z`` direction and a zero Hessian.
    """
    # float64 unless the caller passes extended-precision arrays
    dt = np.result_type(np.asarray(points).dtype, np.asarray(dims).dtype, np.float64)
    p = np.atleast_2d(np.asarray(points, dtype=dt))
    n = p.shape[0]
    dims = np.asarray(dims, dtype=dt)
    H = np.zeros((n, 3, 3), dtype=dt) if hessian else None
    degenerate = np.zeros(n, dtype=bool)
    eye = np.eye(3, dtype=dt)

    if kind in ("sphere", "capsule"):
        r = dims[0]
        v = p.copy()
        if kind == "capsule":
            h = dims[1]
            zc = np.clip(p[:, 2], -h, h)
            v[:, 2] = p[:, 2] - zc
            side = np.abs(p[:, 2]) < h
        L = np.linalg.norm(v, axis=1)
        degenerate = L < _EPS
        safe = np.where(degenerate, 1.0, L)
        g = v / safe[:, None]
        g[degenerate] = _FALLBACK_DIR
        d = L - r
        if hessian:
            H[:] = (eye - g[:, :, None] * g[:, None, :]) / safe[:, None, None]
            if kind == "capsule":
                H[side, 2, 2] -= 1.0 / safe[side]
            H[degenerate] = 0.0
    elif kind == "box":
        b = dims
        s = np.where(p >= 0, 1.0, -1.0)
        q = np.abs(p) - b
        o = np.maximum(q, 0.0)
        L = np.linalg.norm(o, axis=1)
        outside = L > 0
        inner = np.max(q, axis=1)
        d = np.where(outside, L, inner)
        g = np.zeros((n, 3), dtype=dt)
        safe = np.where(outside, L, 1.0)
        g[outside] = s[outside] * o[outside] / safe[outside, None]
        inside_idx = np.nonzero(~outside)[0]
        k = np.argmax(q[inside_idx], axis=1)
        g[inside_idx, k] = s[inside_idx, k]
        if hessian:
            act = (q > 0) & outside[:, None]
            P = act[:, :, None] & act[:, None, :]
            Hb = (eye[None] - g[:, :, None] * g[:, None, :]) / safe[:, None, None]
            H[:] = np.where(P, Hb, 0.0)
    elif kind == "cylinder":
        r, h = dims[0], dims[1]
        rho = np.hypot(p[:, 0], p[:, 1])
        axis_pts = rho < _EPS
        rho_safe = np.where(axis_pts, 1.0, rho)
        u = np.zeros((n, 3), dtype=dt)
        u[:, 0] = np.where(axis_pts, 1.0, p[:, 0] / rho_safe)
        u[:, 1] = np.where(axis_pts, 0.0, p[:, 1] / rho_safe)
        sz = np.where(p[:, 2] >= 0, 1.0, -1.0)
        a = rho - r
        c = np.abs(p[:, 2]) - h
        ez = np.zeros((n, 3), dtype=dt)
        ez[:, 2] = sz
        rim = (a > 0) & (c > 0)
        side = ~rim & (a > c)
        cap = ~rim & ~side
        L = np.hypot(np.maximum(a, 0), np.maximum(c, 0))
        d = np.where(rim, L, np.maximum(a, c))
        g = np.where(side[:, None], u, ez)
        Lsafe = np.where(rim, L, 1.0)
        g[rim] = (a[rim, None] * u[rim] + c[rim, None] * ez[rim]) / Lsafe[rim, None]
        degenerate = axis_pts & side
        if hessian:
            # Hessian of rho in the xy block
            Hrho = np.zeros((n, 3, 3), dtype=dt)
            Hrho[:, :2, :2] = (np.eye(2, dtype=dt)[None] - u[:, :2, None] * u[:, None, :2]) / rho_safe[:, None, None]
            Hrho[axis_pts] = 0.0
            H[side] = Hrho[side]
            outer = u[:, :, None] * u[:, None, :] + ez[:, :, None] * ez[:, None, :] - g[:, :, None] * g[:, None, :]
            H[rim] = (outer[rim] + a[rim, None, None] * Hrho[rim]) / Lsafe[rim, None, None]
    else:
        raise ValueError(f"unknown primitive kind {kind!r}")

    if hessian:
        return d, g, H, degenerate
    return d, g, degenerate


def primitive_support_height(kind: str, dims, R) -> float:
    """Distance from the centre to the lowest point of a rotated primitive."""
    dims = np.asarray(dims, dtype=float)
    down = R.T @ np.array([0.0, 0.0, -1.0])
    if kind == "sphere":
        return float(dims[0])
    if kind == "box":
        return float(np.sum(np.abs(down) * dims))
    az = abs(down[2])
    if kind == "cylinder":
        return float(dims[1] * az + dims[0] * np.sqrt(max(0.0, 1.0 - az * az)))
    return float(dims[1] * az + dims[0])


def primitive_area_parts(kind: str, dims):
    """Surface parts as ``(name, area)`` pairs used for area-weighted sampling."""
    if kind == "sphere":
        return [("sphere", 4 * np.pi * dims[0] ** 2)]
    if kind == "box":
        x, y, z = dims
        return [(f"face{i}", a) for i, a in enumerate([4 * y * z] * 2 + [4 * x * z] * 2 + [4 * x * y] * 2)]
    r, h = dims[0], dims[1]
    if kind == "cylinder":
        return [("side", 2 * np.pi * r * 2 * h), ("top", np.pi * r * r), ("bottom", np.pi * r * r)]
    return [("side", 2 * np.pi * r * 2 * h), ("top", 2 * np.pi * r * r), ("bottom", 2 * np.pi * r * r)]


def _allocate(areas, count: int) -> np.ndarray:
    """Largest-remainder allocation of ``count`` samples proportional to area."""
    areas = np.asarray(areas, dtype=float)
    exact = count * areas / areas.sum()
    n = np.floor(exact).astype(int)
    rest = count - n.sum()
    order = np.argsort(-(exact - n), kind="stable")
    n[order[:rest]] += 1
    return n


def _unit_sphere(rng, m):
    v = rng.normal(size=(m, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v


def sample_primitive_surface(kind: str, dims, count: int, rng: np.random.Generator):
    """Area-weighted points and outward normals on a primitive surface.

    Counts are stratified over the surface parts (box faces, capsule side and
    caps) by largest remainder; points are uniform within each part.
    """
    dims = np.asarray(dims, dtype=float)
    parts = primitive_area_parts(kind, dims)
    counts = _allocate([a for _, a in parts], count)
    pts, nrm = [], []
    for (name, _), m in zip(parts, counts):
        if m == 0:
            continue
        if kind == "sphere":
            n = _unit_sphere(rng, m)
            pts.append(dims[0] * n)
            nrm.append(n)
        elif kind == "box":
            i = int(name[4:])
            axis, sign = i // 2, (1.0 if i % 2 == 0 else -1.0)
            uv = rng.uniform(-1.0, 1.0, size=(m, 3)) * dims
            uv[:, axis] = sign * dims[axis]
            n = np.zeros((m, 3))
            n[:, axis] = sign
            pts.append(uv)
            nrm.append(n)
        else:
            r, h = dims[0], dims[1]
            if name == "side":
                phi = rng.uniform(0, 2 * np.pi, m)
                z = rng.uniform(-h, h, m)
                n = np.stack([np.cos(phi), np.sin(phi), np.zeros(m)], axis=1)
                pts.append(np.stack([r * n[:, 0], r * n[:, 1], z], axis=1))
                nrm.append(n)
            else:
                sign = 1.0 if name == "top" else -1.0
                if kind == "cylinder":
                    rad = r * np.sqrt(rng.uniform(0, 1, m))
                    phi = rng.uniform(0, 2 * np.pi, m)
                    pts.append(np.stack([rad * np.cos(phi), rad * np.sin(phi), np.full(m, sign * h)], axis=1))
                    n = np.zeros((m, 3))
                    n[:, 2] = sign
                    nrm.append(n)
                else:
                    n = _unit_sphere(rng, m)
                    n[:, 2] = sign * np.abs(n[:, 2])
                    pts.append(r * n + np.array([0.0, 0.0, sign * h]))
                    nrm.append(n)
    return np.concatenate(pts), np.concatenate(nrm)


@dataclass(frozen=True, eq=False)
class ObjectShape:
    """A posed, uniformly scaled primitive with a deterministic surface cloud."""

    kind: str
    dims: np.ndarray
    scale: float = 1.0
    pose: RigidTransform = field(default_factory=RigidTransform)
    name: str = ""
    cloud_points: int = DEFAULT_CLOUD_POINTS
    cloud_seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        object.__setattr__(self, "dims", _dims3(self.kind, self.dims))

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def scaled_dims(self) -> np.ndarray:
        return self.dims * self.scale

    @property
    def center(self) -> np.ndarray:
        return self.pose.position

    @property
    def bounding_radius(self) -> float:
        d = self.scaled_dims
        if self.kind == "sphere":
            return float(d[0])
        if self.kind == "box":
            return float(np.linalg.norm(d))
        if self.kind == "cylinder":
            return float(np.hypot(d[0], d[1]))
        return float(d[0] + d[1])

    def with_pose(self, pose: RigidTransform) -> "ObjectShape":
        return replace(self, pose=pose)

    def to_local(self, points) -> np.ndarray:
        R = self.pose.rotation
        return (np.atleast_2d(points) - self.pose.position) @ R

    def surface_cloud(self, world: bool = False):
        """Points and outward normals regenerated from ``cloud_seed``.

        Returned in the object frame unless ``world`` is set.
        """
        rng = np.random.default_rng([self.cloud_seed, self.code])
        pts, nrm = sample_primitive_surface(self.kind, self.scaled_dims, self.cloud_points, rng)
        if world:
            R = self.pose.rotation
            return pts @ R.T + self.pose.position, nrm @ R.T
        return pts, nrm

    def lowest_point_height(self) -> float:
        return float(self.pose.position[2] - primitive_support_height(self.kind, self.scaled_dims, self.pose.rotation))

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "dims": [float(v) for v in self.dims[: {"sphere": 1, "box": 3}.get(self.kind, 2)]],
            "scale": float(self.scale),
            "pose": self.pose.to_dict(),
        }
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectShape":
        return cls(
            kind=data["kind"],
            dims=data["dims"],
            scale=float(data.get("scale", 1.0)),
            pose=RigidTransform.from_dict(data.get("pose", {})),
            name=data.get("name", ""),
        )


def sdf(shape: ObjectShape, point):
    """Signed distance and outward unit gradient for a single world point."""
    d, g = distance_to_object(np.asarray(point, dtype=float).reshape(1, 3), shape)
    return float(d[0]), g[0]


def distance_to_object(points, shape: ObjectShape, clamp: bool = False, hessian: bool = False):
    """Vectorised signed distances and outward surface normals.

    Args:
        points: ``(N, 3)`` world points.
        shape: The object.
        clamp: Return ``max(0, sdf)`` (outside distance) instead.
        hessian: Also return world-frame Hessians.
    """
    R = shape.pose.rotation
    local = (np.atleast_2d(points) - shape.pose.position) @ R
    if hessian:
        d, g, H, _ = primitive_sdf(shape.kind, shape.scaled_dims, local, hessian=True)
        Hw = np.einsum("ij,njk,lk->nil", R, H, R)
    else:
        d, g, _ = primitive_sdf(shape.kind, shape.scaled_dims, local)
    g = g @ R.T
    if clamp:
        d = np.maximum(d, 0.0)
    if hessian:
        return d, g, Hw
    return d, g


@dataclass(frozen=True, eq=False)
class Scene:
    """Objects resting on the table half-space ``z >= 0``.

    Synthesis needs at least one object; an object-free scene is allowed for
    planning against the table alone.
    """

    objects: tuple = ()
    table: bool = True

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))

    @property
    def n_objects(self) -> int:
        return len(self.objects)

    @property
    def centroid(self) -> np.ndarray:
        if not self.objects:
            return np.zeros(3)
        return np.mean([o.center for o in self.objects], axis=0)

    def require_objects(self) -> None:
        if not self.objects:
            raise ValueError("scene has no objects")

    def validate(self, tol: float = 1e-6) -> None:
        if self.table:
            for o in self.objects:
                if o.lowest_point_height() < -tol:
                    raise ValueError(f"object {o.name or o.kind} penetrates the table")

    def transformed(self, T: RigidTransform) -> "Scene":
        """Apply a world transform to every object pose."""
        return replace(self, objects=tuple(o.with_pose(T @ o.pose) for o in self.objects))

    def without_objects(self) -> "Scene":
        return replace(self, objects=())

    def to_dict(self) -> dict:
        return {"objects": [o.to_dict() for o in self.objects], "table": self.table}

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        objects = tuple(ObjectShape.from_dict(o) for o in data.get("objects", []))
        return cls(objects=objects, table=bool(data.get("table", True)))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "Scene":
        return cls.from_dict(json.loads(Path(path).read_text()))


def stable_orientations(kind: str):
    """Resting orientations (rotation matrices) before a random yaw is applied."""
    up = np.eye(3)
    side = axis_rotation([1.0, 0.0, 0.0], np.pi / 2)
    if kind == "sphere":
        return [up]
    if kind == "box":
        return [
            up,
            axis_rotation([1.0, 0.0, 0.0], np.pi),
            side,
            axis_rotation([1.0, 0.0, 0.0], -np.pi / 2),
            axis_rotation([0.0, 1.0, 0.0], np.pi / 2),
            axis_rotation([0.0, 1.0, 0.0], -np.pi / 2),
        ]
    return [up, side]


def _resting(shape: ObjectShape, R: np.ndarray, xy) -> ObjectShape:
    z = primitive_support_height(shape.kind, shape.scaled_dims, R)
    return shape.with_pose(RigidTransform.from_matrix(R, [xy[0], xy[1], z]))


def objects_overlap(a: ObjectShape, b: ObjectShape, tol: float = 1e-6) -> bool:
    """Conservative overlap test using the surface clouds of both shapes."""
    gap = np.linalg.norm(a.center - b.center) - a.bounding_radius - b.bounding_radius
    if gap > 0:
        return False
    if a.kind == "sphere" and b.kind == "sphere":
        return np.linalg.norm(a.center - b.center) < a.scaled_dims[0] + b.scaled_dims[0] - tol
    pa, _ = a.surface_cloud(world=True)
    pb, _ = b.surface_cloud(world=True)
    da, _ = distance_to_object(pa, b)
    db, _ = distance_to_object(pb, a)
    return bool(da.min() < -tol or db.min() < -tol or distance_to_object(a.center[None], b)[0][0] < 0)


def place_objects(
    shapes,
    region=((-0.1, 0.1), (-0.1, 0.1)),
    min_spacing: float = 0.0,
    max_spacing: float = np.inf,
    seed: int = 0,
    attempts: int = 1000,
) -> Scene:
    """Rejection-sample stable, non-overlapping placements on the table.

    Args:
        shapes: Object templates; their poses are ignored.
        region: ``((xmin, xmax), (ymin, ymax))`` for object centres.
        min_spacing: Minimum pairwise centre distance (m).
        max_spacing: Maximum pairwise centre distance (m).
        seed: RNG seed; the result is a pure function of the inputs.
        attempts: Budget of full-scene attempts.

    Raises:
        PlacementError: if no valid scene is found within ``attempts``.
    """
    shapes = list(shapes)
    if not shapes:
        raise ValueError("nothing to place")
    if min_spacing < 0 or max_spacing < min_spacing:
        raise ValueError("spacing bounds must satisfy 0 <= min <= max")
    (x0, x1), (y0, y1) = region
    if x1 < x0 or y1 < y0:
        raise ValueError("empty placement region")
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        placed = []
        for shape in shapes:
            options = stable_orientations(shape.kind)
            R0 = options[int(rng.integers(len(options)))]
            R = z_rotation(rng.uniform(0, 2 * np.pi)) @ R0
            xy = rng.uniform([x0, y0], [x1, y1])
            placed.append(_resting(shape, R, xy))
        ok = True
        for a, b in itertools.combinations(placed, 2):
            dist = np.linalg.norm(a.center - b.center)
            if dist < min_spacing or dist > max_spacing or objects_overlap(a, b):
                ok = False
                break
        if ok:
            scene = Scene(objects=tuple(placed))
            scene.validate()
            return scene
    raise PlacementError(f"no valid placement of {len(shapes)} objects after {attempts} attempts")


def table_rotation(angle: float) -> RigidTransform:
    return RigidTransform.from_matrix(z_rotation(angle))


def scene_arrays(scene: Scene):
    """Flat arrays describing a scene for the compiled kernels."""
    n = scene.n_objects
    if n == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3))
    kind = np.array([o.code for o in scene.objects], dtype=np.int64)
    dims = np.array([o.scaled_dims for o in scene.objects], dtype=float).reshape(n, 3)
    R = np.array([quat_to_matrix(o.pose.quaternion) for o in scene.objects], dtype=float).reshape(n, 3, 3)
    t = np.array([o.pose.position for o in scene.objects], dtype=float).reshape(n, 3)
    return kind, dims, R, t
