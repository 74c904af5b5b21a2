"""Articulated hand model: forward kinematics, surface samples, keypoints and IK.

Configurations are perturbed on the left: a rotation-tangent step ``w``
maps the base orientation ``R`` to ``exp(w) R`` about the base position.
Every gradient and Jacobian in the package uses this convention, with the
generalised coordinate ordered as ``(position[3], rotation tangent[3], q)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import primitive_sdf, sample_primitive_surface
from .transforms import (
    RigidTransform,
    axis_angle_to_quat,
    axis_rotation,
    matrix_to_quat,
    quat_multiply,
    quat_to_matrix,
)


class ConfigurationError(ValueError):
    """Configuration does not match the hand model."""


class ModelError(ValueError):
    """Malformed hand model description."""


@dataclass(frozen=True, eq=False)
class HandPrimitive:
    """Collision primitive in link coordinates.

    Capsules are the segment ``start``–``end`` swept by ``radius`` (a sphere
    when both ends coincide). Boxes are ``half_extents`` about ``center``,
    rotated by ``quaternion``.
    """

    kind: str
    radius: float = 0.0
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    end: np.ndarray = field(default_factory=lambda: np.zeros(3))
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    half_extents: np.ndarray = field(default_factory=lambda: np.zeros(3))
    quaternion: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        if self.kind not in ("capsule", "sphere", "box"):
            raise ModelError(f"unsupported hand primitive {self.kind!r}")
        for name in ("start", "end", "center", "half_extents"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        q = np.asarray(self.quaternion, dtype=float).reshape(4)
        object.__setattr__(self, "quaternion", q / np.linalg.norm(q))
        if self.kind == "sphere":
            object.__setattr__(self, "end", self.start.copy())
        if self.kind in ("capsule", "sphere") and not self.radius > 0:
            raise ModelError("capsule radius must be positive")
        if self.kind == "box" and np.any(self.half_extents <= 0):
            raise ModelError("box half extents must be positive")

    def frame(self):
        """Rotation, centre and primitive dims in the ``geometry`` convention."""
        if self.kind == "box":
            return quat_to_matrix(self.quaternion), self.center, ("box", self.half_extents)
        axis = self.end - self.start
        length = np.linalg.norm(axis)
        c = 0.5 * (self.start + self.end)
        if length < 1e-12:
            return np.eye(3), c, ("sphere", np.array([self.radius, 0.0, 0.0]))
        z = axis / length
        R = _frame_from_z(z)
        return R, c, ("capsule", np.array([self.radius, 0.5 * length, 0.0]))

    def sdf_local(self, points) -> np.ndarray:
        """Signed distance of link-frame points to this primitive."""
        R, c, (kind, dims) = self.frame()
        d, _, _ = primitive_sdf(kind, dims, (np.atleast_2d(points) - c) @ R)
        return d

    def area(self) -> float:
        if self.kind == "box":
            x, y, z = self.half_extents
            return float(8 * (x * y + y * z + x * z))
        L = np.linalg.norm(self.end - self.start)
        return float(2 * np.pi * self.radius * L + 4 * np.pi * self.radius**2)

    def sample(self, count: int, rng):
        R, c, (kind, dims) = self.frame()
        pts, nrm = sample_primitive_surface(kind, dims, count, rng)
        return pts @ R.T + c, nrm @ R.T

    def to_dict(self) -> dict:
        if self.kind == "box":
            return {
                "type": "box",
                "center": self.center.tolist(),
                "half_extents": self.half_extents.tolist(),
                "quaternion": self.quaternion.tolist(),
            }
        if self.kind == "sphere":
            return {"type": "sphere", "center": self.start.tolist(), "radius": self.radius}
        return {"type": "capsule", "from": self.start.tolist(), "to": self.end.tolist(), "radius": self.radius}

    @classmethod
    def from_dict(cls, data: dict) -> "HandPrimitive":
        kind = data["type"]
        if kind == "box":
            return cls(
                "box",
                center=data.get("center", [0, 0, 0]),
                half_extents=data["half_extents"],
                quaternion=data.get("quaternion", [1, 0, 0, 0]),
            )
        if kind == "sphere":
            return cls("sphere", radius=float(data["radius"]), start=data.get("center", [0, 0, 0]))
        if kind == "capsule":
            return cls("capsule", radius=float(data["radius"]), start=data["from"], end=data["to"])
        raise ModelError(f"unsupported collision type {kind!r}")


def _frame_from_z(z) -> np.ndarray:
    """A rotation whose third column is the unit vector ``z``."""
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    x = np.cross(helper, z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


@dataclass(frozen=True, eq=False)
class Link:
    name: str
    parent: int | None
    joint: str = "fixed"
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    origin: RigidTransform = field(default_factory=RigidTransform)
    limits: tuple = (0.0, 0.0)
    primitives: tuple = ()
    samples: int = 0


@dataclass(frozen=True, eq=False)
class Keypoint:
    link: int
    offset: np.ndarray
    name: str = ""


@dataclass(frozen=True, eq=False)
class HandConfiguration:
    """Hand pose ``(p, R, q)``: base transform plus joint angles (rad)."""

    base: RigidTransform
    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float).ravel())

    @property
    def position(self) -> np.ndarray:
        return self.base.position

    @property
    def rotation(self) -> np.ndarray:
        return self.base.rotation

    def retract(self, dp, dw, dq) -> "HandConfiguration":
        """Apply a tangent step: translate, left-rotate about the base, add to joints."""
        quat = quat_multiply(axis_angle_to_quat(dw), self.base.quaternion)
        return HandConfiguration(RigidTransform(self.base.position + dp, quat), self.q + dq)

    def step(self, delta) -> "HandConfiguration":
        delta = np.asarray(delta, dtype=float)
        return self.retract(delta[:3], delta[3:6], delta[6:])

    def with_q(self, q) -> "HandConfiguration":
        return HandConfiguration(self.base, q)

    def transformed(self, T: RigidTransform) -> "HandConfiguration":
        """Apply a world transform to the base."""
        return HandConfiguration(T @ self.base, self.q.copy())

    def to_dict(self) -> dict:
        return {"base": self.base.to_dict(), "q": [float(v) for v in self.q]}

    @classmethod
    def from_dict(cls, data: dict) -> "HandConfiguration":
        return cls(RigidTransform.from_dict(data["base"]), data["q"])

    def allclose(self, other: "HandConfiguration", atol: float = 1e-9) -> bool:
        return self.base.allclose(other.base, atol) and np.allclose(self.q, other.q, atol=atol, rtol=0)


@dataclass(frozen=True, eq=False)
class HandSurfacePoints:
    """Material sample points on the hand surface.

    ``local_points``/``local_normals`` are fixed in link frames; the world
    arrays are their images under forward kinematics for one configuration.
    """

    points: np.ndarray
    normals: np.ndarray
    link: np.ndarray
    local_points: np.ndarray
    local_normals: np.ndarray

    def __len__(self) -> int:
        return len(self.link)

    def subset(self, index) -> "HandSurfacePoints":
        index = np.asarray(index)
        return HandSurfacePoints(
            self.points[index], self.normals[index], self.link[index], self.local_points[index], self.local_normals[index]
        )


class HandModel:
    """Kinematic tree with collision primitives, keypoints and sample counts.

    Links are stored parent-before-child. The revolute joints, in link
    order, define the layout of ``q``.
    """

    def __init__(self, links, keypoints, palm_link: int = 0, palm_normal=(0.0, 0.0, -1.0), name: str = "hand"):
        self.links = tuple(links)
        self.keypoints = tuple(keypoints)
        self.palm_link = int(palm_link)
        self.palm_normal = np.asarray(palm_normal, dtype=float)
        self.name = name
        self._validate()

    def _validate(self) -> None:
        roots = [i for i, link in enumerate(self.links) if link.parent is None]
        if len(roots) != 1 or roots[0] != 0:
            raise ModelError("the kinematic tree needs exactly one root, listed first")
        for i, link in enumerate(self.links):
            if link.parent is not None and not 0 <= link.parent < i:
                raise ModelError(f"link {link.name!r} must follow its parent")
            if link.joint not in ("fixed", "revolute"):
                raise ModelError(f"unknown joint type {link.joint!r}")
            if link.joint == "revolute":
                if abs(np.linalg.norm(link.axis) - 1.0) > 1e-9:
                    raise ModelError(f"joint axis of {link.name!r} must be unit length")
                if link.limits[0] > link.limits[1]:
                    raise ModelError(f"joint limits of {link.name!r} are inverted")
            if link.samples < 0:
                raise ModelError("sample counts must be non-negative")
            if link.samples > 0 and not link.primitives:
                raise ModelError(f"link {link.name!r} has samples but no geometry")
        for kp in self.keypoints:
            if not 0 <= kp.link < len(self.links):
                raise ModelError("keypoint link out of range")
        if abs(np.linalg.norm(self.palm_normal) - 1.0) > 1e-9:
            raise ModelError("palm normal must be unit length")
        for a, b in self.collision_pairs:
            if any(p.kind == "box" for p in self.links[a].primitives) and any(
                p.kind == "box" for p in self.links[b].primitives
            ):
                raise ModelError("box-box self-collision pairs are not supported")

    # ----------------------------------------------------------------- layout
    @property
    def n_links(self) -> int:
        return len(self.links)

    @cached_property
    def joint_links(self) -> tuple:
        return tuple(i for i, link in enumerate(self.links) if link.joint == "revolute")

    @property
    def n_joints(self) -> int:
        return len(self.joint_links)

    @property
    def n_dof(self) -> int:
        return 6 + self.n_joints

    @property
    def n_keypoints(self) -> int:
        return len(self.keypoints)

    @cached_property
    def lower(self) -> np.ndarray:
        return np.array([self.links[i].limits[0] for i in self.joint_links], dtype=float)

    @cached_property
    def upper(self) -> np.ndarray:
        return np.array([self.links[i].limits[1] for i in self.joint_links], dtype=float)

    @property
    def joint_names(self) -> list:
        return [self.links[i].name for i in self.joint_links]

    def link_index(self, name: str) -> int:
        for i, link in enumerate(self.links):
            if link.name == name:
                return i
        raise KeyError(name)

    @cached_property
    def arrays(self) -> dict:
        """Flat arrays for the compiled kernels."""
        L = self.n_links
        qidx = np.full(L, -1, dtype=np.int64)
        for j, i in enumerate(self.joint_links):
            qidx[i] = j
        return {
            "parent": np.array([-1 if l.parent is None else l.parent for l in self.links], dtype=np.int64),
            "qidx": qidx,
            "axis": np.array([l.axis for l in self.links], dtype=float).reshape(L, 3),
            "orig_R": np.array([l.origin.rotation for l in self.links], dtype=float).reshape(L, 3, 3),
            "orig_t": np.array([l.origin.position for l in self.links], dtype=float).reshape(L, 3),
            "lower": self.lower.copy(),
            "upper": self.upper.copy(),
        }

    @cached_property
    def geometric_parent(self) -> tuple:
        """Nearest ancestor carrying collision geometry, per link."""
        out = []
        for link in self.links:
            p = link.parent
            while p is not None and not self.links[p].primitives:
                p = self.links[p].parent
            out.append(p)
        return tuple(out)

    @cached_property
    def collision_pairs(self) -> tuple:
        """Non-adjacent pairs of links that both carry geometry."""
        geo = [i for i, l in enumerate(self.links) if l.primitives]
        gp = self.geometric_parent
        pairs = []
        for ia, a in enumerate(geo):
            for b in geo[ia + 1 :]:
                if gp[a] == b or gp[b] == a:
                    continue
                pairs.append((a, b))
        return tuple(pairs)

    @cached_property
    def primitive_arrays(self) -> dict:
        """Hand primitives and non-adjacent primitive pairs for the kernels."""
        link, kind, a, b, R, r = [], [], [], [], [], []
        owner = {}
        for li, l in enumerate(self.links):
            for prim in l.primitives:
                owner.setdefault(li, []).append(len(link))
                link.append(li)
                if prim.kind == "box":
                    kind.append(1)
                    a.append(prim.center)
                    b.append(prim.half_extents)
                    R.append(quat_to_matrix(prim.quaternion))
                    r.append(0.0)
                else:
                    kind.append(0)
                    a.append(prim.start)
                    b.append(prim.end)
                    R.append(np.eye(3))
                    r.append(prim.radius)
        pairs = []
        for la, lb in self.collision_pairs:
            for pa in owner.get(la, []):
                for pb in owner.get(lb, []):
                    # boxes always go second
                    pairs.append((pb, pa) if kind[pa] == 1 else (pa, pb))
        M = len(link)
        return {
            "link": np.array(link, dtype=np.int64),
            "kind": np.array(kind, dtype=np.int64),
            "a": np.array(a, dtype=float).reshape(M, 3),
            "b": np.array(b, dtype=float).reshape(M, 3),
            "R": np.array(R, dtype=float).reshape(M, 3, 3),
            "r": np.array(r, dtype=float),
            "pairs": np.array(pairs, dtype=np.int64).reshape(len(pairs), 2),
        }

    @cached_property
    def ancestors(self) -> tuple:
        """Revolute links on the path from the root to each link (inclusive)."""
        out = []
        for i, link in enumerate(self.links):
            chain = []
            j = i
            while j is not None:
                if self.links[j].joint == "revolute":
                    chain.append(j)
                j = self.links[j].parent
            out.append(tuple(reversed(chain)))
        return tuple(out)

    def sample_counts(self) -> np.ndarray:
        return np.array([l.samples for l in self.links], dtype=int)

    # ----------------------------------------------------------- configs
    def check(self, cfg: HandConfiguration) -> None:
        if cfg.q.shape != (self.n_joints,):
            raise ConfigurationError(f"expected {self.n_joints} joint angles, got {cfg.q.size}")

    def clamp(self, q) -> np.ndarray:
        return np.clip(q, self.lower, self.upper)

    def mid_q(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def configuration(self, position=(0.0, 0.0, 0.0), quaternion=(1.0, 0.0, 0.0, 0.0), q=None) -> HandConfiguration:
        q = np.zeros(self.n_joints) if q is None else q
        return HandConfiguration(RigidTransform(position, quaternion), q)

    def random_configuration(self, rng, base: RigidTransform | None = None) -> HandConfiguration:
        q = rng.uniform(self.lower, self.upper)
        return HandConfiguration(base or RigidTransform(), q)

    # ------------------------------------------------------------ schema
    def to_dict(self) -> dict:
        links = []
        for l in self.links:
            entry = {
                "name": l.name,
                "parent": None if l.parent is None else self.links[l.parent].name,
                "origin": l.origin.to_dict(),
                "joint": {"type": l.joint},
                "collision": [p.to_dict() for p in l.primitives],
                "surface_samples": int(l.samples),
            }
            if l.joint == "revolute":
                entry["joint"]["axis"] = [float(v) for v in l.axis]
                entry["joint"]["limits"] = [float(v) for v in l.limits]
            links.append(entry)
        return {
            "name": self.name,
            "links": links,
            "keypoints": [
                {"name": k.name, "link": self.links[k.link].name, "offset": [float(v) for v in k.offset]}
                for k in self.keypoints
            ],
            "palm": {"link": self.links[self.palm_link].name, "normal": [float(v) for v in self.palm_normal]},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "HandModel":
        try:
            names = [l["name"] for l in data["links"]]
            if len(set(names)) != len(names):
                raise ModelError("link names must be unique")
            index = {n: i for i, n in enumerate(names)}
            links = []
            for l in data["links"]:
                joint = l.get("joint", {"type": "fixed"})
                parent = l.get("parent")
                if parent is not None and parent not in index:
                    raise ModelError(f"unknown parent {parent!r}")
                links.append(
                    Link(
                        name=l["name"],
                        parent=None if parent is None else index[parent],
                        joint=joint.get("type", "fixed"),
                        axis=np.asarray(joint.get("axis", [0.0, 0.0, 1.0]), dtype=float),
                        origin=RigidTransform.from_dict(l.get("origin", {})),
                        limits=tuple(float(v) for v in joint.get("limits", [0.0, 0.0])),
                        primitives=tuple(HandPrimitive.from_dict(p) for p in l.get("collision", [])),
                        samples=int(l.get("surface_samples", 0)),
                    )
                )
            keypoints = [
                Keypoint(index[k["link"]], np.asarray(k.get("offset", [0, 0, 0]), dtype=float), k.get("name", ""))
                for k in data.get("keypoints", [])
            ]
            palm = data.get("palm", {})
            palm_link = index[palm["link"]] if "link" in palm else 0
        except KeyError as exc:
            raise ModelError(f"missing field {exc}") from exc
        return cls(links, keypoints, palm_link, palm.get("normal", [0.0, 0.0, -1.0]), data.get("name", "hand"))

    @classmethod
    def load(cls, path) -> "HandModel":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def reference_hand() -> HandModel:
    """The bundled five-finger hand (18 revolute joints, 31 keypoints)."""
    text = resources.files("pregrasp").joinpath("data/reference_hand.json").read_text()
    return HandModel.from_dict(json.loads(text))


# --------------------------------------------------------------------- FK
def link_frames(model: HandModel, cfg: HandConfiguration):
    """World rotations ``(L, 3, 3)`` and origins ``(L, 3)`` of every link."""
    model.check(cfg)
    arr = model.arrays
    L = model.n_links
    Rs = np.empty((L, 3, 3))
    ts = np.empty((L, 3))
    base_R = cfg.base.rotation
    base_t = cfg.base.position
    for i in range(L):
        p = arr["parent"][i]
        if p < 0:
            PR, Pt = base_R, base_t
        else:
            PR, Pt = Rs[p], ts[p]
        R = PR @ arr["orig_R"][i]
        t = PR @ arr["orig_t"][i] + Pt
        j = arr["qidx"][i]
        if j >= 0:
            R = R @ axis_rotation(arr["axis"][i], cfg.q[j])
        Rs[i] = R
        ts[i] = t
    return Rs, ts


def forward_kinematics(model: HandModel, cfg: HandConfiguration) -> list:
    """World pose of every link.

    Raises:
        ConfigurationError: if ``cfg.q`` has the wrong length.
    """
    Rs, ts = link_frames(model, cfg)
    return [RigidTransform(t, matrix_to_quat(R)) for R, t in zip(Rs, ts)]


def local_surface_samples(model: HandModel, seed: int):
    """Link-frame sample points, normals and owning link for a seed."""
    pts, nrm, owner = [], [], []
    for li, link in enumerate(model.links):
        if link.samples == 0:
            continue
        rng = np.random.default_rng([int(seed), li])
        areas = np.array([p.area() for p in link.primitives])
        counts = np.floor(link.samples * areas / areas.sum()).astype(int)
        rest = link.samples - counts.sum()
        order = np.argsort(-(link.samples * areas / areas.sum() - counts), kind="stable")
        counts[order[:rest]] += 1
        for prim, m in zip(link.primitives, counts):
            if m == 0:
                continue
            p, n = prim.sample(int(m), rng)
            pts.append(p)
            nrm.append(n)
            owner.append(np.full(int(m), li, dtype=np.int64))
    return np.concatenate(pts), np.concatenate(nrm), np.concatenate(owner)


_SAMPLE_CACHE: dict = {}


def cached_local_samples(model: HandModel, seed: int):
    key = (id(model), int(seed))
    hit = _SAMPLE_CACHE.get(key)
    if hit is None or hit[0] is not model:
        hit = (model, local_surface_samples(model, seed))
        if len(_SAMPLE_CACHE) > 64:
            _SAMPLE_CACHE.clear()
        _SAMPLE_CACHE[key] = hit
    return hit[1]


def sample_hand_surface(model: HandModel, cfg: HandConfiguration, seed: int = 0) -> HandSurfacePoints:
    """Material surface samples of the hand posed at ``cfg``.

    The local sample set depends only on ``(model, seed)``; calling again
    with another configuration moves the same material points.
    """
    local, lnrm, owner = cached_local_samples(model, seed)
    Rs, ts = link_frames(model, cfg)
    pts = np.einsum("nij,nj->ni", Rs[owner], local) + ts[owner]
    nrm = np.einsum("nij,nj->ni", Rs[owner], lnrm)
    return HandSurfacePoints(pts, nrm, owner.copy(), local.copy(), lnrm.copy())


def reposition(surface: HandSurfacePoints, model: HandModel, cfg: HandConfiguration) -> HandSurfacePoints:
    """Re-evaluate existing material samples under another configuration."""
    Rs, ts = link_frames(model, cfg)
    own = surface.link
    pts = np.einsum("nij,nj->ni", Rs[own], surface.local_points) + ts[own]
    nrm = np.einsum("nij,nj->ni", Rs[own], surface.local_normals)
    return HandSurfacePoints(pts, nrm, own, surface.local_points, surface.local_normals)


def keypoints(model: HandModel, cfg: HandConfiguration) -> np.ndarray:
    """World positions ``(K, 3)`` of the model's keypoints."""
    if not model.keypoints:
        raise ModelError("model defines no keypoints")
    Rs, ts = link_frames(model, cfg)
    return np.array([Rs[k.link] @ k.offset + ts[k.link] for k in model.keypoints])


# -------------------------------------------------------------- Jacobians
def point_jacobians(model: HandModel, Rs, ts, base_position, links, points) -> np.ndarray:
    """Jacobians ``(N, 3, 6 + n_q)`` of world points rigidly attached to links."""
    points = np.atleast_2d(points)
    n = len(points)
    J = np.zeros((n, 3, model.n_dof))
    J[:, :, :3] = np.eye(3)
    r = points - base_position
    # d/dw of exp(w) x = w x (x - p)  ->  column block = -skew(x - p)
    J[:, 0, 4], J[:, 0, 5] = r[:, 2], -r[:, 1]
    J[:, 1, 3], J[:, 1, 5] = -r[:, 2], r[:, 0]
    J[:, 2, 3], J[:, 2, 4] = r[:, 1], -r[:, 0]
    arr = model.arrays
    for k in range(n):
        for li in model.ancestors[links[k]]:
            a = Rs[li] @ arr["axis"][li]
            J[k, :, 6 + arr["qidx"][li]] = np.cross(a, points[k] - ts[li])
    return J


def accumulate_gradient(model: HandModel, Rs, ts, base_position, links, points, forces) -> np.ndarray:
    """Pull world-space point forces ``dE/dx`` back to the generalised coordinate.

    Equivalent to ``sum_k J_k^T f_k`` but linear in the number of links:
    forces and moments are summed per link, then over subtrees.
    """
    L = model.n_links
    F = np.zeros((L, 3))
    M = np.zeros((L, 3))
    links = np.asarray(links)
    if len(links):
        np.add.at(F, links, forces)
        np.add.at(M, links, np.cross(points, forces))
    arr = model.arrays
    for i in range(L - 1, 0, -1):
        p = arr["parent"][i]
        F[p] += F[i]
        M[p] += M[i]
    grad = np.zeros(model.n_dof)
    grad[:3] = F[0]
    grad[3:6] = M[0] - np.cross(base_position, F[0])
    for i in model.joint_links:
        a = Rs[i] @ arr["axis"][i]
        grad[6 + arr["qidx"][i]] = a @ (M[i] - np.cross(ts[i], F[i]))
    return grad


def keypoint_jacobian(model: HandModel, cfg: HandConfiguration) -> np.ndarray:
    Rs, ts = link_frames(model, cfg)
    pts = np.array([Rs[k.link] @ k.offset + ts[k.link] for k in model.keypoints])
    links = np.array([k.link for k in model.keypoints])
    return point_jacobians(model, Rs, ts, cfg.base.position, links, pts)


# --------------------------------------------------------------------- IK
def kabsch(source, target):
    """Rotation and translation minimising ``|R source + t - target|``."""
    cs, ct = source.mean(axis=0), target.mean(axis=0)
    H = (source - cs).T @ (target - ct)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, ct - R @ cs


def ik_initial_guess(model: HandModel, targets) -> HandConfiguration:
    """Mid-range joints with the base fitted to the palm-link keypoints."""
    targets = np.asarray(targets, dtype=float)
    idx = [i for i, k in enumerate(model.keypoints) if k.link == model.palm_link]
    cfg0 = model.configuration(q=model.mid_q())
    if len(idx) < 3:
        return HandConfiguration(RigidTransform(targets.mean(axis=0)), cfg0.q)
    src = keypoints(model, cfg0)[idx]
    R, t = kabsch(src, targets[idx])
    return HandConfiguration(RigidTransform(t, matrix_to_quat(R)), cfg0.q)


@dataclass
class IKResult:
    cfg: HandConfiguration
    residual: float
    iterations: int


def solve_ik(
    model: HandModel,
    targets,
    initial: HandConfiguration | None = None,
    max_iters: int = 200,
    tol: float = 1e-8,
    damping: float = 1e-3,
    fixed_base: bool = False,
) -> IKResult:
    """Fit joint angles (and base pose) to target keypoints.

    Damped least squares with adaptive damping; joints are clamped to
    their limits after every step. Unreachable targets are not an error:
    the best clamped configuration is returned with its RMS residual (m).

    Raises:
        ValueError: on non-finite targets or a keypoint count mismatch.
    """
    targets = np.asarray(targets, dtype=float)
    if targets.shape != (model.n_keypoints, 3):
        raise ValueError(f"expected {model.n_keypoints} target keypoints")
    if not np.all(np.isfinite(targets)):
        raise ValueError("IK targets must be finite")
    cfg = ik_initial_guess(model, targets) if initial is None else initial
    model.check(cfg)
    cfg = cfg.with_q(model.clamp(cfg.q))
    free = np.arange(model.n_dof) if not fixed_base else np.arange(6, model.n_dof)

    def cost(c):
        res = (keypoints(model, c) - targets).ravel()
        return res, float(res @ res)

    res, err = cost(cfg)
    lam = damping
    it = 0
    for it in range(1, max_iters + 1):
        if err < 1e-30:
            break
        J = keypoint_jacobian(model, cfg).reshape(-1, model.n_dof)[:, free]
        JtJ = J.T @ J
        g = J.T @ res
        improved = False
        for _ in range(30):
            A = JtJ + lam * np.diag(np.diag(JtJ) + 1e-9)
            step = -np.linalg.solve(A, g)
            delta = np.zeros(model.n_dof)
            delta[free] = step
            trial = cfg.step(delta)
            trial = trial.with_q(model.clamp(trial.q))
            res_t, err_t = cost(trial)
            if err_t < err:
                improved = True
                break
            lam *= 4.0
        if not improved:
            break
        moved = np.linalg.norm(step)
        cfg, res, err = trial, res_t, err_t
        lam = max(lam / 3.0, 1e-12)
        if moved < tol:
            break
    rms = float(np.sqrt(err / model.n_keypoints))
    return IKResult(cfg, rms, it)
