"""Mesh and point-cloud export for offline viewing.

Meshes are closed triangle soups per primitive (shared vertices, no
boundary edges) written as Wavefront OBJ with one group per hand link or
object. Point clouds are plain ``x y z nx ny nz`` text.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .geometry import Scene
from .kinematics import HandConfiguration, HandModel, link_frames, sample_hand_surface

RINGS = 12
SEGMENTS = 24


def _rings_mesh(profile, segments: int = SEGMENTS):
    """Closed surface of revolution about ``z``.

    ``profile`` is a list of ``(radius, z)`` from the bottom pole to the top
    pole; the first and last entries must have radius 0.
    """
    verts = [np.array([0.0, 0.0, profile[0][1]])]
    ang = 2 * np.pi * np.arange(segments) / segments
    for r, z in profile[1:-1]:
        verts.extend(np.stack([r * np.cos(ang), r * np.sin(ang), np.full(segments, z)], axis=1))
    verts.append(np.array([0.0, 0.0, profile[-1][1]]))
    V = np.vstack(verts)
    rings = len(profile) - 2
    top = len(V) - 1
    F = []
    for s in range(segments):
        t = (s + 1) % segments
        F.append((0, 1 + t, 1 + s))
        for k in range(rings - 1):
            a, b = 1 + k * segments, 1 + (k + 1) * segments
            F.append((a + s, a + t, b + t))
            F.append((a + s, b + t, b + s))
        last = 1 + (rings - 1) * segments
        F.append((last + s, last + t, top))
    return V, np.array(F, dtype=np.int64)


def sphere_mesh(radius: float, rings: int = RINGS, segments: int = SEGMENTS):
    th = np.linspace(np.pi, 0.0, rings + 1)
    profile = [(radius * np.sin(t), radius * np.cos(t)) for t in th]
    profile[0] = (0.0, -radius)
    profile[-1] = (0.0, radius)
    return _rings_mesh(profile, segments)


def capsule_mesh(radius: float, half_length: float, rings: int = RINGS, segments: int = SEGMENTS):
    half = rings // 2
    lower = [(radius * np.sin(t), -half_length + radius * np.cos(t)) for t in np.linspace(np.pi, np.pi / 2, half + 1)]
    upper = [(radius * np.sin(t), half_length + radius * np.cos(t)) for t in np.linspace(np.pi / 2, 0.0, half + 1)]
    profile = lower + upper
    profile[0] = (0.0, -half_length - radius)
    profile[-1] = (0.0, half_length + radius)
    return _rings_mesh(profile, segments)


def cylinder_mesh(radius: float, half_height: float, segments: int = SEGMENTS):
    return _rings_mesh([(0.0, -half_height), (radius, -half_height), (radius, half_height), (0.0, half_height)], segments)


def box_mesh(half_extents):
    hx, hy, hz = half_extents
    V = np.array([[sx * hx, sy * hy, sz * hz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
    F = np.array(
        [
            (0, 1, 3), (0, 3, 2), (4, 6, 7), (4, 7, 5),
            (0, 4, 5), (0, 5, 1), (2, 3, 7), (2, 7, 6),
            (0, 2, 6), (0, 6, 4), (1, 5, 7), (1, 7, 3),
        ],
        dtype=np.int64,
    )  # fmt: skip
    return V, F


def primitive_mesh(kind: str, dims):
    """Local-frame mesh of a primitive in the geometry-module convention."""
    dims = np.asarray(dims, dtype=float)
    if kind == "sphere":
        return sphere_mesh(dims[0])
    if kind == "capsule":
        return capsule_mesh(dims[0], dims[1])
    if kind == "cylinder":
        return cylinder_mesh(dims[0], dims[1])
    if kind == "box":
        return box_mesh(dims)
    raise ValueError(f"unknown primitive kind {kind!r}")


def is_closed(F) -> bool:
    """Every undirected edge is shared by exactly two faces, in opposite directions."""
    edges = {}
    for a, b, c in np.asarray(F):
        for u, v in ((a, b), (b, c), (c, a)):
            edges[(int(u), int(v))] = edges.get((int(u), int(v)), 0) + 1
    return all(n == 1 and edges.get((v, u)) == 1 for (u, v), n in edges.items())


def hand_meshes(model: HandModel, cfg: HandConfiguration) -> list:
    """``(name, V, F)`` per hand primitive, posed by forward kinematics."""
    Rs, ts = link_frames(model, cfg)
    out = []
    for li, link in enumerate(model.links):
        for k, prim in enumerate(link.primitives):
            R, c, (kind, dims) = prim.frame()
            V, F = primitive_mesh(kind, dims)
            local = V @ R.T + c
            out.append((f"{link.name}_{k}", local @ Rs[li].T + ts[li], F))
    return out


def object_meshes(scene: Scene) -> list:
    out = []
    for i, obj in enumerate(scene.objects):
        V, F = primitive_mesh(obj.kind, obj.scaled_dims)
        out.append((obj.name or f"object{i}", obj.pose.apply(V), F))
    return out


def write_obj(path, meshes) -> None:
    """Write ``(name, V, F)`` meshes into one OBJ file."""
    lines = []
    offset = 1
    for name, V, F in meshes:
        lines.append(f"g {name}")
        lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in V.tolist())
        lines.extend(f"f {a + offset} {b + offset} {c + offset}" for a, b, c in F.tolist())
        offset += len(V)
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> list:
    """Parse files written by :func:`write_obj` back into meshes."""
    meshes, name, V, F, base = [], None, [], [], 1
    for line in Path(path).read_text().splitlines():
        tag, *rest = line.split()
        if tag == "g":
            if name is not None:
                meshes.append((name, np.array(V), np.array(F, dtype=np.int64) - base))
                base += len(V)
            name, V, F = rest[0], [], []
        elif tag == "v":
            V.append([float(v) for v in rest])
        elif tag == "f":
            F.append([int(v) for v in rest])
    if name is not None:
        meshes.append((name, np.array(V), np.array(F, dtype=np.int64) - base))
    return meshes


def write_xyzn(path, points, normals) -> None:
    data = np.hstack([np.asarray(points, dtype=float), np.asarray(normals, dtype=float)])
    np.savetxt(path, data, fmt="%.17g")


def export_grasp(out_prefix, cfg: HandConfiguration, scene: Scene, model: HandModel, fmt: str = "obj", seed: int = 0) -> list:
    """Write hand and object geometry for one grasp; returns the paths written."""
    out_prefix = Path(out_prefix)
    if fmt == "obj":
        path = out_prefix.with_suffix(".obj")
        write_obj(path, hand_meshes(model, cfg) + object_meshes(scene))
        return [path]
    if fmt == "xyzn":
        surf = sample_hand_surface(model, cfg, seed)
        hand_path = out_prefix.with_name(out_prefix.name + "_hand.xyzn")
        write_xyzn(hand_path, surf.points, surf.normals)
        paths = [hand_path]
        for i, obj in enumerate(scene.objects):
            pts, nrm = obj.surface_cloud(world=True)
            p = out_prefix.with_name(f"{out_prefix.name}_{obj.name or f'object{i}'}.xyzn")
            write_xyzn(p, pts, nrm)
            paths.append(p)
        return paths
    raise ValueError(f"unknown export format {fmt!r}")
