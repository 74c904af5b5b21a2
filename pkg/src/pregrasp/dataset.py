"""Dataset generation, palm alignment and JSONL record files.

A dataset directory holds ``records.jsonl`` (one grasp per line, in
palm-aligned canonical form) and ``manifest.json`` with per-category
counts, the object combinations and digests of the configuration and the
records file. Generation tasks write private staging files that a single
finaliser concatenates in task order, so the output does not depend on the
number of worker processes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .energy import NumericalError
from .geometry import ObjectShape, PlacementError, Scene, place_objects
from .kinematics import HandConfiguration, HandModel, reference_hand
from .metrics import quality_report
from .records import GraspRecord, RecordError
from .refine import refine
from .sampler import synthesize
from .transforms import RigidTransform, z_rotation

log = logging.getLogger(__name__)

RECORDS_FILE = "records.jsonl"
MANIFEST_FILE = "manifest.json"
STAGING_DIR = "staging"
VERTICAL_TOL = 1e-6


class AlignmentError(ValueError):
    """The palm direction has no usable tabletop projection."""


class DatasetError(RuntimeError):
    """Dataset generation produced nothing or a dataset is inconsistent."""


# ------------------------------------------------------------ alignment
def palm_direction(cfg: HandConfiguration, model: HandModel) -> np.ndarray:
    """World direction of the palm's outward normal."""
    return cfg.rotation @ np.asarray(model.palm_normal, dtype=float)


def alignment_angle(cfg: HandConfiguration, model: HandModel) -> float:
    d = palm_direction(cfg, model)
    if np.hypot(d[0], d[1]) < VERTICAL_TOL:
        raise AlignmentError("palm axis is vertical; alignment is undefined")
    return float(-np.arctan2(d[1], d[0]))


def rotate_about_z(cfg: HandConfiguration, scene: Scene, angle: float):
    if angle == 0.0:
        return cfg, scene
    T = RigidTransform.from_matrix(z_rotation(angle))
    return cfg.transformed(T), scene.transformed(T)


def align_palm(cfg: HandConfiguration, scene: Scene, model: HandModel | None = None):
    """Rotate hand and objects about world ``z`` so the palm projects onto ``+x``.

    Returns:
        ``(aligned_cfg, aligned_scene, angle)``; undo with
        :func:`unalign_palm` and the same angle.

    Raises:
        AlignmentError: if the palm normal is within 1e-6 of vertical.
    """
    model = model or reference_hand()
    angle = alignment_angle(cfg, model)
    cfg2, scene2 = rotate_about_z(cfg, scene, angle)
    return cfg2, scene2, angle


def unalign_palm(cfg: HandConfiguration, scene: Scene, angle: float):
    """Inverse of :func:`align_palm`."""
    return rotate_about_z(cfg, scene, -angle)


# ------------------------------------------------------------ records
def write_records(path, records) -> None:
    """Write records as JSONL; nothing is written if any record is invalid."""
    lines = []
    for i, rec in enumerate(records):
        try:
            lines.append(json.dumps(rec.to_dict(), sort_keys=True, allow_nan=False))
        except (RecordError, ValueError) as exc:
            raise RecordError(f"record {i}: {exc}") from exc
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("".join(line + "\n" for line in lines))
    os.replace(tmp, path)


def read_records(path) -> list:
    """Parse a JSONL record file; errors name the offending line."""
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(GraspRecord.from_dict(json.loads(line)))
            except (ValueError, TypeError, KeyError) as exc:
                raise RecordError(f"{path}:{lineno}: {exc}") from exc
    return out


# ------------------------------------------------------------ inventory
def load_inventory(path) -> list:
    """Object templates from JSON: a list, or ``{"objects": [...]}``."""
    data = json.loads(Path(path).read_text())
    items = data["objects"] if isinstance(data, dict) else data
    shapes = [ObjectShape.from_dict(item) for item in items]
    if not shapes:
        raise ValueError("inventory is empty")
    return shapes


def object_combinations(n_objects: int, max_objects: int = 2) -> list:
    """Index tuples of every 1..max_objects subset, smallest subsets first."""
    return [c for k in range(1, max_objects + 1) for c in itertools.combinations(range(n_objects), k)]


def _shape_label(shape: ObjectShape, i: int) -> str:
    return shape.name or f"{shape.kind}{i}"


@dataclass(frozen=True)
class DatasetManifest:
    """Counts per object-count category plus provenance digests."""

    counts: dict
    combinations: list
    config_digest: str
    records_digest: str
    seed: int
    version: str = __version__
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def to_dict(self) -> dict:
        return {
            "counts": {str(k): int(v) for k, v in sorted(self.counts.items(), key=lambda kv: int(kv[0]))},
            "combinations": [list(c) for c in self.combinations],
            "config_digest": self.config_digest,
            "records_digest": self.records_digest,
            "seed": int(self.seed),
            "version": self.version,
            "extra": dict(self.extra),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetManifest":
        return cls(
            {str(k): int(v) for k, v in data["counts"].items()},
            [list(c) for c in data["combinations"]],
            data["config_digest"],
            data["records_digest"],
            int(data["seed"]),
            data.get("version", __version__),
            dict(data.get("extra", {})),
        )

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _count(records) -> dict:
    counts = {}
    for rec in records:
        scene = rec.scene if isinstance(rec.scene, dict) else {}
        k = str(len(scene.get("objects", [])))
        counts[k] = counts.get(k, 0) + 1
    return counts


# ------------------------------------------------------------ generation
@dataclass(frozen=True)
class _Task:
    index: int
    combo: tuple
    scene_index: int
    seed: int


def _task_seed(seed: int, combo_index: int, scene_index: int) -> int:
    return int(np.random.SeedSequence([seed, combo_index, scene_index]).generate_state(1)[0])


def _run_task(args) -> tuple:
    task, shapes, config, model, region, spacing, staging, do_refine = args
    path = Path(staging) / f"{task.index:05d}.jsonl"
    picked = [shapes[i] for i in task.combo]
    try:
        scene = place_objects(picked, region, spacing[0], spacing[1], seed=task.seed)
        params = replace(config.mala, seed=task.seed)
        records = synthesize(scene, model, config.energy, params, config.filter, friction=config.friction)
        out = []
        for rec in records:
            cfg, energy, stage = rec.cfg, rec.energy, "synth"
            if do_refine:
                res = refine(cfg, scene, model, config.refine, contacts=rec.contacts, weights=config.energy)
                cfg, energy, stage = res.cfg, res.after, "refined"
            quality = quality_report(cfg, scene, model, config.friction, config.filter, config.energy.n_contacts)
            try:
                cfg_a, scene_a, angle = align_palm(cfg, scene, model)
            except AlignmentError:
                log.info("task %d chain %s: vertical palm, stored unaligned", task.index, rec.provenance["chain"])
                cfg_a, scene_a, angle = cfg, scene, 0.0
            prov = dict(rec.provenance, stage=stage, align_angle=angle, combination=list(task.combo), scene_seed=task.seed)
            out.append(GraspRecord(scene_a.to_dict(), cfg_a, rec.contacts, energy, quality, prov))
    except (PlacementError, NumericalError, ValueError) as exc:
        log.warning("task %d (%s) skipped: %s", task.index, task.combo, exc)
        out = []
    write_records(path, out)
    return task.index, len(out)


def generate_dataset(
    inventory, out_dir, config: RunConfig = RunConfig(), *, seed: int = 0, scenes_per_combination: int = 1,
    max_objects: int = 2, combinations=None, model: HandModel | None = None, jobs: int = 1,
    region=((-0.1, 0.1), (-0.1, 0.1)), spacing=(0.0, np.inf), do_refine: bool = True,
) -> DatasetManifest:  # fmt: skip
    """Synthesize, refine, evaluate and store grasps for object combinations.

    Args:
        inventory: Object templates (list of :class:`ObjectShape`).
        out_dir: Output directory; created if missing.
        config: Run configuration; its MALA seed is replaced per scene.
        seed: Master seed; the output is a pure function of the inputs.
        scenes_per_combination: Random placements per combination.
        max_objects: Largest combination size when ``combinations`` is None.
        combinations: Explicit index tuples into ``inventory``.
        jobs: Worker processes over scene tasks.

    Raises:
        DatasetError: if no record was produced at all.
    """
    shapes = list(inventory)
    if not shapes:
        raise ValueError("inventory is empty")
    model = model or reference_hand()
    combos = [tuple(c) for c in combinations] if combinations is not None else object_combinations(len(shapes), max_objects)
    out = Path(out_dir)
    staging = out / STAGING_DIR
    staging.mkdir(parents=True, exist_ok=True)
    tasks = []
    for ci, combo in enumerate(combos):
        for s in range(scenes_per_combination):
            tasks.append(_Task(len(tasks), combo, s, _task_seed(seed, ci, s)))
    args = [(t, shapes, config, model, region, spacing, str(staging), do_refine) for t in tasks]
    if jobs <= 1 or len(tasks) <= 1:
        for a in args:
            _run_task(a)
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(_run_task, args))

    records = []
    for t in tasks:
        records.extend(read_records(staging / f"{t.index:05d}.jsonl"))
    if not records:
        raise DatasetError("no grasp survived in any scene")
    rec_path = out / RECORDS_FILE
    write_records(rec_path, records)
    for t in tasks:
        (staging / f"{t.index:05d}.jsonl").unlink()
    staging.rmdir()
    manifest = DatasetManifest(
        _count(records),
        [[_shape_label(shapes[i], i) for i in c] for c in combos],
        config.digest(),
        _file_digest(rec_path),
        seed,
        extra={"scenes_per_combination": scenes_per_combination, "tasks": len(tasks)},
    )
    (out / MANIFEST_FILE).write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest


def verify_dataset(out_dir) -> tuple:
    """Recount the records and compare with the stored manifest.

    Returns:
        ``(ok, problems)`` where ``problems`` lists every mismatch.
    """
    out = Path(out_dir)
    manifest = DatasetManifest.from_dict(json.loads((out / MANIFEST_FILE).read_text()))
    rec_path = out / RECORDS_FILE
    records = read_records(rec_path)
    problems = []
    counts = _count(records)
    if counts != manifest.counts:
        problems.append(f"counts {counts} != manifest {manifest.counts}")
    digest = _file_digest(rec_path)
    if digest != manifest.records_digest:
        problems.append("records digest mismatch")
    return not problems, problems
