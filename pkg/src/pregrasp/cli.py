"""Command-line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 input/output
error, 4 numerical failure. Failures also print one JSON line
``{"error": <category>, "message": ...}`` on stderr. Set ``PREGRASP_LOG``
(e.g. ``INFO``) for log output.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dataset import generate_dataset, load_inventory, read_records, verify_dataset, write_records
from .export import export_grasp
from .geometry import Scene
from .kinematics import HandModel, reference_hand
from .metrics import diversity, quality_report
from .records import GraspRecord, RecordError
from .refine import plan_reach, refine
from .sampler import synthesize

log = logging.getLogger("pregrasp")

EXIT_USAGE = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


class UsageError(Exception):
    pass


# ------------------------------------------------------------ helpers
def _dump_json(path, data) -> None:
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _hand(args) -> HandModel:
    return HandModel.load(args.hand) if getattr(args, "hand", None) else reference_hand()


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    seed = args.seed if args.seed is not None else cfg.seed
    if seed is None:
        seed = secrets.randbelow(2**31)
        print(f"seed: {seed}", file=sys.stderr)
    return cfg.with_seed(seed)


def _scene_for(record: GraspRecord, args) -> Scene:
    if getattr(args, "scene", None):
        return Scene.load(args.scene)
    if isinstance(record.scene, dict):
        return Scene.from_dict(record.scene)
    return Scene.load(record.scene)


def _pick(records, index: int) -> GraspRecord:
    if not -len(records) <= index < len(records):
        raise UsageError(f"record index {index} out of range ({len(records)} records)")
    return records[index]


# ------------------------------------------------------------ commands
def cmd_synth(args) -> int:
    cfg = _config(args)
    mala = cfg.mala
    if args.chains is not None:
        mala = replace(mala, chains=args.chains)
    if args.iters is not None:
        mala = replace(mala, iterations=args.iters)
    scene = Scene.load(args.scene)
    model = _hand(args)
    records = synthesize(scene, model, cfg.energy, mala, cfg.filter, jobs=args.jobs, friction=cfg.friction)
    write_records(args.out, records)
    print(f"{len(records)} of {mala.chains} chains passed", file=sys.stderr)
    return 0


def cmd_refine(args) -> int:
    cfg = _config(args)
    model = _hand(args)
    out = []
    for rec in read_records(args.input):
        scene = _scene_for(rec, args)
        res = refine(rec.cfg, scene, model, cfg.refine, contacts=rec.contacts, weights=cfg.energy)
        quality = quality_report(res.cfg, scene, model, cfg.friction, cfg.filter, cfg.energy.n_contacts)
        out.append(rec.replace(cfg=res.cfg, energy=res.after, quality=quality, provenance=dict(rec.provenance, stage="refined")))
    write_records(args.out, out)
    return 0


def cmd_plan(args) -> int:
    cfg = _config(args)
    model = _hand(args)
    rec = _pick(read_records(args.grasp), args.index)
    scene = _scene_for(rec, args)
    traj = plan_reach(None, rec.cfg, scene, model, cfg.plan)
    _dump_json(args.out, traj.to_dict())
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    model = _hand(args)
    t0 = time.perf_counter()
    records = read_records(args.input)
    per = []
    for rec in records:
        scene = _scene_for(rec, args)
        per.append(quality_report(rec.cfg, scene, model, cfg.friction, cfg.filter, cfg.energy.n_contacts).to_dict())
    n = len(per)
    report = {
        "records": n,
        "per_grasp": per,
        "mean_q1_min": sum(p["q1_min"] for p in per) / n if n else 0.0,
        "mean_penetration_mm": sum(p["penetration_mm"] for p in per) / n if n else 0.0,
        "feasible": sum(p["feasible"] for p in per),
        "diversity_deg": diversity([r.cfg for r in records]) if n >= 2 else None,
    }
    if args.timing:
        report["time_s"] = time.perf_counter() - t0
    _dump_json(args.report, report)
    return 0


def cmd_dataset_gen(args) -> int:
    cfg = _config(args)
    manifest = generate_dataset(
        load_inventory(args.inventory), args.out, cfg, seed=cfg.seed, scenes_per_combination=args.scenes,
        max_objects=args.max_objects, model=_hand(args), jobs=args.jobs,
    )  # fmt: skip
    print(json.dumps(manifest.counts, sort_keys=True))
    return 0


def cmd_dataset_verify(args) -> int:
    ok, problems = verify_dataset(args.dir)
    for p in problems:
        print(p, file=sys.stderr)
    print("ok" if ok else "mismatch")
    return 0 if ok else 1


def cmd_export(args) -> int:
    model = _hand(args)
    rec = _pick(read_records(args.grasp), args.index)
    scene = _scene_for(rec, args)
    for p in export_grasp(args.out, rec.cfg, scene, model, args.format):
        print(p)
    return 0


# ------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pregrasp", description="Multi-object pre-grasp synthesis tools.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--hand", help="hand model JSON (default: bundled reference hand)")
        sp.add_argument("--seed", type=int, help="master seed; a random one is printed if omitted")
        if config:
            sp.add_argument("--config", help="TOML or JSON run configuration")

    s = sub.add_parser("synth", help="sample grasps for a scene")
    common(s)
    s.add_argument("--scene", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--chains", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("refine", help="refine grasps in a record file")
    common(s)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--scene")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("plan-reach", help="plan a reach trajectory to a grasp")
    common(s)
    s.add_argument("--grasp", required=True, help="record file")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--scene")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("eval", help="quality metrics for a record file")
    common(s)
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--scene")
    s.add_argument("--report", required=True)
    s.add_argument("--timing", action="store_true", help="include wall-clock time (output no longer reproducible)")
    s.set_defaults(func=cmd_eval)

    d = sub.add_parser("dataset", help="dataset generation and checking").add_subparsers(dest="action", required=True)
    s = d.add_parser("gen")
    common(s)
    s.add_argument("--inventory", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int, default=1, help="placements per combination")
    s.add_argument("--max-objects", type=int, default=2)
    s.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    s.set_defaults(func=cmd_dataset_gen)
    s = d.add_parser("verify")
    s.add_argument("--dir", required=True)
    s.set_defaults(func=cmd_dataset_verify)

    s = sub.add_parser("export", help="write meshes or point clouds of a grasp")
    common(s, config=False)
    s.add_argument("--grasp", required=True, help="record file")
    s.add_argument("--index", type=int, default=0)
    s.add_argument("--scene")
    s.add_argument("--format", choices=("obj", "xyzn"), default="obj")
    s.add_argument("--out", required=True, help="output path prefix")
    s.set_defaults(func=cmd_export)
    return p


def _fail(category: str, code: int, exc) -> int:
    print(json.dumps({"error": category, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    level = os.environ.get("PREGRASP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail("usage", EXIT_USAGE, exc)
    except FloatingPointError as exc:
        return _fail("numerical", EXIT_NUMERIC, exc)
    except (OSError, RecordError, json.JSONDecodeError, KeyError) as exc:
        return _fail("io", EXIT_IO, exc)


if __name__ == "__main__":
    sys.exit(main())
