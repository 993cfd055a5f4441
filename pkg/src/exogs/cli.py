"""``exogs`` command line: ingest, poseproc, replay, augment, export, mask, validate.

Every subcommand prints a JSON report on stdout and exits 0 only when it
finished without errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .augment import PlanError
from .demo import DemoError, build_demonstration, load_demo
from .gscene import AssetLibrary, SceneError
from .kinematics import KinematicsError
from .pipeline import (
    ConfigError,
    PipelineConfig,
    cmd_augment,
    cmd_replay,
    cmd_validate,
    load_any_demo,
    relabel_dataset,
)
from .poseproc import (
    NoGraspDetected, UnknownAsset, detect_grasp_window, fix_object, perturb_poses, substitute_object,
)
from .semantics import SemanticsError

log = logging.getLogger("exogs")

EXPECTED_ERRORS = (
    ConfigError, DemoError, KinematicsError, SceneError, SemanticsError, PlanError,
    NoGraspDetected, UnknownAsset, KeyError, ValueError, OSError,
)


def _report(doc: dict) -> None:
    json.dump(doc, sys.stdout, indent=1, sort_keys=True)
    sys.stdout.write("\n")


def _parse_substitute(text: str) -> tuple[str, str]:
    oid, sep, aid = text.partition("=")
    if not sep or not oid or not aid:
        raise argparse.ArgumentTypeError(f"expected <object_id>=<asset_id>, got {text!r}")
    return oid, aid


def _parse_perturb(text: str) -> tuple[float, float, float, float]:
    """``max_t,max_r[,scale_lo,scale_hi]`` in meters and radians."""
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if len(vals) == 2:
        vals += [1.0, 1.0]
    if len(vals) != 4:
        raise argparse.ArgumentTypeError("expected max_t,max_r[,scale_lo,scale_hi]")
    return tuple(vals)


def _config(args, manifests) -> PipelineConfig:
    return PipelineConfig(
        out=args.out,
        assets=args.assets,
        manifests=manifests,
        robot=args.robot,
        plan=getattr(args, "plan", None),
        seed=args.seed,
        workers=args.workers,
        materialize_masks=args.materialize_masks,
    )


def _episodes_report(entries: list[dict], out: Path) -> dict:
    return {
        "ok": True,
        "out": str(out),
        "episodes": len(entries),
        "episode_ids": [e["episode_id"] for e in sorted(entries, key=lambda e: e["episode_id"])],
    }


def run_ingest(args) -> int:
    demo = build_demonstration(load_demo(args.manifest, args.robot))
    demo.save(args.out)
    _report({"ok": True, "demo_id": demo.demo_id, "steps": demo.H, "objects": sorted(demo.object_tracks),
             "out": str(args.out)})
    return 0


def run_poseproc(args) -> int:
    demo = load_any_demo(args.demo, args.robot)
    known = None
    if args.assets is not None:
        known = set(AssetLibrary.load(args.assets).assets)
    done = {}
    for oid in args.fix:
        demo = fix_object(demo, oid, detect_grasp_window(demo, object_id=oid))
        w = demo.grasps[oid]
        done.setdefault("fixed", {})[oid] = [w.start_step, w.end_step]
    for oid, aid in args.substitute:
        demo = substitute_object(demo, oid, aid, known_assets=known)
        done.setdefault("substituted", {})[oid] = aid
    if args.perturb is not None:
        mt, mr, lo, hi = args.perturb
        for i, oid in enumerate(sorted(demo.object_tracks)):
            demo = perturb_poses(demo, oid, (args.seed or 0, i), mt, mr, (lo, hi))
        done["perturbed"] = sorted(demo.object_tracks)
    demo.save(args.out)
    _report(dict(ok=True, demo_id=demo.demo_id, out=str(args.out), **done))
    return 0


def run_replay(args) -> int:
    cfg = _config(args, args.manifest + args.demo)
    _report(_episodes_report(cmd_replay(cfg), cfg.out))
    return 0


def run_augment(args) -> int:
    cfg = _config(args, args.manifest + args.demo)
    _report(_episodes_report(cmd_augment(cfg), cfg.out))
    return 0


def run_export(args) -> int:
    entries = relabel_dataset(args.out, patch_size=args.patch_size,
                              materialize=True if args.materialize_masks else None)
    _report(_episodes_report(entries, Path(args.out)))
    return 0


def run_mask(args) -> int:
    entries = relabel_dataset(args.out, materialize=bool(args.materialize))
    _report(dict(_episodes_report(entries, Path(args.out)), materialized=bool(args.materialize)))
    return 0


def run_validate(args) -> int:
    rep = cmd_validate(args.out)
    if args.human:
        print(rep.format(), file=sys.stderr)
    _report(rep.to_dict())
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    common.add_argument("--seed", type=int, default=None, help="unsigned 64-bit master seed")
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--robot", type=Path, default=None, help="URDF robot description")

    p = argparse.ArgumentParser(prog="exogs", description="Real-to-sim demonstration data engine.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="raw logs → demonstration file")
    s.add_argument("--manifest", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.set_defaults(func=run_ingest)

    s = sub.add_parser("poseproc", parents=[common], help="fix, substitute or perturb object poses")
    s.add_argument("--demo", type=Path, required=True)
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--assets", type=Path, default=None, help="asset manifest, to check substitutions")
    s.add_argument("--fix", action="append", default=[], metavar="OBJECT_ID")
    s.add_argument("--substitute", action="append", default=[], type=_parse_substitute,
                   metavar="OBJECT_ID=ASSET_ID")
    s.add_argument("--perturb", type=_parse_perturb, default=None, metavar="MAX_T,MAX_R[,LO,HI]")
    s.set_defaults(func=run_poseproc)

    for name, func, need_plan in (("replay", run_replay, False), ("augment", run_augment, True)):
        s = sub.add_parser(name, parents=[common], help=f"{name} demonstrations into a dataset tree")
        s.add_argument("--manifest", type=Path, action="append", default=[], help="raw-log manifest")
        s.add_argument("--demo", type=Path, action="append", default=[], help="demonstration file")
        s.add_argument("--assets", type=Path, required=True)
        s.add_argument("--out", type=Path, required=True)
        s.add_argument("--materialize-masks", action="store_true")
        if need_plan:
            s.add_argument("--plan", type=Path, required=True)
        s.set_defaults(func=func)

    s = sub.add_parser("export", parents=[common], help="recompute patch labels of a dataset tree")
    s.add_argument("--out", type=Path, required=True, help="dataset root")
    s.add_argument("--patch-size", type=int, default=None)
    s.add_argument("--materialize-masks", action="store_true")
    s.set_defaults(func=run_export)

    s = sub.add_parser("mask", parents=[common], help="write or drop dense attention masks")
    s.add_argument("--out", type=Path, required=True, help="dataset root")
    s.add_argument("--materialize", action="store_true")
    s.set_defaults(func=run_mask)

    s = sub.add_parser("validate", parents=[common], help="check a dataset tree")
    s.add_argument("--out", type=Path, required=True, help="dataset root")
    s.add_argument("--human", action="store_true", help="also print a readable summary on stderr")
    s.set_defaults(func=run_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        log.error("%s", exc)
        _report({"ok": False, "error": f"{type(exc).__name__}: {exc}"})
        return 2


if __name__ == "__main__":
    sys.exit(main())
