"""Batch driver: ingest → replay/augment → render → export → validate.

Output trees are a pure function of the inputs and the seed.  The worker
count only changes wall time: episodes are planned up front, rendered
independently and written under their own directories, and the dataset
manifest is written once, sorted, at the end.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .augment import AugmentPlan, EpisodeSpec, augment_background, load_background, run_plan
from .demo import Demonstration, build_demonstration, load_demo
from .gscene import AssetLibrary, compose_frame
from .kinematics import RobotModel, forward_kinematics, load_robot
from .render import RenderConfig, render
from .semantics import (
    NO_LABEL,
    Frame,
    RelationSet,
    aggregate_patch_labels,
    actions_from_trajectory,
    build_attention_mask,
    export_episode,
    load_episode,
    read_png,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class ConfigError(Exception):
    pass


@dataclass
class PipelineConfig:
    out: Path
    assets: Path | None = None
    manifests: list[Path] = field(default_factory=list)
    robot: Path | None = None
    plan: Path | None = None
    seed: int | None = None
    workers: int = 1
    render: RenderConfig = field(default_factory=RenderConfig)
    materialize_masks: bool = False
    patch_size: int = 16
    relations: RelationSet = field(default_factory=RelationSet.default)
    cache_dir: Path | None = None

    def __post_init__(self) -> None:
        self.out = Path(self.out)
        self.manifests = [Path(m) for m in self.manifests]
        if self.cache_dir is None and os.environ.get("EXOGS_CACHE"):
            self.cache_dir = Path(os.environ["EXOGS_CACHE"])

    def check_paths(self, need_plan: bool = False) -> None:
        missing = [str(p) for p in [self.robot, self.assets, *self.manifests] if p is not None and not Path(p).exists()]
        if need_plan and (self.plan is None or not Path(self.plan).is_file()):
            missing.append(str(self.plan))
        if not self.manifests:
            raise ConfigError("no demonstration manifest or demo file given")
        if self.assets is None:
            raise ConfigError("no asset manifest given")
        if missing:
            raise ConfigError(f"paths not found: {', '.join(missing)}")


def load_any_demo(path: Path, robot: Path | None = None) -> Demonstration:
    """Accept a processed demonstration file or a raw ingestion manifest."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if "trajectory" in doc:
        demo = Demonstration.from_dict(doc)
        if robot is not None:
            demo = demo.replace(robot_path=str(robot))
        return demo
    return build_demonstration(load_demo(path, robot))


def _robot_for(demo: Demonstration, robot: Path | None) -> RobotModel:
    path = robot if robot is not None else demo.robot_path
    if path is None:
        raise ConfigError(f"demo {demo.demo_id} has no robot description; pass --robot")
    return load_robot(path)


def _semantics_from_plan(cfg: PipelineConfig, doc: dict) -> PipelineConfig:
    sem = doc.get("semantics") or {}
    changes = {}
    if "render" in doc:
        changes["render"] = RenderConfig.from_dict(doc["render"])
    if "patch_size" in sem:
        changes["patch_size"] = int(sem["patch_size"])
    if "relations" in sem or "C" in sem:
        C = int(sem.get("C", 3))
        rel = sem.get("relations")
        changes["relations"] = RelationSet(C, frozenset(tuple(p) for p in rel)) if rel else RelationSet.default(C)
    return replace(cfg, **changes) if changes else cfg


# rendering -----------------------------------------------------------------------


def render_episode(spec: EpisodeSpec, robot: RobotModel, config: PipelineConfig) -> tuple[list[Frame], list]:
    demo = spec.demo
    cam = spec.camera
    images: dict[str, np.ndarray] = {}
    scaled: dict = {}
    frames, grids = [], []
    link_names = robot.link_names
    for t, state in enumerate(demo.trajectory.states):
        poses = dict(zip(link_names, forward_kinematics(robot, state.q, state.g)))
        scene = compose_frame(spec.library, demo, t, poses, camera=cam, scaled_cache=scaled)
        out = render(scene, config.render)
        bg = spec.background_for(t, demo.H)
        if bg is not None:
            if bg not in images:
                images[bg] = load_background(bg, cam.width, cam.height)
            out = augment_background(out, images[bg])
        frames.append(Frame(out.rgb, out.instance, out.depth))
        grids.append(aggregate_patch_labels(out.instance, config.patch_size, config.relations.C))
    return frames, grids


def episode_hash(spec: EpisodeSpec, config: PipelineConfig, plan_digest: str) -> str:
    key = {
        "demo": spec.demo.digest(),
        "library": spec.library.digest(),
        "camera": spec.camera.to_dict(),
        "backgrounds": [hashlib.sha256(Path(b).read_bytes()).hexdigest() for b in spec.backgrounds],
        "plan": plan_digest,
        "index": spec.index,
        "render": config.render.to_dict(),
        "patch_size": config.patch_size,
        "relations": config.relations.to_json(),
        "materialize": config.materialize_masks,
    }
    return hashlib.sha256(json.dumps(key, sort_keys=True).encode()).hexdigest()


def _existing_hash(root: Path) -> str | None:
    meta = root / "meta.json"
    if not meta.is_file():
        return None
    try:
        return json.loads(meta.read_text(encoding="utf-8"))["provenance"].get("episode_hash")
    except (ValueError, KeyError):
        return None


def _produce(job) -> dict:
    spec, robot, config, plan_digest, source = job
    ep_hash = episode_hash(spec, config, plan_digest)
    root = config.out / spec.episode_id
    if _existing_hash(root) == ep_hash:
        log.info("episode %s up to date, skipping", spec.episode_id)
    else:
        frames, grids = render_episode(spec, robot, config)
        provenance = {
            "episode_hash": ep_hash,
            "plan_hash": plan_digest,
            "seed": spec.seed,
            "source_demo": source,
            "episode_index": spec.index,
            "strategies": list(spec.strategies),
            "draws": spec.draws,
        }
        export_episode(
            frames, actions_from_trajectory(spec.demo.trajectory), grids, config.relations,
            config.out, spec.episode_id, spec.camera, provenance, config.materialize_masks,
        )
    ds = load_episode(root)
    return {
        "episode_id": spec.episode_id,
        "episode_hash": ep_hash,
        "source_demo": source,
        "strategies": list(spec.strategies),
        "files": {str(p.relative_to(config.out)): _sha256(p) for p in ds.files()},
    }


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_jobs(jobs: list, workers: int) -> list[dict]:
    if workers <= 1 or len(jobs) <= 1:
        return [_produce(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_produce, jobs))


def _write_manifest(out: Path, entries: list[dict], extra: dict) -> Path:
    doc = dict(extra)
    doc["episodes"] = sorted(entries, key=lambda e: e["episode_id"])
    path = out / MANIFEST
    path.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    return path


def _generate(config: PipelineConfig, plan: AugmentPlan, plan_root: Path | None) -> list[dict]:
    library = AssetLibrary.load(config.assets, config.cache_dir)
    config.out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for m in config.manifests:
        demo = load_any_demo(m, config.robot)
        robot = _robot_for(demo, config.robot)
        for spec in run_plan(demo, library, plan, plan_root):
            jobs.append((spec, robot, config, plan.digest(), demo.demo_id))
    ids = [j[0].episode_id for j in jobs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate episode ids; demonstrations need distinct ids")
    entries = _run_jobs(jobs, config.workers)
    _write_manifest(config.out, entries, {"seed": plan.seed, "plan": plan.to_dict(), "plan_hash": plan.digest()})
    return entries


def cmd_replay(config: PipelineConfig) -> list[dict]:
    """Render every demonstration once from its primary camera, without augmentation."""
    config.check_paths()
    plan = AugmentPlan(seed=config.seed or 0, multiplier=1)
    return _generate(config, plan, None)


def cmd_augment(config: PipelineConfig) -> list[dict]:
    """Expand every demonstration with the plan and render all episodes."""
    config.check_paths(need_plan=True)
    doc = json.loads(Path(config.plan).read_text(encoding="utf-8"))
    if config.seed is not None:
        doc["seed"] = config.seed
    plan = AugmentPlan.from_dict(doc)
    config = _semantics_from_plan(config, doc)
    return _generate(config, plan, Path(config.plan).parent)


# validation ---------------------------------------------------------------------


@dataclass
class ValidationReport:
    errors: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return not self.errors

    def bump(self, key: str, n: int = 1) -> None:
        self.counts[key] = self.counts.get(key, 0) + n

    def to_dict(self) -> dict:
        return {"passed": self.passed, "errors": self.errors, "counts": self.counts}

    def format(self) -> str:
        lines = [f"{'PASS' if self.passed else 'FAIL'}: {len(self.errors)} error(s)"]
        lines += [f"  {k}: {v}" for k, v in sorted(self.counts.items())]
        lines += [f"  error: {e}" for e in self.errors]
        return "\n".join(lines)


def cmd_validate(root: str | Path) -> ValidationReport:
    """Check a dataset tree against its manifest and the per-frame invariants."""
    root = Path(root)
    rep = ValidationReport()
    mpath = root / MANIFEST
    if not mpath.is_file():
        rep.errors.append(f"{mpath}: missing dataset manifest")
        return rep
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    listed: set[str] = {MANIFEST}
    for entry in manifest.get("episodes", []):
        rep.bump("episodes")
        for rel, digest in entry["files"].items():
            listed.add(rel)
            p = root / rel
            if not p.is_file():
                rep.errors.append(f"{p}: listed in manifest but missing")
            elif _sha256(p) != digest:
                rep.errors.append(f"{p}: content hash differs from manifest")
        try:
            _validate_episode(root / entry["episode_id"], entry, rep)
        except (OSError, ValueError, KeyError) as exc:
            rep.errors.append(f"{root / entry['episode_id']}: {exc}")
    for p in sorted(root.rglob("*")):
        if p.is_file() and str(p.relative_to(root)) not in listed:
            rep.errors.append(f"{p}: not referenced by the manifest")
    return rep


def _validate_episode(ep_root: Path, entry: dict, rep: ValidationReport) -> None:
    ds = load_episode(ep_root)
    if ds.provenance.get("episode_hash") != entry["episode_hash"]:
        rep.errors.append(f"{ep_root / 'meta.json'}: provenance hash does not match manifest")
    if len(ds.frames) != len(ds.actions):
        rep.errors.append(f"{ep_root}: {len(ds.frames)} frames vs {len(ds.actions)} actions")
    ts = [a["t"] for a in ds.actions]
    if any(b <= a for a, b in zip(ts, ts[1:])):
        rep.errors.append(f"{ep_root / 'actions.jsonl'}: timestamps not increasing")
    if any(not 0.0 <= a["g"] <= 1.0 for a in ds.actions):
        rep.errors.append(f"{ep_root / 'actions.jsonl'}: gripper value outside [0, 1]")
    valid_labels = set(range(ds.C)) | {NO_LABEL}
    shape = (ds.camera.height, ds.camera.width)
    for f in ds.frames:
        rep.bump("frames")
        try:
            rgb = read_png(ep_root / f["rgb"])
            inst = read_png(ep_root / f["instance"])
            depth = read_png(ep_root / f["depth"])
        except (OSError, ValueError, SyntaxError) as exc:
            rep.errors.append(f"{ep_root / f['rgb']}…: unreadable image ({exc})")
            continue
        if rgb.shape != shape + (3,):
            rep.errors.append(f"{ep_root / f['rgb']}: shape {rgb.shape}, expected {shape + (3,)}")
        if inst.shape != shape or inst.dtype != np.uint8:
            rep.errors.append(f"{ep_root / f['instance']}: bad shape or dtype")
            continue
        bad = set(np.unique(inst).tolist()) - valid_labels
        if bad:
            rep.errors.append(f"{ep_root / f['instance']}: labels {sorted(bad)} outside range")
            continue
        if depth.shape != shape:
            rep.errors.append(f"{ep_root / f['depth']}: shape {depth.shape}, expected {shape}")
        if np.any((depth > 0) & (inst == NO_LABEL)):
            rep.errors.append(f"{ep_root / f['depth']}: depth on pixels without a label")
        grid = ds.patch_grid(f["index"])
        expect = aggregate_patch_labels(inst, ds.patch_size, ds.C)
        if grid != expect:
            rep.errors.append(f"{ep_root / f['patches']}: patch labels disagree with instance mask")
        rep.bump("patch_grids")
        if "attention" in f:
            mask = np.load(ep_root / f["attention"])
            if not np.array_equal(mask, build_attention_mask(grid.labels.ravel(), ds.relation_set)):
                rep.errors.append(f"{ep_root / f['attention']}: attention mask disagrees with labels")
            rep.bump("attention_masks")


# post-hoc semantics ---------------------------------------------------------------


def relabel_dataset(
    root: str | Path,
    patch_size: int | None = None,
    relations: RelationSet | None = None,
    materialize: bool | None = None,
) -> list[dict]:
    """Recompute patch grids and attention masks of an existing tree in place.

    Instance masks are the source of truth; RGB, depth and actions are not
    touched.  The dataset manifest is rewritten with fresh file hashes.
    """
    root = Path(root)
    mpath = root / MANIFEST
    manifest = json.loads(mpath.read_text(encoding="utf-8"))
    for entry in manifest["episodes"]:
        ep = root / entry["episode_id"]
        meta = json.loads((ep / "meta.json").read_text(encoding="utf-8"))
        ps = patch_size or int(meta["patch_size"])
        rel = relations or RelationSet.from_json(meta["relation_set"])
        mat = meta["materialized_attention"] if materialize is None else materialize
        for f in meta["frames"]:
            inst = read_png(ep / f["instance"])
            grid = aggregate_patch_labels(inst, ps, rel.C)
            (ep / f["patches"]).write_text(json.dumps(grid.to_json()), encoding="utf-8")
            att = f"frames/{f['index']:06d}.attention.npy"
            if mat:
                np.save(ep / att, build_attention_mask(grid.labels.ravel(), rel))
                f["attention"] = att
            else:
                f.pop("attention", None)
                (ep / att).unlink(missing_ok=True)
        meta.update(patch_size=ps, C=rel.C, relation_set=rel.to_json(), materialized_attention=bool(mat))
        (ep / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
        ds = load_episode(ep)
        entry["files"] = {str(p.relative_to(root)): _sha256(p) for p in ds.files()}
    entries = manifest.pop("episodes")
    _write_manifest(root, entries, manifest)
    return entries
