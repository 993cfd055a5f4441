"""Patch-level labels, label-relation attention masks and episode export.

Episode layout on disk::

    <out>/<episode_id>/frames/000000.rgb.png        8-bit RGB
                              000000.instance.png   8-bit labels (255 = none)
                              000000.depth.png      16-bit millimeters (0 = invalid)
                              000000.patches.json   patch label grid
                              000000.attention.npy  only with materialize=True
                       actions.jsonl                {"t", "q", "g"} per step
                       meta.json                    camera, relations, provenance

``meta.json`` is written last, so its presence marks a complete episode.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image

from .geometry import CameraModel

NO_LABEL = 255
NEG_INF = -1e9
DEFAULT_PATCH = 16
DEFAULT_CLASSES = 3


class SemanticsError(ValueError):
    pass


class IndivisibleDimensions(SemanticsError):
    pass


class LabelOutOfRange(SemanticsError):
    pass


class LengthMismatch(SemanticsError):
    pass


class IoError(OSError):
    pass


@dataclass(frozen=True)
class PatchLabelGrid:
    patch_size: int
    labels: np.ndarray
    C: int

    def to_json(self) -> dict:
        return {"patch_size": self.patch_size, "C": self.C, "labels": self.labels.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> PatchLabelGrid:
        return cls(int(d["patch_size"]), np.asarray(d["labels"], dtype=np.int64), int(d["C"]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PatchLabelGrid):
            return NotImplemented
        return (self.patch_size, self.C) == (other.patch_size, other.C) and np.array_equal(
            self.labels, other.labels
        )


@dataclass(frozen=True)
class RelationSet:
    C: int
    allowed: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        pairs = frozenset((int(i), int(j)) for i, j in self.allowed)
        for i, j in pairs:
            if not (0 <= i < self.C and 0 <= j < self.C):
                raise LabelOutOfRange(f"relation ({i}, {j}) outside [0, {self.C})")
        object.__setattr__(self, "allowed", pairs)

    def __contains__(self, pair) -> bool:
        return (int(pair[0]), int(pair[1])) in self.allowed

    @classmethod
    def default(cls, C: int = DEFAULT_CLASSES) -> RelationSet:
        """Self-pairs plus robot↔object (1, 2) in both directions."""
        pairs = {(c, c) for c in range(C)}
        if C > 2:
            pairs |= {(1, 2), (2, 1)}
        return cls(C, frozenset(pairs))

    def table(self) -> np.ndarray:
        t = np.zeros((self.C, self.C), dtype=bool)
        for i, j in self.allowed:
            t[i, j] = True
        return t

    def to_json(self) -> dict:
        return {"C": self.C, "allowed": sorted(list(p) for p in self.allowed)}

    @classmethod
    def from_json(cls, d: dict) -> RelationSet:
        return cls(int(d["C"]), frozenset(tuple(p) for p in d["allowed"]))


def aggregate_patch_labels(instance: np.ndarray, patch_size: int = DEFAULT_PATCH, C: int = DEFAULT_CLASSES) -> PatchLabelGrid:
    """Majority class per ``patch_size`` square; 255 counts as class 0; ties go to the smaller id."""
    img = np.asarray(instance)
    h, w = img.shape
    if h % patch_size or w % patch_size:
        raise IndivisibleDimensions(f"{w}x{h} image not divisible by patch size {patch_size}")
    lab = np.where(img == NO_LABEL, 0, img).astype(np.int64)
    if lab.min() < 0 or lab.max() >= C:
        raise LabelOutOfRange(f"pixel labels must lie in [0, {C}) or equal {NO_LABEL}")
    blocks = lab.reshape(h // patch_size, patch_size, w // patch_size, patch_size).transpose(0, 2, 1, 3)
    blocks = blocks.reshape(h // patch_size, w // patch_size, -1)
    counts = (blocks[..., None] == np.arange(C)).sum(axis=2)
    return PatchLabelGrid(patch_size, np.argmax(counts, axis=-1), C)


def build_attention_mask(labels: Sequence[int], relations: RelationSet) -> np.ndarray:
    """Additive mask: 0 where ``(ℓ_i, ℓ_j)`` is allowed, ``NEG_INF`` elsewhere."""
    lab = np.asarray(labels, dtype=np.int64).ravel()
    if lab.size and (lab.min() < 0 or lab.max() >= relations.C):
        raise LabelOutOfRange(f"labels must lie in [0, {relations.C})")
    allowed = relations.table()[lab[:, None], lab[None, :]]
    return np.where(allowed, 0.0, NEG_INF)


# image I/O ---------------------------------------------------------------------


def write_rgb_png(path: Path, rgb: np.ndarray) -> None:
    Image.fromarray(np.rint(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8), "RGB").save(path)


def write_instance_png(path: Path, instance: np.ndarray) -> None:
    Image.fromarray(np.asarray(instance, dtype=np.uint8), "L").save(path)


def depth_to_mm(depth: np.ndarray, valid: np.ndarray | None = None) -> np.ndarray:
    mm = np.clip(np.rint(depth * 1000.0), 0, 65535).astype(np.uint16)
    if valid is not None:
        mm = np.where(valid, mm, 0).astype(np.uint16)
    return mm


def write_depth_png(path: Path, depth_mm: np.ndarray) -> None:
    Image.fromarray(np.asarray(depth_mm, dtype=np.uint16)).save(path)


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im)


# episodes ------------------------------------------------------------------------


@dataclass
class Frame:
    """One rendered step ready for export."""

    rgb: np.ndarray
    instance: np.ndarray
    depth: np.ndarray


@dataclass
class EpisodeDataset:
    episode_id: str
    root: Path
    frames: list[dict]
    actions: list[dict]
    camera: CameraModel
    relation_set: RelationSet
    provenance: dict = field(default_factory=dict)
    patch_size: int = DEFAULT_PATCH
    C: int = DEFAULT_CLASSES

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.actions):
            raise LengthMismatch(f"{len(self.frames)} frames vs {len(self.actions)} actions")

    def patch_grid(self, i: int) -> PatchLabelGrid:
        return PatchLabelGrid.from_json(json.loads((self.root / self.frames[i]["patches"]).read_text()))

    def files(self) -> list[Path]:
        out = [self.root / "actions.jsonl", self.root / "meta.json"]
        for f in self.frames:
            out += [self.root / v for k, v in sorted(f.items()) if k != "index"]
        return out


def _frame_names(i: int) -> dict:
    stem = f"frames/{i:06d}"
    return {
        "index": i,
        "rgb": f"{stem}.rgb.png",
        "instance": f"{stem}.instance.png",
        "depth": f"{stem}.depth.png",
        "patches": f"{stem}.patches.json",
    }


def export_episode(
    frames: Sequence[Frame],
    actions: Sequence[dict],
    patch_grids: Sequence[PatchLabelGrid],
    relations: RelationSet,
    out_dir: str | Path,
    episode_id: str,
    camera: CameraModel,
    provenance: dict | None = None,
    materialize: bool = False,
) -> EpisodeDataset:
    """Write one episode directory and return its in-memory description.

    ``actions`` entries are ``{"t": float, "q": list[float], "g": float}``.
    """
    if not (len(frames) == len(actions) == len(patch_grids)):
        raise LengthMismatch(
            f"{len(frames)} frames, {len(actions)} actions, {len(patch_grids)} patch grids"
        )
    root = Path(out_dir) / episode_id
    (root / "frames").mkdir(parents=True, exist_ok=True)
    entries = []
    try:
        for i, (fr, grid) in enumerate(zip(frames, patch_grids)):
            names = _frame_names(i)
            write_rgb_png(root / names["rgb"], fr.rgb)
            write_instance_png(root / names["instance"], fr.instance)
            write_depth_png(root / names["depth"], depth_to_mm(fr.depth, fr.instance != NO_LABEL))
            (root / names["patches"]).write_text(json.dumps(grid.to_json()), encoding="utf-8")
            if materialize:
                names["attention"] = f"frames/{i:06d}.attention.npy"
                np.save(root / names["attention"], build_attention_mask(grid.labels.ravel(), relations))
            entries.append(names)
        with (root / "actions.jsonl").open("w", encoding="utf-8") as fh:
            for a in actions:
                fh.write(json.dumps({"t": float(a["t"]), "q": [float(v) for v in a["q"]], "g": float(a["g"])}) + "\n")
        grid0 = patch_grids[0] if patch_grids else PatchLabelGrid(DEFAULT_PATCH, np.zeros((0, 0)), relations.C)
        meta = {
            "episode_id": episode_id,
            "num_frames": len(frames),
            "camera": camera.to_dict(),
            "relation_set": relations.to_json(),
            "patch_size": grid0.patch_size,
            "C": relations.C,
            "materialized_attention": bool(materialize),
            "frames": entries,
            "provenance": provenance or {},
        }
        (root / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"writing episode {episode_id}: {exc}") from exc
    return EpisodeDataset(
        episode_id, root, entries, [dict(a) for a in actions], camera, relations,
        provenance or {}, grid0.patch_size, relations.C,
    )


def load_episode(root: str | Path) -> EpisodeDataset:
    root = Path(root)
    meta = json.loads((root / "meta.json").read_text(encoding="utf-8"))
    actions = [
        json.loads(line)
        for line in (root / "actions.jsonl").read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    return EpisodeDataset(
        episode_id=meta["episode_id"],
        root=root,
        frames=meta["frames"],
        actions=actions,
        camera=CameraModel.from_dict(meta["camera"]),
        relation_set=RelationSet.from_json(meta["relation_set"]),
        provenance=meta.get("provenance", {}),
        patch_size=int(meta["patch_size"]),
        C=int(meta["C"]),
    )


def actions_from_trajectory(traj) -> list[dict]:
    return [{"t": s.t, "q": s.q.tolist(), "g": s.g} for s in traj.states]


def flatten_labels(grids: Iterable[PatchLabelGrid]) -> np.ndarray:
    """Concatenate per-frame grids into the T·N token label vector."""
    return np.concatenate([g.labels.ravel() for g in grids])
