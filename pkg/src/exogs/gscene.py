"""Editable Gaussian assets, splat-file I/O, asset libraries and per-frame scenes."""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from . import sh
from .demo import Demonstration
from .geometry import CameraModel, RigidTransform, quat_multiply, quat_to_matrix

log = logging.getLogger(__name__)

BACKGROUND, ROBOT, OBJECT = 0, 1, 2
ENVIRONMENT = "environment"
MIN_SCALE, MAX_SCALE = 1e-7, 10.0
_LOG_MIN, _LOG_MAX = np.log(MIN_SCALE), np.log(MAX_SCALE)
_REST_COUNTS = {0: 0, 9: 1, 24: 2, 45: 3}


class SceneError(Exception):
    pass


class ParseError(SceneError):
    pass


class UnsupportedLayout(SceneError):
    pass


class MissingBinding(SceneError):
    pass


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GaussianAsset:
    """N Gaussian primitives in the asset's own frame.

    Scales are stored as logs and opacities as logits, exactly as in splat
    files; the ``scales`` / ``opacities`` properties apply the activations.
    ``sh_coeffs`` is (N, 3, B) with B in {1, 4, 9, 16}.  ``color_gain`` is an
    optional (N, 3) multiplier applied to the decoded color before clamping.
    """

    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    instance_label: int = OBJECT
    asset_id: str = "asset"
    color_gain: np.ndarray | None = None

    def __post_init__(self) -> None:
        pos = _readonly(self.positions).reshape(-1, 3)
        n = pos.shape[0]
        if n < 1:
            raise ValueError("an asset needs at least one Gaussian")
        q = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        norms = np.linalg.norm(q, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("zero-norm Gaussian rotation")
        if np.any(np.abs(norms - 1.0) > 1e-6):
            q = q / norms
        shc = _readonly(self.sh_coeffs)
        if shc.ndim != 3 or shc.shape[:2] != (n, 3) or shc.shape[2] not in sh.BASIS_SIZES.values():
            raise ValueError(f"sh_coeffs must be (N, 3, B), got {shc.shape}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "log_scales", _readonly(self.log_scales).reshape(n, 3))
        object.__setattr__(self, "rotations", _readonly(q))
        object.__setattr__(self, "opacity_logits", _readonly(self.opacity_logits).reshape(n))
        object.__setattr__(self, "sh_coeffs", shc)
        if self.color_gain is not None:
            object.__setattr__(
                self, "color_gain", _readonly(np.broadcast_to(self.color_gain, (n, 3)))
            )

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def sh_degree(self) -> int:
        return sh.degree_for(self.sh_coeffs.shape[2])

    @property
    def scales(self) -> np.ndarray:
        return np.exp(np.clip(self.log_scales, _LOG_MIN, _LOG_MAX))

    @property
    def opacities(self) -> np.ndarray:
        return _sigmoid(self.opacity_logits)

    @property
    def covariances(self) -> np.ndarray:
        """(N, 3, 3) covariances ``R diag(s²) Rᵀ`` in the asset frame."""
        r = quat_to_matrix(self.rotations)
        s2 = self.scales**2
        return np.einsum("nij,nj,nkj->nik", r, s2, r)

    @property
    def centroid(self) -> np.ndarray:
        return self.positions.mean(axis=0)

    def replace(self, **changes) -> GaussianAsset:
        return replace(self, **changes)

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.positions, self.log_scales, self.rotations, self.opacity_logits, self.sh_coeffs):
            h.update(a.tobytes())
        if self.color_gain is not None:
            h.update(self.color_gain.tobytes())
        h.update(f"{self.instance_label}:{self.asset_id}".encode())
        return h.hexdigest()


def make_asset(
    positions: np.ndarray,
    scales: np.ndarray,
    colors: np.ndarray,
    opacities: np.ndarray,
    rotations: np.ndarray | None = None,
    instance_label: int = OBJECT,
    asset_id: str = "asset",
) -> GaussianAsset:
    """Build an asset from activated values (linear scales, [0,1] opacity, RGB)."""
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    n = positions.shape[0]
    if rotations is None:
        rotations = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    colors = np.broadcast_to(np.asarray(colors, dtype=np.float64), (n, 3))
    op = np.clip(np.broadcast_to(np.asarray(opacities, dtype=np.float64), (n,)), 1e-12, 1 - 1e-12)
    return GaussianAsset(
        positions=positions,
        log_scales=np.log(np.broadcast_to(np.asarray(scales, dtype=np.float64), (n, 3))),
        rotations=rotations,
        opacity_logits=np.log(op / (1.0 - op)),
        sh_coeffs=((colors - 0.5) / sh.C0)[:, :, None],
        instance_label=instance_label,
        asset_id=asset_id,
    )


# splat files ---------------------------------------------------------------


def load_splat(path: str | Path, instance_label: int = OBJECT, asset_id: str | None = None) -> GaussianAsset:
    """Read a standard 3DGS binary point file."""
    path = Path(path)
    try:
        ply = PlyData.read(str(path))
        v = ply["vertex"].data
    except (OSError, KeyError, ValueError, IndexError, PlyParseError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    names = set(v.dtype.names)
    required = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity",
                "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    missing = [f for f in required if f not in names]
    if missing:
        raise UnsupportedLayout(f"{path}: missing fields {missing}")
    n_rest = sum(1 for f in names if f.startswith("f_rest_"))
    if n_rest not in _REST_COUNTS or any(f"f_rest_{i}" not in names for i in range(n_rest)):
        raise UnsupportedLayout(f"{path}: {n_rest} f_rest fields is not a complete SH degree")

    def col(*fields: str) -> np.ndarray:
        return np.stack([np.asarray(v[f], dtype=np.float64) for f in fields], axis=-1)

    pos = col("x", "y", "z")
    dc = col("f_dc_0", "f_dc_1", "f_dc_2")
    rest = col(*[f"f_rest_{i}" for i in range(n_rest)]) if n_rest else np.zeros((len(pos), 0))
    opacity = np.asarray(v["opacity"], dtype=np.float64)
    log_s = col("scale_0", "scale_1", "scale_2")
    rot = col("rot_0", "rot_1", "rot_2", "rot_3")
    if len(pos) == 0:
        raise ParseError(f"{path}: no Gaussians")
    for name, arr in (("position", pos), ("color", dc), ("sh", rest), ("opacity", opacity),
                      ("scale", log_s), ("rotation", rot)):
        bad = ~np.isfinite(arr.reshape(len(pos), -1)).all(axis=1)
        if bad.any():
            raise ParseError(f"{path}: non-finite {name} in rows {np.flatnonzero(bad).tolist()}")
    zero_q = np.linalg.norm(rot, axis=1) == 0
    if zero_q.any():
        raise ParseError(f"{path}: zero quaternion in rows {np.flatnonzero(zero_q).tolist()}")

    clamped = int(np.count_nonzero((log_s < _LOG_MIN) | (log_s > _LOG_MAX)))
    if clamped:
        log.warning("%s: clamped %d scale values into [%g, %g] m", path, clamped, MIN_SCALE, MAX_SCALE)
        log_s = np.clip(log_s, _LOG_MIN, _LOG_MAX)
    B = 1 + n_rest // 3
    coeffs = np.empty((len(pos), 3, B))
    coeffs[:, :, 0] = dc
    coeffs[:, :, 1:] = rest.reshape(len(pos), 3, B - 1)
    return GaussianAsset(pos, log_s, rot, opacity, coeffs, instance_label,
                         asset_id if asset_id is not None else path.stem)


def save_splat(asset: GaussianAsset, path: str | Path) -> None:
    """Write ``asset`` as a binary little-endian 3DGS point file (float32)."""
    n, _, B = asset.sh_coeffs.shape
    n_rest = 3 * (B - 1)
    fields = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
    fields += [f"f_rest_{i}" for i in range(n_rest)]
    fields += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    data = np.empty(n, dtype=[(f, "<f4") for f in fields])
    cols = np.concatenate(
        [
            asset.positions,
            np.zeros((n, 3)),
            asset.sh_coeffs[:, :, 0],
            asset.sh_coeffs[:, :, 1:].reshape(n, n_rest),
            asset.opacity_logits[:, None],
            asset.log_scales,
            asset.rotations,
        ],
        axis=1,
    )
    for i, f in enumerate(fields):
        data[f] = cols[:, i]
    PlyData([PlyElement.describe(data, "vertex")], byte_order="<").write(str(path))


# editing -------------------------------------------------------------------


def transform_asset(
    asset: GaussianAsset,
    T: RigidTransform | None = None,
    scale: float = 1.0,
    rotate_sh: bool = False,
) -> GaussianAsset:
    """Scale about the centroid, then apply ``T``.

    Positions map to ``R (c + s (p - c)) + t``; Gaussian orientations are
    left-multiplied by R and their scales multiplied by ``s``.  When R is not
    the identity, the view-dependent SH bands are either rotated along
    (``rotate_sh=True``) or dropped, leaving the DC color only.
    """
    if scale <= 0:
        raise ValueError("scale must be positive")
    T = RigidTransform() if T is None else T
    identity_rot = bool(np.array_equal(T.rotation, [1.0, 0.0, 0.0, 0.0]))
    if identity_rot and not T.translation.any() and scale == 1.0:
        return asset
    p = asset.positions
    log_s = asset.log_scales
    if scale != 1.0:
        c = asset.centroid
        p = c + scale * (p - c)
        log_s = log_s + np.log(scale)
    r = T.rotation_matrix
    p = p @ r.T + T.translation
    rots, coeffs = asset.rotations, asset.sh_coeffs
    if not identity_rot:
        rots = quat_multiply(T.rotation, rots)
        if coeffs.shape[2] > 1:
            coeffs = sh.rotate(coeffs, r) if rotate_sh else coeffs[:, :, :1]
    return asset.replace(positions=p, log_scales=log_s, rotations=rots, sh_coeffs=coeffs)


def scale_colors(asset: GaussianAsset, factors: Sequence[float]) -> GaussianAsset:
    """Multiply the decoded (pre-clamp) color by per-channel ``factors``.

    The DC term absorbs the 0.5 offset so ``0.5 + Y·c`` scales exactly.
    """
    k = np.asarray(factors, dtype=np.float64).reshape(3)
    if np.all(k == 1.0):
        return asset
    c = asset.sh_coeffs * k[None, :, None]
    c[:, :, 0] += (k - 1.0)[None, :] * 0.5 / sh.C0
    return asset.replace(sh_coeffs=c)


def apply_color_gain(asset: GaussianAsset, gain: np.ndarray) -> GaussianAsset:
    """Compose a per-Gaussian multiplicative gain on the decoded color."""
    gain = np.broadcast_to(np.asarray(gain, dtype=np.float64), (len(asset), 3))
    if np.all(gain == 1.0):
        return asset
    new = gain if asset.color_gain is None else asset.color_gain * gain
    return asset.replace(color_gain=new)


# libraries and scenes ------------------------------------------------------


@dataclass
class AssetLibrary:
    """Assets by id plus what each one is bound to.

    A binding is ``"environment"``, a robot link name, an object id, or
    ``None`` for spare assets only used as substitutes.
    """

    assets: dict[str, GaussianAsset] = field(default_factory=dict)
    bindings: dict[str, str | None] = field(default_factory=dict)

    def add(self, asset: GaussianAsset, binding: str | None = None) -> None:
        self.assets[asset.asset_id] = asset
        self.bindings[asset.asset_id] = binding

    def __contains__(self, asset_id: str) -> bool:
        return asset_id in self.assets

    def __getitem__(self, asset_id: str) -> GaussianAsset:
        return self.assets[asset_id]

    def bound_to(self, target: str) -> list[str]:
        return [a for a, b in self.bindings.items() if b == target]

    def replace_assets(self, assets: Mapping[str, GaussianAsset]) -> AssetLibrary:
        return AssetLibrary(dict(assets), dict(self.bindings))

    def digest(self) -> str:
        h = hashlib.sha256()
        for aid in sorted(self.assets):
            h.update(f"{aid}={self.bindings.get(aid)}:".encode())
            h.update(self.assets[aid].digest().encode())
        return h.hexdigest()

    @classmethod
    def load(cls, manifest: str | Path, cache_dir: str | Path | None = None) -> AssetLibrary:
        """Load a JSON manifest ``{asset_id: {path, instance_label, binding}}``."""
        manifest = Path(manifest)
        if not manifest.is_file():
            raise FileNotFoundError(f"asset manifest not found: {manifest}")
        doc = json.loads(manifest.read_text(encoding="utf-8"))
        lib = cls()
        for aid, entry in doc.items():
            p = Path(entry["path"])
            if not p.is_absolute():
                p = manifest.parent / p
            label = int(entry.get("instance_label", OBJECT))
            lib.add(_load_cached(p, label, aid, cache_dir), entry.get("binding"))
        return lib


def _load_cached(path: Path, label: int, aid: str, cache_dir: str | Path | None) -> GaussianAsset:
    if cache_dir is None:
        return load_splat(path, label, aid)
    cache_dir = Path(cache_dir)
    key = hashlib.sha256(path.read_bytes()).hexdigest()[:24]
    hit = cache_dir / f"{key}.npz"
    if hit.is_file():
        d = np.load(hit)
        return GaussianAsset(d["positions"], d["log_scales"], d["rotations"],
                             d["opacity_logits"], d["sh_coeffs"], label, aid)
    asset = load_splat(path, label, aid)
    cache_dir.mkdir(parents=True, exist_ok=True)
    np.savez(hit, positions=asset.positions, log_scales=asset.log_scales,
             rotations=asset.rotations, opacity_logits=asset.opacity_logits,
             sh_coeffs=asset.sh_coeffs)
    return asset


@dataclass(frozen=True)
class Placement:
    asset_id: str
    asset: GaussianAsset
    pose: RigidTransform


@dataclass(frozen=True)
class FrameScene:
    placements: tuple[Placement, ...]
    camera: CameraModel
    background: np.ndarray | None = None

    def __post_init__(self) -> None:
        ids = [p.asset_id for p in self.placements]
        if len(set(ids)) != len(ids):
            raise SceneError("an asset may be placed at most once per frame")


def resolve_object_asset(library: AssetLibrary, demo: Demonstration, object_id: str) -> str:
    explicit = demo.object_assets.get(object_id)
    if explicit is not None and explicit != object_id:
        return explicit
    bound = library.bound_to(object_id)
    if bound:
        return bound[0]
    if object_id in library.bindings or object_id in library.assets:
        return object_id
    raise MissingBinding(f"no asset bound to object {object_id!r}")


def compose_frame(
    library: AssetLibrary,
    demo: Demonstration,
    step: int,
    link_poses: Mapping[str, RigidTransform],
    camera: CameraModel | None = None,
    background: np.ndarray | None = None,
    scaled_cache: dict | None = None,
) -> FrameScene:
    """Place environment, robot-link and object assets for step ``step`` (0-based).

    Environment assets sit at the identity, link assets at their FK pose and
    object assets at the (processed) object pose, scaled by the
    demonstration's per-object scale edit.
    """
    if not 0 <= step < demo.H:
        raise IndexError(f"step {step} outside 0..{demo.H - 1}")

    def fetch(aid: str) -> GaussianAsset:
        if aid not in library.assets:
            raise MissingBinding(f"asset {aid!r} is bound but not loaded")
        return library.assets[aid]

    placements: list[Placement] = []
    for aid, b in library.bindings.items():
        if b == ENVIRONMENT:
            placements.append(Placement(aid, fetch(aid), RigidTransform()))
    for link, pose in link_poses.items():
        for aid in library.bound_to(link):
            placements.append(Placement(aid, fetch(aid), pose))
    for oid in sorted(demo.object_tracks):
        aid = resolve_object_asset(library, demo, oid)
        asset = fetch(aid)
        s = demo.scale_for(oid)
        if s != 1.0:
            key = (aid, s)
            cache = scaled_cache if scaled_cache is not None else {}
            if key not in cache:
                cache[key] = transform_asset(asset, None, s)
            asset = cache[key]
        placements.append(Placement(aid, asset, demo.object_tracks[oid][step]))
    cam = demo.cameras[demo.primary_camera] if camera is None else camera
    return FrameScene(tuple(placements), cam, background)
