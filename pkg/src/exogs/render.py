"""Tile-based CPU Gaussian splatting.

The pipeline has two stages.  :func:`project_gaussians` gathers every placed
Gaussian, moves it into the camera frame, projects its covariance through the
local affine approximation of the perspective map, decodes its color along the
view ray, culls and depth-sorts.  :func:`rasterize` bins the projected
splats into square tiles and composites each tile front to back.

Compositing follows the usual splatting rules: ``alpha = min(0.99, o·G)``
evaluated at integer pixel centers, splats with ``alpha < 1/255`` skipped,
a pixel stops once its transmittance would drop below ``1e-4``, and each
splat only touches pixels inside the axis-aligned box of its 3σ ellipse.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import sh
from .geometry import CameraModel, quat_multiply, quat_to_matrix
from .gscene import FrameScene

NO_LABEL = 255
ALPHA_MAX = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
DILATION = 0.3
EXTENT_SIGMA = 3.0
LABEL_ALPHA_FLOOR = 0.5
_CHUNK = 128


@dataclass(frozen=True)
class RenderConfig:
    tile_size: int = 16
    sh_degree_used: int | None = None
    background_color: tuple[float, float, float] = (0.0, 0.0, 0.0)
    near: float = 0.01

    def to_dict(self) -> dict:
        return {
            "tile_size": self.tile_size,
            "sh_degree_used": self.sh_degree_used,
            "background_color": list(self.background_color),
            "near": self.near,
        }

    @classmethod
    def from_dict(cls, d: dict) -> RenderConfig:
        return cls(
            tile_size=int(d.get("tile_size", 16)),
            sh_degree_used=d.get("sh_degree_used"),
            background_color=tuple(d.get("background_color", (0.0, 0.0, 0.0))),
            near=float(d.get("near", 0.01)),
        )


@dataclass
class RenderOutput:
    rgb: np.ndarray
    instance: np.ndarray
    depth: np.ndarray
    transmittance: np.ndarray
    alpha: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.instance.shape


@dataclass
class ProjectedGaussians:
    """Screen-space splats in front-to-back order (stable on global index)."""

    means2d: np.ndarray  # (G, 2) pixel coordinates
    conics: np.ndarray  # (G, 3) inverse 2D covariance entries (a, b, c)
    extents: np.ndarray  # (G, 2) half-widths of the 3σ bounding box
    depths: np.ndarray  # (G,)
    opacities: np.ndarray  # (G,)
    colors: np.ndarray  # (G, 3) clamped to [0, 1]
    labels: np.ndarray  # (G,) uint8
    index: np.ndarray  # (G,) global Gaussian index before culling

    def __len__(self) -> int:
        return self.depths.shape[0]


def _gather(scene: FrameScene, config: RenderConfig):
    cam = scene.camera
    center = cam.center
    means, quats, scales, opac, colors, labels = [], [], [], [], [], []
    for pl in scene.placements:
        a = pl.asset
        mw = pl.pose.apply(a.positions)
        dirs = mw - center
        dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=1, keepdims=True), 1e-12)
        c = sh.evaluate(a.sh_coeffs, dirs, config.sh_degree_used)
        if a.color_gain is not None:
            c = c * a.color_gain
        means.append(mw)
        quats.append(quat_multiply(pl.pose.rotation, a.rotations))
        scales.append(a.scales)
        opac.append(a.opacities)
        colors.append(np.clip(c, 0.0, 1.0))
        labels.append(np.full(len(a), a.instance_label, dtype=np.uint8))
    if not means:
        z3 = np.zeros((0, 3))
        return z3, np.zeros((0, 4)), z3, np.zeros(0), z3, np.zeros(0, dtype=np.uint8)
    return (np.concatenate(means), np.concatenate(quats), np.concatenate(scales),
            np.concatenate(opac), np.concatenate(colors), np.concatenate(labels))


def covariance_2d(cam: CameraModel, means_cam: np.ndarray, cov_cam: np.ndarray) -> np.ndarray:
    """(G, 2, 2) screen covariance ``J Σ Jᵀ`` plus the low-pass dilation."""
    x, y, z = means_cam[:, 0], means_cam[:, 1], means_cam[:, 2]
    g = means_cam.shape[0]
    J = np.zeros((g, 2, 3))
    J[:, 0, 0] = cam.fx / z
    J[:, 0, 2] = -cam.fx * x / (z * z)
    J[:, 1, 1] = cam.fy / z
    J[:, 1, 2] = -cam.fy * y / (z * z)
    cov = J @ cov_cam @ np.transpose(J, (0, 2, 1))
    cov[:, 0, 0] += DILATION
    cov[:, 1, 1] += DILATION
    return cov


def project_gaussians(scene: FrameScene, config: RenderConfig = RenderConfig()) -> ProjectedGaussians:
    cam = scene.camera
    means_w, quats_w, scales, opac, colors, labels = _gather(scene, config)
    ext = cam.extrinsics
    means_c = ext.apply(means_w) if len(means_w) else means_w
    keep = means_c[:, 2] > config.near
    idx = np.flatnonzero(keep)
    means_c = means_c[keep]
    r = quat_to_matrix(quat_multiply(ext.rotation, quats_w[keep]))
    s2 = scales[keep] ** 2
    cov_c = np.einsum("nij,nj,nkj->nik", r, s2, r)
    cov2 = covariance_2d(cam, means_c, cov_c)
    a, b, c = cov2[:, 0, 0], cov2[:, 0, 1], cov2[:, 1, 1]
    det = a * c - b * b
    z = means_c[:, 2]
    m2 = np.stack([cam.fx * means_c[:, 0] / z + cam.cx, cam.fy * means_c[:, 1] / z + cam.cy], axis=1)
    ext2 = EXTENT_SIGMA * np.sqrt(np.stack([a, c], axis=1))
    on_screen = (
        (det > 0)
        & (m2[:, 0] + ext2[:, 0] >= 0) & (m2[:, 0] - ext2[:, 0] <= cam.width - 1)
        & (m2[:, 1] + ext2[:, 1] >= 0) & (m2[:, 1] - ext2[:, 1] <= cam.height - 1)
    )
    sel = np.flatnonzero(on_screen)
    order = sel[np.argsort(z[sel], kind="stable")]
    a, b, c, det = a[order], b[order], c[order], det[order]
    return ProjectedGaussians(
        means2d=m2[order],
        conics=np.stack([c / det, -b / det, a / det], axis=1),
        extents=ext2[order],
        depths=z[order],
        opacities=opac[keep][order],
        colors=colors[keep][order],
        labels=labels[keep][order],
        index=idx[order],
    )


def _tile_bins(proj: ProjectedGaussians, width: int, height: int, ts: int):
    """Sorted (tile, splat) pairs; splats keep depth order within each tile."""
    nx, ny = -(-width // ts), -(-height // ts)
    lo = np.ceil(proj.means2d - proj.extents)
    hi = np.floor(proj.means2d + proj.extents)
    valid = (hi[:, 0] >= 0) & (lo[:, 0] <= width - 1) & (hi[:, 1] >= 0) & (lo[:, 1] <= height - 1)
    g = np.flatnonzero(valid)
    if g.size == 0:
        return nx, ny, np.zeros(0, np.int64), np.zeros(0, np.int64)
    x0 = np.clip(lo[g, 0], 0, width - 1).astype(np.int64) // ts
    x1 = np.clip(hi[g, 0], 0, width - 1).astype(np.int64) // ts
    y0 = np.clip(lo[g, 1], 0, height - 1).astype(np.int64) // ts
    y1 = np.clip(hi[g, 1], 0, height - 1).astype(np.int64) // ts
    w = x1 - x0 + 1
    counts = w * (y1 - y0 + 1)
    splats = np.repeat(g, counts)
    # running index inside each splat's tile rectangle
    k = np.arange(splats.size) - np.repeat(np.cumsum(counts) - counts, counts)
    wr = np.repeat(w, counts)
    tiles = (np.repeat(y0, counts) + k // wr) * nx + np.repeat(x0, counts) + k % wr
    # primary key tile, secondary key splat (= depth rank)
    o = np.lexsort((splats, tiles))
    return nx, ny, tiles[o], splats[o]


def _composite_tile(px: np.ndarray, py: np.ndarray, proj: ProjectedGaussians, ids: np.ndarray):
    """Front-to-back compositing of splats ``ids`` over pixel centers ``(px, py)``.

    Arrays are laid out (splat, pixel) and every accumulation runs along the
    splat axis in order, so the sums match one-at-a-time compositing exactly.
    """
    P = px.shape[0]
    T = np.ones(P)
    rgb = np.zeros((P, 3))
    acc = np.zeros(P)
    dnum = np.zeros(P)
    best_w = np.zeros(P)
    best_label = np.full(P, NO_LABEL, dtype=np.uint8)
    alive = np.ones(P, dtype=bool)
    cols = np.arange(P)
    for s in range(0, ids.shape[0], _CHUNK):
        g = ids[s:s + _CHUNK]
        dx = px[None, :] - proj.means2d[g, 0][:, None]
        dy = py[None, :] - proj.means2d[g, 1][:, None]
        con = proj.conics[g]
        inside = (np.abs(dx) <= proj.extents[g, 0][:, None]) & (np.abs(dy) <= proj.extents[g, 1][:, None])
        power = -0.5 * (con[:, 0:1] * dx * dx + con[:, 2:3] * dy * dy) - con[:, 1:2] * dx * dy
        alpha = np.minimum(ALPHA_MAX, proj.opacities[g][:, None] * np.exp(power))
        use = inside & (power <= 0.0) & (alpha >= ALPHA_MIN) & alive[None, :]
        if not use.any():
            continue
        alpha = np.where(use, alpha, 0.0)
        # cp[k] is the transmittance in front of splat k, seeded with the carried T
        cp = np.multiply.accumulate(np.vstack([T[None, :], 1.0 - alpha]), axis=0)
        ok = np.logical_and.accumulate((cp[1:] >= T_MIN) | ~use, axis=0)
        use &= ok
        w = np.where(use, alpha * cp[:-1], 0.0)
        stopped = ~ok[-1]
        if stopped.any():
            first_bad = np.argmin(ok, axis=0)
            T = np.where(stopped, cp[first_bad, cols], cp[-1])
        else:
            T = cp[-1]
        rgb = np.add.reduce(np.concatenate([rgb[None], w[:, :, None] * proj.colors[g][:, None, :]]), axis=0)
        acc = np.add.reduce(np.vstack([acc[None, :], w]), axis=0)
        dnum = np.add.reduce(np.vstack([dnum[None, :], w * proj.depths[g][:, None]]), axis=0)
        k = np.argmax(w, axis=0)
        wk = w[k, cols]
        better = wk > best_w
        best_w = np.where(better, wk, best_w)
        best_label = np.where(better, proj.labels[g][k], best_label)
        alive &= ~stopped
        if not alive.any():
            break
    return rgb, T, acc, dnum, best_label


def _finish(rgb, T, acc, dnum, label, width, height) -> RenderOutput:
    depth = np.where(acc > 0, dnum / np.where(acc > 0, acc, 1.0), 0.0)
    label = np.where(acc >= LABEL_ALPHA_FLOOR, label, NO_LABEL).astype(np.uint8)
    return RenderOutput(
        rgb=rgb.reshape(height, width, 3),
        instance=label.reshape(height, width),
        depth=depth.reshape(height, width),
        transmittance=T.reshape(height, width),
        alpha=acc.reshape(height, width),
    )


def rasterize(proj: ProjectedGaussians, width: int, height: int, tile_size: int = 16) -> RenderOutput:
    """Composite projected splats into an image without any background."""
    rgb = np.zeros((height, width, 3))
    T = np.ones((height, width))
    acc = np.zeros((height, width))
    dnum = np.zeros((height, width))
    label = np.full((height, width), NO_LABEL, dtype=np.uint8)
    if len(proj):
        nx, _, tiles, splats = _tile_bins(proj, width, height, tile_size)
        starts = np.flatnonzero(np.r_[True, tiles[1:] != tiles[:-1]]) if tiles.size else []
        bounds = list(starts) + [tiles.size]
        for i in range(len(bounds) - 1):
            tile = int(tiles[bounds[i]])
            ids = splats[bounds[i]:bounds[i + 1]]
            ty, tx = divmod(tile, nx)
            ys = slice(ty * tile_size, min((ty + 1) * tile_size, height))
            xs = slice(tx * tile_size, min((tx + 1) * tile_size, width))
            gy, gx = np.mgrid[ys, xs]
            r, t, a, d, lb = _composite_tile(gx.ravel().astype(np.float64), gy.ravel().astype(np.float64), proj, ids)
            shp = gy.shape
            rgb[ys, xs] = r.reshape(shp + (3,))
            T[ys, xs] = t.reshape(shp)
            acc[ys, xs] = a.reshape(shp)
            dnum[ys, xs] = d.reshape(shp)
            label[ys, xs] = lb.reshape(shp)
    return _finish(rgb.reshape(-1, 3), T.ravel(), acc.ravel(), dnum.ravel(), label.ravel(), width, height)


def composite_background(out: RenderOutput, background: np.ndarray) -> RenderOutput:
    """``rgb + T · background``; ``background`` is an RGB triple or (H, W, 3) image."""
    bg = np.asarray(background, dtype=np.float64)
    rgb = out.rgb + out.transmittance[..., None] * bg
    return RenderOutput(rgb, out.instance, out.depth, out.transmittance, out.alpha)


def render(scene: FrameScene, config: RenderConfig = RenderConfig()) -> RenderOutput:
    """Render RGB, instance labels, expected depth and transmittance for one frame."""
    cam = scene.camera
    proj = project_gaussians(scene, config)
    out = rasterize(proj, cam.width, cam.height, config.tile_size)
    if scene.background is not None:
        return composite_background(out, scene.background)
    if any(config.background_color):
        return composite_background(out, config.background_color)
    return out


def render_sequence(
    scenes: Sequence[FrameScene], config: RenderConfig = RenderConfig(), workers: int = 1
) -> list[RenderOutput]:
    """Render frames in order; the result never depends on ``workers``."""

    def one(i_scene):
        i, scene = i_scene
        try:
            return render(scene, config)
        except Exception as exc:
            raise RuntimeError(f"frame {i}: {exc}") from exc

    if workers <= 1 or len(scenes) <= 1:
        return [one(x) for x in enumerate(scenes)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, enumerate(scenes)))
