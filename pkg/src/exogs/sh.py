"""Real spherical harmonics in the layout used by 3DGS splat files (degree <= 3)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

BASIS_SIZES = {0: 1, 1: 4, 2: 9, 3: 16}


def degree_for(n_basis: int) -> int:
    for d, b in BASIS_SIZES.items():
        if b == n_basis:
            return d
    raise ValueError(f"{n_basis} coefficients is not a complete SH degree")


def basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Basis values (..., B) for unit directions (..., 3)."""
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full_like(x, C0)]
    if degree >= 1:
        out += [-C1 * y, C1 * z, -C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            C2[0] * x * y,
            C2[1] * y * z,
            C2[2] * (2.0 * zz - xx - yy),
            C2[3] * x * z,
            C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            C3[0] * y * (3.0 * xx - yy),
            C3[1] * x * y * z,
            C3[2] * y * (4.0 * zz - xx - yy),
            C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
            C3[4] * x * (4.0 * zz - xx - yy),
            C3[5] * z * (xx - yy),
            C3[6] * x * (xx - 3.0 * yy),
        ]
    return np.stack(out, axis=-1)


def evaluate(coeffs: np.ndarray, dirs: np.ndarray, degree: int | None = None) -> np.ndarray:
    """Decoded RGB (N, 3) before clamping: ``0.5 + Σ_b Y_b(d) c_b``.

    ``coeffs`` is (N, 3, B); bands above ``degree`` are ignored.
    """
    full = degree_for(coeffs.shape[-1])
    deg = full if degree is None else min(degree, full)
    if deg == 0:
        return C0 * coeffs[:, :, 0] + 0.5
    n = BASIS_SIZES[deg]
    y = basis(dirs, deg)
    return np.einsum("ncb,nb->nc", coeffs[:, :, :n], y) + 0.5


@lru_cache(maxsize=None)
def _probe_dirs() -> np.ndarray:
    rng = np.random.default_rng(0)
    d = rng.normal(size=(64, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def rotation_matrices(r: np.ndarray, degree: int) -> list[np.ndarray]:
    """Per-band matrices ``D_l`` with ``Y_l(R d) = D_l Y_l(d)``.

    Each band spans a rotation-invariant subspace, so ``D_l`` is recovered
    exactly (to rounding) by least squares over a fixed set of probe
    directions.
    """
    d = _probe_dirs()
    a = basis(d, degree)
    b = basis(d @ np.asarray(r).T, degree)
    mats = []
    for l in range(1, degree + 1):
        sl = slice(BASIS_SIZES[l - 1], BASIS_SIZES[l])
        dt, *_ = np.linalg.lstsq(a[:, sl], b[:, sl], rcond=None)
        mats.append(dt.T)
    return mats


def rotate(coeffs: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Coefficients of the color field rotated by ``r``: new(R d) == old(d)."""
    deg = degree_for(coeffs.shape[-1])
    out = coeffs.copy()
    for l, dmat in enumerate(rotation_matrices(r, deg), start=1):
        sl = slice(BASIS_SIZES[l - 1], BASIS_SIZES[l])
        out[:, :, sl] = coeffs[:, :, sl] @ dmat.T
    return out
