"""Shared brute-force oracles, independent of the library implementations."""

from __future__ import annotations

import numpy as np
import pytest


def rot_y(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def axis_centers_oracle(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def azimuth_permutation_oracle(volume: np.ndarray, quarter_turns: int) -> np.ndarray:
    """Contents of a cubic volume after an azimuth rotation of 90 * k degrees.

    Derived purely from integer index geometry: a +90 azimuth view change
    rotates content by R_y(-90), taking input cell (a, b, c) to output cell
    (c, b, N-1-a) in (z, y, x) index order.
    """
    out = volume
    n = volume.shape[0]
    for _ in range(quarter_turns % 4):
        nxt = np.empty_like(out)
        for a in range(n):
            for b in range(n):
                for c in range(n):
                    nxt[c, b, n - 1 - a] = out[a, b, c]
        out = nxt
    return out.copy()


def raymarch_render_oracle(occupancy, color, pose, image_size):
    """Loop-based orthographic renderer: the definition the fast renderer must
    reproduce exactly (same formulas, scalar arithmetic)."""
    g = occupancy.shape[0]
    s = image_size
    r_mat, t = pose.matrix()
    rinv = r_mat.T
    n = int(np.ceil(2 * 1.8 * (g - 1))) + 1
    zs = np.linspace(1.8, -1.8, n)
    half = (g - 1) / 2.0
    image = np.ones((s, s, 3))
    mask = np.zeros((s, s))
    for row in range(s):
        y = 1.0 - 2.0 * row / (s - 1)
        for col in range(s):
            x = -1.0 + 2.0 * col / (s - 1)
            for z in zs:
                px, py, pz = x - t[0], y - t[1], z - t[2]
                qx = rinv[0, 0] * px + rinv[0, 1] * py + rinv[0, 2] * pz
                qy = rinv[1, 0] * px + rinv[1, 1] * py + rinv[1, 2] * pz
                qz = rinv[2, 0] * px + rinv[2, 1] * py + rinv[2, 2] * pz
                ix = int(np.floor((qx + 1.0) * half + 0.5))
                iy = int(np.floor((qy + 1.0) * half + 0.5))
                iz = int(np.floor((qz + 1.0) * half + 0.5))
                if 0 <= ix < g and 0 <= iy < g and 0 <= iz < g and occupancy[iz, iy, ix]:
                    mask[row, col] = 1.0
                    image[row, col] = color[iz, iy, ix]
                    break
    return image, mask


def visual_hull_oracle(views, grid: int, image_size: int) -> np.ndarray:
    """Back-project every view's mask: a cell survives unless some view sees
    its projected center on a background pixel.  A view whose frame does not
    cover the cell carries no evidence and leaves it untouched (standard
    space-carving convention)."""
    s = image_size
    hull = np.ones((grid, grid, grid), dtype=bool)
    centers = axis_centers_oracle(grid)
    for pose, mask in views:
        r_mat, t = pose.matrix()
        for a in range(grid):
            for b in range(grid):
                for c in range(grid):
                    if not hull[a, b, c]:
                        continue
                    p = r_mat @ np.array([centers[c], centers[b], centers[a]]) + t
                    col = int(np.floor((p[0] + 1.0) * (s - 1) / 2.0 + 0.5))
                    row = int(np.floor((1.0 - p[1]) * (s - 1) / 2.0 + 0.5))
                    if 0 <= row < s and 0 <= col < s and mask[row, col] < 0.5:
                        hull[a, b, c] = False
    return hull


def ssim_oracle(a: np.ndarray, b: np.ndarray, window: int = 7) -> float:
    """Direct SSIM-loss formula over all valid windows, via explicit loops."""
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    h, w, ch = a.shape
    values = []
    for ci in range(ch):
        for i in range(h - window + 1):
            for j in range(w - window + 1):
                wa = a[i : i + window, j : j + window, ci]
                wb = b[i : i + window, j : j + window, ci]
                mu_a, mu_b = wa.mean(), wb.mean()
                va = (wa * wa).mean() - mu_a ** 2
                vb = (wb * wb).mean() - mu_b ** 2
                cov = (wa * wb).mean() - mu_a * mu_b
                values.append(
                    ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                    / ((mu_a ** 2 + mu_b ** 2 + c1) * (va + vb + c2))
                )
    return 1.0 - float(np.mean(values))


def bce_sum_oracle(pred: np.ndarray, target: np.ndarray, eps: float = 1e-6) -> float:
    total = 0.0
    for p, t in zip(pred.reshape(-1), target.reshape(-1)):
        p = min(max(p, eps), 1.0 - eps)
        total += -(t * np.log(p) + (1.0 - t) * np.log(1.0 - p))
    return float(total)


def marching_case_triangle_count(binary: np.ndarray) -> int:
    """Expected classic marching-cubes triangle count for box-like solids.

    Enumerates every dual cell of the zero-padded grid and counts triangles
    per case: 1 inside corner -> 1, an adjacent inside pair -> 2, a coplanar
    inside quad -> 2 (two per exposed face).  Raises on any other nonempty
    configuration, which box-like solids never produce.
    """
    occ = np.pad(binary.astype(bool), 1)
    d, h, w = occ.shape
    total = 0
    for a in range(d - 1):
        for b in range(h - 1):
            for c in range(w - 1):
                corners = occ[a : a + 2, b : b + 2, c : c + 2]
                k = int(corners.sum())
                if k in (0, 8):
                    continue
                if k == 1:
                    total += 1
                elif k == 2:
                    pos = np.argwhere(corners)
                    if np.abs(pos[0] - pos[1]).sum() != 1:
                        raise AssertionError("non-adjacent pair: not a box-like solid")
                    total += 2
                elif k == 4:
                    pos = np.argwhere(corners)
                    if not any((pos[:, ax] == pos[0, ax]).all() for ax in range(3)):
                        raise AssertionError("non-coplanar quad: not a box-like solid")
                    total += 2
                else:
                    raise AssertionError(f"unexpected case with {k} corners")
    return total


def euler_characteristic(verts: np.ndarray, faces: np.ndarray) -> int:
    edges = set()
    for f in faces:
        for i in range(3):
            edges.add(tuple(sorted((int(f[i]), int(f[(i + 1) % 3])))))
    return len(verts) - len(edges) + len(faces)


def mesh_is_closed(faces: np.ndarray) -> bool:
    """Every edge must be shared by exactly two triangles."""
    counts: dict[tuple[int, int], int] = {}
    for f in faces:
        for i in range(3):
            e = tuple(sorted((int(f[i]), int(f[(i + 1) % 3]))))
            counts[e] = counts.get(e, 0) + 1
    return all(v == 2 for v in counts.values())


@pytest.fixture
def rng():
    return np.random.default_rng(0)
