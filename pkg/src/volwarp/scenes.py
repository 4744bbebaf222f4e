"""Procedural multi-view dataset: voxel shapes, orthographic renders, masks,
and exact ground-truth occupancy.

The renderer is a per-pixel ray march through the pose-rotated voxel grid
with nearest-cell binning: pixel (r, c) covers the normalized view-space
point (x, y) = (-1 + 2c/(S-1), 1 - 2r/(S-1)); the ray walks z from front to
back, un-rotates each sample into the grid frame, and takes the color of the
first occupied cell it lands in.  Background is exactly white where the mask
is zero.  No anti-aliasing and no lighting, so the renderer is exactly
reproducible by a brute-force oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .flows import RigidPose
from .volume import FeatureVolume, VolumeError, save_volume, load_volume

FAMILIES = ("box", "ell", "chairoid", "tee")
RAY_EXTENT = 1.8  # covers any rotation of the [-1,1] cube (sqrt(3) < 1.8)


@dataclass
class VoxelShape:
    """Binary occupancy grid with an RGB color per occupied cell."""

    occupancy: np.ndarray  # (G, G, G) bool, axes (z, y, x)
    color: np.ndarray      # (G, G, G, 3) float in [0, 1]
    family: str = ""

    def __post_init__(self) -> None:
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        self.color = np.asarray(self.color, dtype=np.float64)
        if not self.occupancy.any():
            raise VolumeError("shape has no occupied cells")
        if self.color.shape != self.occupancy.shape + (3,):
            raise VolumeError("color grid must be occupancy shape + (3,)")

    @property
    def grid(self) -> int:
        return self.occupancy.shape[0]

    def occupancy_volume(self) -> FeatureVolume:
        return FeatureVolume(self.occupancy.astype(np.float64)[..., None])


@dataclass
class MultiViewSample:
    """One scene: its shape plus posed renders with masks."""

    scene_id: int
    family: str
    shape: VoxelShape
    views: list[tuple[RigidPose, np.ndarray, np.ndarray]]  # (pose, image, mask)

    def __post_init__(self) -> None:
        if len(self.views) < 2:
            raise VolumeError("a multi-view sample needs at least 2 views")


def _position_color(occ: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Smooth position-coded colors: each channel follows one axis."""
    g = occ.shape[0]
    lo = rng.uniform(0.08, 0.35, size=3)
    hi = rng.uniform(0.55, 0.9, size=3)
    ramp = np.arange(g) / max(g - 1, 1)
    color = np.empty(occ.shape + (3,))
    color[..., 0] = lo[0] + (hi[0] - lo[0]) * ramp[None, None, :]   # x
    color[..., 1] = lo[1] + (hi[1] - lo[1]) * ramp[None, :, None]   # y
    color[..., 2] = lo[2] + (hi[2] - lo[2]) * ramp[:, None, None]   # z
    return color * occ[..., None]


def generate_shape(seed, family: str, grid: int = 8) -> VoxelShape:
    """Deterministic random shape of the given family on a ``grid^3`` lattice."""
    if family not in FAMILIES:
        raise VolumeError(f"unknown shape family {family!r}; choose from {FAMILIES}")
    if grid < 6:
        raise VolumeError("shape grid must be at least 6")
    rng = np.random.default_rng(seed)
    g = grid
    occ = np.zeros((g, g, g), dtype=bool)

    if family == "box":
        x0, y0, z0 = rng.integers(0, 3, size=3)
        x1 = rng.integers(g - 3, g)
        y1 = rng.integers(g - 3, g)
        z1 = rng.integers(g - 3, g)
        occ[z0 : z1 + 1, y0 : y1 + 1, x0 : x1 + 1] = True
    elif family == "ell":
        foot_h = int(rng.integers(2, max(3, g // 2)))
        wall_w = int(rng.integers(2, max(3, g // 2)))
        occ[1 : g - 1, 0:foot_h, 1 : g - 1] = True          # horizontal foot
        occ[1 : g - 1, 0 : g - 1, 1 : 1 + wall_w] = True    # vertical wall
    elif family == "tee":
        half = int(rng.integers(1, 3))
        cx = g // 2
        bar_y = int(rng.integers(g - 3, g - 1))
        occ[2 : g - 2, 0 : bar_y + 1, cx - half : cx + half] = True   # stem
        occ[2 : g - 2, bar_y : g - 1, 1 : g - 1] = True               # top bar
    elif family == "chairoid":
        # Seat slab with side/back panels below it: the under-seat cavity is
        # enclosed on three sides, so every silhouette sees it covered and it
        # sits inside the visual hull despite being empty.
        x0 = int(rng.integers(0, 2))
        x1 = int(rng.integers(g - 2, g))
        z0 = int(rng.integers(0, 2))
        z1 = int(rng.integers(g - 2, g))
        seat_y = int(rng.integers(2, g // 2 + 1))
        back_top = int(rng.integers(g - 2, g))
        occ[z0 : z1 + 1, seat_y, x0 : x1 + 1] = True                  # seat
        occ[z1, seat_y : back_top + 1, x0 : x1 + 1] = True            # back
        occ[z0 : z1 + 1, 0:seat_y, x0] = True                         # left panel
        occ[z0 : z1 + 1, 0:seat_y, x1] = True                         # right panel
        occ[z1, 0:seat_y, x0 : x1 + 1] = True                         # back panel
    return VoxelShape(occ, _position_color(occ, rng), family)


def _ray_z_samples(grid: int) -> np.ndarray:
    n = int(np.ceil(2 * RAY_EXTENT * (grid - 1))) + 1
    return np.linspace(RAY_EXTENT, -RAY_EXTENT, n)


def render_view(
    shape: VoxelShape, pose: RigidPose, image_size: int
) -> tuple[np.ndarray, np.ndarray]:
    """Render one orthographic view; returns (RGB image, binary mask)."""
    s = image_size
    g = shape.grid
    r, t = pose.matrix()
    rinv = r.T
    xs = -1.0 + 2.0 * np.arange(s) / (s - 1)
    ys = 1.0 - 2.0 * np.arange(s) / (s - 1)
    zs = _ray_z_samples(g)
    px, py, pz = np.meshgrid(xs, ys, zs, indexing="xy")  # (row, col, depth)
    px, py, pz = px - t[0], py - t[1], pz - t[2]
    # Componentwise so the arithmetic matches a scalar re-implementation bitwise.
    qx = rinv[0, 0] * px + rinv[0, 1] * py + rinv[0, 2] * pz
    qy = rinv[1, 0] * px + rinv[1, 1] * py + rinv[1, 2] * pz
    qz = rinv[2, 0] * px + rinv[2, 1] * py + rinv[2, 2] * pz
    half = (g - 1) / 2.0
    ix = np.floor((qx + 1.0) * half + 0.5).astype(np.int64)
    iy = np.floor((qy + 1.0) * half + 0.5).astype(np.int64)
    iz = np.floor((qz + 1.0) * half + 0.5).astype(np.int64)
    valid = (ix >= 0) & (ix < g) & (iy >= 0) & (iy < g) & (iz >= 0) & (iz < g)
    iz = np.clip(iz, 0, g - 1)
    iy = np.clip(iy, 0, g - 1)
    ix = np.clip(ix, 0, g - 1)
    hit = valid & shape.occupancy[iz, iy, ix]
    any_hit = hit.any(axis=2)
    first = np.argmax(hit, axis=2)[..., None]
    pick = lambda a: np.take_along_axis(a, first, axis=2)[..., 0]
    image = np.ones((s, s, 3))
    colors = shape.color[pick(iz), pick(iy), pick(ix)]
    image[any_hit] = colors[any_hit]
    mask = any_hit.astype(np.float64)
    return image, mask


def ring_poses(n_views: int, step_deg: float | None = None) -> list[RigidPose]:
    step = 360.0 / n_views if step_deg is None else step_deg
    return [RigidPose(azimuth=k * step, elevation=0.0) for k in range(n_views)]


def random_poses(n_views: int, rng: np.random.Generator) -> list[RigidPose]:
    return [
        RigidPose(azimuth=float(rng.uniform(0.0, 360.0)), elevation=float(rng.uniform(-20.0, 30.0)))
        for _ in range(n_views)
    ]


def make_dataset(
    seed: int,
    n_scenes: int,
    n_views: int,
    pose_sampling: str = "ring",
    ring_step: float | None = None,
    grid: int = 8,
    image_size: int = 32,
    families: tuple[str, ...] = ("chairoid", "box"),
) -> list[MultiViewSample]:
    """Deterministic list of rendered multi-view scenes.

    ``pose_sampling`` is "ring" (azimuths at regular intervals, elevation 0)
    or "random" (azimuth in [0, 360), elevation in [-20, 30]).
    """
    if n_views < 2:
        raise VolumeError("need at least 2 views per scene")
    if pose_sampling not in ("ring", "random"):
        raise VolumeError(f"unknown pose sampling {pose_sampling!r}")
    samples = []
    for i in range(n_scenes):
        family = families[i % len(families)]
        shape = generate_shape([seed, i], family, grid=grid)
        if pose_sampling == "ring":
            poses = ring_poses(n_views, ring_step)
        else:
            poses = random_poses(n_views, np.random.default_rng([seed, i, 1]))
        views = []
        for pose in poses:
            image, mask = render_view(shape, pose, image_size)
            views.append((pose, image, mask))
        samples.append(MultiViewSample(i, family, shape, views))
    return samples


def split_dataset(
    samples: list[MultiViewSample], test_fraction: float = 0.2
) -> tuple[list[MultiViewSample], list[MultiViewSample]]:
    """Deterministic split: the last ``test_fraction`` of scenes are held out."""
    n_test = int(round(len(samples) * test_fraction))
    if n_test == 0 or n_test == len(samples):
        raise VolumeError("split leaves one side empty")
    return samples[: len(samples) - n_test], samples[len(samples) - n_test :]


# ---------------------------------------------------------------------------
# On-disk layout: scenes/<id>/view_<k>.ppm, mask_<k>.pgm, poses.json,
# occupancy.vbv, plus a manifest.json at the root.

def _write_ppm(path: Path, image: np.ndarray) -> None:
    data = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P6\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _write_pgm(path: Path, mask: np.ndarray) -> None:
    data = np.clip(np.round(mask * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{data.shape[1]} {data.shape[0]}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def _read_pnm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"P5", b"P6"):
            raise VolumeError(f"unsupported PNM magic {magic!r} in {path}")
        w, h = (int(v) for v in f.readline().split())
        maxval = int(f.readline())
        channels = 3 if magic == b"P6" else 1
        data = np.frombuffer(f.read(w * h * channels), dtype=np.uint8)
    arr = data.reshape((h, w, 3) if channels == 3 else (h, w)).astype(np.float64) / maxval
    return arr


def save_dataset(root, samples: list[MultiViewSample], test_fraction: float = 0.2) -> None:
    root = Path(root)
    (root / "scenes").mkdir(parents=True, exist_ok=True)
    n_test = int(round(len(samples) * test_fraction))
    manifest = {"scenes": [], "n_views": len(samples[0].views) if samples else 0}
    for i, sample in enumerate(samples):
        scene_dir = root / "scenes" / f"{sample.scene_id:05d}"
        scene_dir.mkdir(parents=True, exist_ok=True)
        poses = []
        for k, (pose, image, mask) in enumerate(sample.views):
            _write_ppm(scene_dir / f"view_{k}.ppm", image)
            _write_pgm(scene_dir / f"mask_{k}.pgm", mask)
            poses.append(
                {
                    "azimuth": pose.azimuth,
                    "elevation": pose.elevation,
                    "translation": list(pose.translation),
                }
            )
        with open(scene_dir / "poses.json", "w", encoding="utf-8") as f:
            json.dump(poses, f, indent=2, sort_keys=True)
            f.write("\n")
        save_volume(scene_dir / "occupancy.vbv", sample.shape.occupancy_volume())
        split = "test" if i >= len(samples) - n_test else "train"
        manifest["scenes"].append({"id": sample.scene_id, "family": sample.family, "split": split})
    with open(root / "manifest.json", "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class LoadedScene:
    """A scene read back from disk (no color grid, only the occupancy)."""

    scene_id: int
    family: str
    split: str
    views: list[tuple[RigidPose, np.ndarray, np.ndarray]]
    occupancy: np.ndarray  # (G, G, G) float


def load_dataset(root) -> list[LoadedScene]:
    root = Path(root)
    with open(root / "manifest.json", "r", encoding="utf-8") as f:
        manifest = json.load(f)
    scenes = []
    for entry in manifest["scenes"]:
        scene_dir = root / "scenes" / f"{entry['id']:05d}"
        with open(scene_dir / "poses.json", "r", encoding="utf-8") as f:
            poses = json.load(f)
        views = []
        for k, p in enumerate(poses):
            pose = RigidPose(p["azimuth"], p["elevation"], np.asarray(p["translation"]))
            image = _read_pnm(scene_dir / f"view_{k}.ppm")
            mask = _read_pnm(scene_dir / f"mask_{k}.pgm")
            views.append((pose, image, mask))
        occ = load_volume(scene_dir / "occupancy.vbv").data[..., 0]
        scenes.append(LoadedScene(entry["id"], entry["family"], entry["split"], views, occ))
    return scenes
