"""3D reconstruction protocol: optimal-threshold IoU, view recycling, and
isosurface mesh export.

Occupancy volumes are C=1 feature volumes in the canonical frame (the
dataset's identity pose).  View recycling synthesizes extra views from the
model's own output, re-encodes them, warps every bottleneck into the
canonical frame, and averages before decoding occupancy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from skimage import measure

from .flows import RigidPose, relative_flow
from .net import TbnModel, decode_image, decode_occupancy, encode
from .scenes import random_poses
from .volume import FeatureVolume, VolumeError, aggregate, resample

OccupancyVolume = FeatureVolume  # C=1 by convention

THRESHOLD_SWEEP = 64
CANONICAL_POSE = RigidPose(0.0, 0.0)


@dataclass
class IoUReport:
    """Mean IoU at the best swept threshold, plus the per-scene breakdown."""

    mean_iou: float
    threshold: float
    per_scene: list[float]
    views_added: int = 0
    mode: str = "none"

    def to_dict(self) -> dict:
        return {
            "mean_iou": self.mean_iou,
            "threshold": self.threshold,
            "per_scene": self.per_scene,
            "views_added": self.views_added,
            "mode": self.mode,
        }


def iou(pred: FeatureVolume | np.ndarray, truth: np.ndarray, threshold: float) -> float:
    """IoU of ``pred > threshold`` against a binary grid; empty vs empty is 1."""
    p = pred.data[..., 0] if isinstance(pred, FeatureVolume) else np.asarray(pred)
    t = np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise VolumeError(f"IoU shape mismatch: {p.shape} vs {t.shape}")
    binary = p > threshold
    union = np.count_nonzero(binary | t)
    if union == 0:
        return 1.0
    return np.count_nonzero(binary & t) / union


def sweep_thresholds(n: int = THRESHOLD_SWEEP) -> np.ndarray:
    return np.arange(1, n + 1) / (n + 1)


def optimal_threshold_iou(
    preds: list[FeatureVolume | np.ndarray],
    truths: list[np.ndarray],
    views_added: int = 0,
    mode: str = "none",
) -> IoUReport:
    """Sweep 64 uniform thresholds in (0, 1); report the best mean IoU."""
    if not preds or len(preds) != len(truths):
        raise VolumeError("optimal_threshold_iou needs matching nonempty lists")
    taus = sweep_thresholds()
    means = np.empty(len(taus))
    table = np.empty((len(taus), len(preds)))
    for i, tau in enumerate(taus):
        table[i] = [iou(p, t, tau) for p, t in zip(preds, truths)]
        means[i] = table[i].mean()
    best = int(np.argmax(means))
    return IoUReport(
        mean_iou=float(means[best]),
        threshold=float(taus[best]),
        per_scene=[float(v) for v in table[best]],
        views_added=views_added,
        mode=mode,
    )


def regular_recycle_poses(input_pose: RigidPose, n_extra: int) -> list[RigidPose]:
    """Extra azimuths at equal spacing around the vertical axis, elevation 0."""
    step = 360.0 / (n_extra + 1)
    return [RigidPose(azimuth=input_pose.azimuth + step * (k + 1), elevation=0.0) for k in range(n_extra)]


def reconstruct_with_recycling(
    model: TbnModel,
    input_image: np.ndarray,
    input_pose: RigidPose,
    n_extra: int,
    mode: str = "regular",
    rng: np.random.Generator | None = None,
    extra_views: list[tuple[np.ndarray, RigidPose]] | None = None,
) -> OccupancyVolume:
    """Single-image occupancy reconstruction with 0-9 recycled views.

    Modes: "regular" synthesizes views at equal azimuth spacing (elevation 0),
    "random" at uniform azimuth/elevation, "real" uses supplied extra views.
    """
    if not 0 <= n_extra <= 9:
        raise VolumeError("n_extra must be in [0, 9]")
    if mode not in ("regular", "random", "real"):
        raise VolumeError(f"invalid recycling mode {mode!r}")
    dims = (model.arch.bottleneck_side,) * 3
    base = encode(model, input_image)
    views: list[tuple[FeatureVolume, RigidPose]] = [(base, input_pose)]
    if mode == "real":
        for image, pose in (extra_views or [])[:n_extra]:
            views.append((encode(model, image), pose))
    else:
        if mode == "regular":
            poses = regular_recycle_poses(input_pose, n_extra)
        else:
            poses = random_poses(n_extra, rng if rng is not None else np.random.default_rng(0))
        for pose in poses:
            flow = relative_flow(dims, input_pose, pose)
            synthesized = decode_image(model, resample(base, flow))
            views.append((encode(model, synthesized[..., :3]), pose))
    canonical = [
        resample(vol, relative_flow(dims, pose, CANONICAL_POSE)) for vol, pose in views
    ]
    return decode_occupancy(model, aggregate(canonical))


# ---------------------------------------------------------------------------
# Isosurface extraction (classic marching cubes via scikit-image).

def extract_mesh(
    occ: OccupancyVolume | np.ndarray, threshold: float
) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate the iso-surface of a min-max normalized occupancy.

    Returns (vertices, faces); vertices are in normalized volume coordinates
    (xyz order, each in [-1, 1]).  An empty iso-set yields an empty mesh.
    """
    if not 0.0 < threshold < 1.0:
        raise VolumeError("mesh threshold must lie in (0, 1)")
    values = occ.data[..., 0] if isinstance(occ, FeatureVolume) else np.asarray(occ, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi > lo:
        values = (values - lo) / (hi - lo)
    else:
        values = np.zeros_like(values)
    if not (values.min() < threshold < values.max()):
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    # Pad with empty space so surfaces at the volume border stay closed.
    padded = np.pad(values, 1)
    verts, faces, _, _ = measure.marching_cubes(padded, level=threshold, method="lorensen")
    verts = verts - 1.0  # undo padding offset; verts are (z, y, x) grid indices
    g = np.array(values.shape, dtype=np.float64)
    norm = np.empty_like(verts)
    for axis in range(3):
        n = g[axis]
        norm[:, axis] = 0.0 if n == 1 else -1.0 + 2.0 * verts[:, axis] / (n - 1)
    # Surfaces around boundary cells overhang the cell-center cube by half a
    # cell; flatten them onto the wall so vertices stay inside [-1, 1]^3.
    norm = np.clip(norm, -1.0, 1.0)
    # reorder (z, y, x) -> (x, y, z)
    return norm[:, ::-1].copy(), faces.astype(np.int64)


def save_obj(path, verts: np.ndarray, faces: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for v in verts:
            f.write(f"v {v[0]:.6f} {v[1]:.6f} {v[2]:.6f}\n")
        for face in faces:
            f.write(f"f {face[0] + 1} {face[1] + 1} {face[2] + 1}\n")


# ---------------------------------------------------------------------------
# Report rendering: JSON plus a plain-text (views-added x mode) table.

def format_iou_table(reports: list[IoUReport]) -> str:
    lines = [f"{'views added':>12} {'mode':>10} {'mean IoU':>10} {'threshold':>10}"]
    for r in sorted(reports, key=lambda r: (r.views_added, r.mode)):
        lines.append(f"{r.views_added:>12d} {r.mode:>10} {r.mean_iou:>10.4f} {r.threshold:>10.3f}")
    return "\n".join(lines) + "\n"


def save_iou_reports(json_path, text_path, reports: list[IoUReport]) -> None:
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump([r.to_dict() for r in reports], f, indent=2, sort_keys=True)
        f.write("\n")
    with open(text_path, "w", encoding="utf-8") as f:
        f.write(format_iou_table(reports))
