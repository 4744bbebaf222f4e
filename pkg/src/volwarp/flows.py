"""Flow-field constructors: rigid view changes, creative warps, composition.

All builders produce output-to-input flows (see :mod:`volwarp.volume`): to
show content transformed by a rigid map ``T``, every output cell samples the
input at ``T^-1(p)``.  Azimuth rotates about +y, elevation about +x, with the
elevation applied first and the azimuth second; increasing azimuth orbits the
viewpoint so the sampled coordinate is ``R_y(az) @ R_x(el) @ p``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .volume import FeatureVolume, FlowField, VolumeError, axis_centers, cell_centers

AXES = {"x": 0, "y": 1, "z": 2}


def _rot_y(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_x(degrees: float) -> np.ndarray:
    a = np.deg2rad(degrees)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


@dataclass
class RigidPose:
    """Viewpoint given as azimuth/elevation degrees plus a translation."""

    azimuth: float = 0.0
    elevation: float = 0.0
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.translation.shape != (3,):
            raise VolumeError(f"translation must be a 3-vector, got {self.translation.shape}")

    def rotation(self) -> np.ndarray:
        return _rot_y(-self.azimuth) @ _rot_x(-self.elevation)

    def matrix(self) -> tuple[np.ndarray, np.ndarray]:
        """The rigid map (R, t): p_view = R @ p_canonical + t."""
        return self.rotation(), self.translation


def relative_transform(
    from_pose: RigidPose, to_pose: RigidPose
) -> tuple[np.ndarray, np.ndarray]:
    """Rigid map (R, t) taking the ``from_pose`` frame to the ``to_pose`` frame."""
    rf, tf = from_pose.matrix()
    rt, tt = to_pose.matrix()
    r = rt @ rf.T
    return r, tt - r @ tf


def transform_flow(dims: tuple[int, int, int], r: np.ndarray, t: np.ndarray) -> FlowField:
    """Flow sampling at ``T^-1(p)`` for the rigid map ``T(p) = R p + t``."""
    p = cell_centers(dims)
    coords = np.einsum("ij,dhwj->dhwi", r.T, p - np.asarray(t, dtype=np.float64))
    return FlowField(coords)


def rigid_flow(dims: tuple[int, int, int], relative_pose: RigidPose) -> FlowField:
    """Flow for a rigid view change given as a relative pose."""
    r, t = relative_pose.matrix()
    return transform_flow(dims, r, t)


def relative_flow(dims: tuple[int, int, int], from_pose: RigidPose, to_pose: RigidPose) -> FlowField:
    """Flow transforming a volume encoded at ``from_pose`` into the ``to_pose`` frame."""
    r, t = relative_transform(from_pose, to_pose)
    return transform_flow(dims, r, t)


@dataclass
class StretchSpec:
    """Linear re-sampling of one axis: output slice ``[lo, hi]`` reads input
    coordinates spread evenly from ``a`` to ``b``."""

    axis: str
    a: float
    b: float
    lo: int | None = None
    hi: int | None = None

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise VolumeError(f"unknown axis {self.axis!r}")
        if not (np.isfinite(self.a) and np.isfinite(self.b)):
            raise VolumeError("stretch endpoints must be finite")


@dataclass
class TwistSpec:
    """Opposite rotations about +y above and below the plane ``y = split_y``."""

    split_y: float
    alpha: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.alpha):
            raise VolumeError("twist angle must be finite")


def stretch_flow(dims: tuple[int, int, int], spec: StretchSpec) -> FlowField:
    """Stretch or compress content along one axis.

    The ``n`` output positions of the slice sample input coordinates
    ``a + (b - a) / (n - 1) * i``; cells outside the slice and the other two
    axes pass through unchanged.
    """
    axis = AXES[spec.axis]
    size = dims[(2, 1, 0)[axis]]  # dims is (D,H,W) = (z,y,x)
    lo = 0 if spec.lo is None else int(spec.lo)
    hi = size - 1 if spec.hi is None else int(spec.hi)
    if not (0 <= lo <= hi < size):
        raise VolumeError(f"slice [{lo}, {hi}] out of range for axis of size {size}")
    n = hi - lo + 1
    positions = axis_centers(size).copy()
    if n == 1:
        if spec.a != spec.b:
            raise VolumeError("single-cell slice needs a == b (n - 1 = 0 denominator)")
        positions[lo] = spec.a
    else:
        positions[lo : hi + 1] = spec.a + (spec.b - spec.a) / (n - 1) * np.arange(n)
    coords = cell_centers(dims).copy()
    if axis == 0:  # x varies along the width axis of the (D,H,W) grid
        coords[..., 0] = positions[None, None, :]
    elif axis == 1:
        coords[..., 1] = positions[None, :, None]
    else:
        coords[..., 2] = positions[:, None, None]
    return FlowField(coords)


def twist_flow(dims: tuple[int, int, int], spec: TwistSpec) -> FlowField:
    """Twist about the vertical axis: cells above ``split_y`` sample through
    ``R_y(-alpha)``, cells at or below through ``R_y(+alpha)``."""
    p = cell_centers(dims)
    above = np.einsum("ij,dhwj->dhwi", _rot_y(-spec.alpha), p)
    below = np.einsum("ij,dhwj->dhwi", _rot_y(spec.alpha), p)
    mask = (p[..., 1] > spec.split_y)[..., None]
    return FlowField(np.where(mask, above, below))


def reflect_merge_flow(dims: tuple[int, int, int], plane_axis: str, keep_side: int) -> FlowField:
    """Mirror one half of the volume onto the other across a center plane.

    ``plane_axis`` is ``x`` or ``z`` (the mirror plane passes through the
    volume center, normal to that axis); ``keep_side`` is +1 or -1.  Kept
    cells sample themselves, discarded cells sample their mirror image.
    """
    if plane_axis not in ("x", "z"):
        raise VolumeError(f"reflect plane axis must be x or z, got {plane_axis!r}")
    if keep_side not in (1, -1):
        raise VolumeError(f"keep_side must be +1 or -1, got {keep_side!r}")
    axis = AXES[plane_axis]
    coords = cell_centers(dims).copy()
    discard = coords[..., axis] * keep_side < 0
    coords[..., axis] = np.where(discard, -coords[..., axis], coords[..., axis])
    return FlowField(coords)


def merge_volumes(top: FeatureVolume, bottom: FeatureVolume, split_y: float) -> FeatureVolume:
    """Copy cells above ``split_y`` from ``top`` and the rest from ``bottom``."""
    if top.data.shape != bottom.data.shape:
        raise VolumeError(f"merge shape mismatch: {top.data.shape} vs {bottom.data.shape}")
    yc = cell_centers(top.dims)[..., 1]
    mask = (yc > split_y)[..., None]
    return FeatureVolume(np.where(mask, top.data, bottom.data))


def sample_coordinate_field(field_coords: np.ndarray, at: np.ndarray) -> np.ndarray:
    """Trilinear lookup of a coordinate field with linear extrapolation.

    Unlike feature resampling, coordinate fields are geometric maps, so
    samples outside the grid extend the boundary cell linearly instead of
    fading to zero.  This keeps composition exact for affine flows.
    """
    out = np.empty(at.shape[:3] + (3,))
    d, h, w = field_coords.shape[:3]
    fx = (at[..., 0] + 1.0) * ((w - 1) / 2.0) if w > 1 else np.zeros(at.shape[:3])
    fy = (at[..., 1] + 1.0) * ((h - 1) / 2.0) if h > 1 else np.zeros(at.shape[:3])
    fz = (at[..., 2] + 1.0) * ((d - 1) / 2.0) if d > 1 else np.zeros(at.shape[:3])
    bx = np.clip(np.floor(fx), 0, max(w - 2, 0)).astype(np.int64)
    by = np.clip(np.floor(fy), 0, max(h - 2, 0)).astype(np.int64)
    bz = np.clip(np.floor(fz), 0, max(d - 2, 0)).astype(np.int64)
    tx, ty, tz = fx - bx, fy - by, fz - bz
    acc = np.zeros(at.shape[:3] + (3,))
    for cz in (0, 1):
        wz = tz if cz else 1.0 - tz
        iz = np.minimum(bz + cz, d - 1)
        for cy in (0, 1):
            wy = ty if cy else 1.0 - ty
            iy = np.minimum(by + cy, h - 1)
            for cx in (0, 1):
                wx = tx if cx else 1.0 - tx
                ix = np.minimum(bx + cx, w - 1)
                acc += (wz * wy * wx)[..., None] * field_coords[iz, iy, ix, :]
    out[...] = acc
    return out


def compose_flows(first: FlowField, second: FlowField) -> FlowField:
    """Single flow approximating a resample by ``first`` followed by ``second``.

    ``output(p) = first sampled (trilinearly) at second(p)``.  When ``first``
    is the identity flow the composition returns ``second`` unchanged (the
    neutral element, kept exact).
    """
    if np.array_equal(first.coords, cell_centers(first.dims)):
        return FlowField(second.coords.copy())
    return FlowField(sample_coordinate_field(first.coords, second.coords))


# ---------------------------------------------------------------------------
# Manipulation scripts: the JSON vocabulary shared by the CLI and the service.

def script_entry_to_flow(dims: tuple[int, int, int], entry: dict) -> FlowField:
    """Build the flow for one ``{type, ...params}`` script entry."""
    if not isinstance(entry, dict) or "type" not in entry:
        raise VolumeError(f"script entry must be an object with a 'type': {entry!r}")
    kind = entry["type"]
    if kind == "rigid":
        pose = RigidPose(
            azimuth=float(entry.get("azimuth", 0.0)),
            elevation=float(entry.get("elevation", 0.0)),
            translation=np.asarray(entry.get("translation", [0.0, 0.0, 0.0]), dtype=np.float64),
        )
        return rigid_flow(dims, pose)
    if kind == "stretch":
        spec = StretchSpec(
            axis=entry.get("axis", "y"),
            a=float(entry["a"]),
            b=float(entry["b"]),
            lo=entry.get("lo"),
            hi=entry.get("hi"),
        )
        return stretch_flow(dims, spec)
    if kind == "twist":
        return twist_flow(dims, TwistSpec(split_y=float(entry.get("split_y", 0.0)), alpha=float(entry["alpha"])))
    if kind == "reflect":
        side = entry.get("keep", "+")
        keep = 1 if side in (1, "+", "+1", "positive") else -1 if side in (-1, "-", "-1", "negative") else None
        if keep is None:
            raise VolumeError(f"reflect keep side must be '+' or '-', got {side!r}")
        return reflect_merge_flow(dims, entry.get("axis", "x"), keep)
    raise VolumeError(f"unknown script entry type {kind!r}")


def script_flow(dims: tuple[int, int, int], script: list[dict]) -> FlowField | None:
    """Compose an ordered manipulation script into one flow.

    Entries apply in list order (entry 0 first).  Returns None for an empty
    script so callers can skip the resample entirely.
    """
    flow: FlowField | None = None
    for entry in script:
        step = script_entry_to_flow(dims, entry)
        flow = step if flow is None else compose_flows(flow, step)
    return flow


def load_script(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as f:
        script = json.load(f)
    if not isinstance(script, list):
        raise VolumeError("manipulation script must be a JSON list")
    return script


def save_script(path, script: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(script, f, indent=2)
        f.write("\n")
