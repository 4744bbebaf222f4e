"""Feature volumes, flow fields, and differentiable trilinear resampling.

Conventions used throughout the package:

* A feature volume is a dense grid of shape ``(D, H, W, C)`` storing one
  C-vector per cell, laid out row-major (z-major, then y, then x, then
  channel).  Axis 0 is depth (z), axis 1 is height (y), axis 2 is width (x).
* Normalized volume coordinates live in ``[-1, 1]`` per axis with ``(0, 0, 0)``
  at the volume center: +x right, +y up, +z along the optical axis toward the
  camera.  The center of cell ``i`` along an axis with ``N`` cells is
  ``-1 + 2*i/(N-1)`` (0 for ``N == 1``).
* A flow field assigns to every *output* cell the 3D point ``(x, y, z)`` of
  the *input* volume to sample, so flows always map output to input.
* Sampling outside the volume contributes zeros: values fade linearly to zero
  over one cell spacing past the boundary cell centers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

# Fractional sample positions closer than this to a grid plane are snapped
# onto it, so that grid-aligned flows (identity, 90-degree rotations) resolve
# to exact cell hits despite trig/arithmetic roundoff.
SNAP_EPS = 1e-9

VOLUME_MAGIC = b"VBV1\n"


class VolumeError(ValueError):
    """Raised for malformed volumes, flows, or incompatible shapes."""


class NumericError(VolumeError):
    """Raised when a computation produces non-finite values (exit code 3)."""


@dataclass
class FeatureVolume:
    """A ``(D, H, W, C)`` grid of feature vectors."""

    data: np.ndarray

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 4:
            raise VolumeError(f"volume data must be 4D (D,H,W,C), got shape {self.data.shape}")
        if min(self.data.shape) < 1:
            raise VolumeError(f"volume axes must all be >= 1, got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise VolumeError("volume contains non-finite values")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass
class FlowField:
    """Per-output-cell sample coordinates, shape ``(D, H, W, 3)``, xyz order.

    Coordinates may lie outside ``[-1, 1]^3``; out-of-bounds samples are
    well defined (they fade to zero).  Non-finite coordinates are rejected at
    resample time, not here, so flows can be assembled incrementally.
    """

    coords: np.ndarray

    def __post_init__(self) -> None:
        self.coords = np.asarray(self.coords, dtype=np.float64)
        if self.coords.ndim != 4 or self.coords.shape[3] != 3:
            raise VolumeError(f"flow coords must have shape (D,H,W,3), got {self.coords.shape}")
        if min(self.coords.shape[:3]) < 1:
            raise VolumeError(f"flow axes must all be >= 1, got {self.coords.shape}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.coords.shape[:3]


def axis_centers(n: int) -> np.ndarray:
    """Cell center coordinates along one axis of size ``n``."""
    if n == 1:
        return np.zeros(1)
    return -1.0 + 2.0 * np.arange(n) / (n - 1)


def cell_centers(dims: tuple[int, int, int]) -> np.ndarray:
    """``(D, H, W, 3)`` array of cell center coordinates in xyz order."""
    d, h, w = dims
    zc = axis_centers(d)
    yc = axis_centers(h)
    xc = axis_centers(w)
    out = np.empty((d, h, w, 3))
    out[..., 0] = xc[None, None, :]
    out[..., 1] = yc[None, :, None]
    out[..., 2] = zc[:, None, None]
    return out


def identity_flow(dims: tuple[int, int, int]) -> FlowField:
    """Flow that samples every cell at its own center (exact identity)."""
    return FlowField(cell_centers(dims))


def coord_to_index(coord: np.ndarray, n: int) -> np.ndarray:
    """Map normalized coordinates to fractional cell indices along one axis."""
    if n == 1:
        return np.zeros_like(coord)
    return (coord + 1.0) * ((n - 1) / 2.0)


def _snapped_base_and_frac(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nearest = np.round(idx)
    snapped = np.where(np.abs(idx - nearest) < SNAP_EPS, nearest, idx)
    base = np.floor(snapped)
    return base.astype(np.int64), snapped - base


def _check_flow_finite(coords: np.ndarray) -> None:
    bad = ~np.all(np.isfinite(coords), axis=-1)
    if bad.any():
        cell = np.argwhere(bad)[0]
        raise VolumeError(f"non-finite flow coordinate at cell (z={cell[0]}, y={cell[1]}, x={cell[2]})")


def _corner_terms(dims: tuple[int, int, int], coords: np.ndarray):
    """Shared setup for resampling: base indices, weights, validity masks.

    Yields, for each of the 8 interpolation corners, the clipped gather
    indices, the in-grid mask, the trilinear weight, and the per-axis weight
    factors (needed for flow gradients).
    """
    dd, hh, ww = dims
    fx = coord_to_index(coords[..., 0], ww)
    fy = coord_to_index(coords[..., 1], hh)
    fz = coord_to_index(coords[..., 2], dd)
    bx, tx = _snapped_base_and_frac(fx)
    by, ty = _snapped_base_and_frac(fy)
    bz, tz = _snapped_base_and_frac(fz)
    for cz in (0, 1):
        wz = tz if cz else 1.0 - tz
        iz = bz + cz
        vz = (iz >= 0) & (iz < dd)
        for cy in (0, 1):
            wy = ty if cy else 1.0 - ty
            iy = by + cy
            vy = (iy >= 0) & (iy < hh)
            for cx in (0, 1):
                wx = tx if cx else 1.0 - tx
                ix = bx + cx
                valid = vz & vy & (ix >= 0) & (ix < ww)
                gz = np.clip(iz, 0, dd - 1)
                gy = np.clip(iy, 0, hh - 1)
                gx = np.clip(ix, 0, ww - 1)
                yield (cz, cy, cx), (gz, gy, gx), valid, (wz, wy, wx)


def resample_arrays(volume: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Trilinear resample of raw arrays; see :func:`resample`."""
    _check_flow_finite(coords)
    out = np.zeros(coords.shape[:3] + (volume.shape[3],))
    for _, (gz, gy, gx), valid, (wz, wy, wx) in _corner_terms(volume.shape[:3], coords):
        w = (wz * wy * wx) * valid
        out += w[..., None] * volume[gz, gy, gx, :]
    return out


def resample_volume_grad_arrays(
    dims: tuple[int, int, int], coords: np.ndarray, output_grad: np.ndarray
) -> np.ndarray:
    """Gradient w.r.t. the input values only (flow treated as constant)."""
    volume_grad = np.zeros(tuple(dims) + (output_grad.shape[3],))
    for _, (gz, gy, gx), valid, (wz, wy, wx) in _corner_terms(dims, coords):
        w = (wz * wy * wx) * valid
        np.add.at(volume_grad, (gz, gy, gx), w[..., None] * output_grad)
    return volume_grad


def resample_backward_arrays(
    volume: np.ndarray, coords: np.ndarray, output_grad: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of :func:`resample_arrays` w.r.t. the volume and the flow."""
    _check_flow_finite(coords)
    if output_grad.shape != coords.shape[:3] + (volume.shape[3],):
        raise VolumeError(
            f"output_grad shape {output_grad.shape} does not match "
            f"flow dims {coords.shape[:3]} x channels {volume.shape[3]}"
        )
    dd, hh, ww, _ = volume.shape
    volume_grad = np.zeros_like(volume)
    flow_grad = np.zeros_like(coords)
    for (cz, cy, cx), (gz, gy, gx), valid, (wz, wy, wx) in _corner_terms(volume.shape[:3], coords):
        w = (wz * wy * wx) * valid
        np.add.at(volume_grad, (gz, gy, gx), w[..., None] * output_grad)
        # <output_grad, corner value> per cell, then the product rule per axis.
        dot = np.einsum("...c,...c->...", output_grad, volume[gz, gy, gx, :]) * valid
        sx = 1.0 if cx else -1.0
        sy = 1.0 if cy else -1.0
        sz = 1.0 if cz else -1.0
        flow_grad[..., 0] += dot * sx * wy * wz
        flow_grad[..., 1] += dot * sy * wx * wz
        flow_grad[..., 2] += dot * sz * wx * wy
    # Chain through the coordinate-to-index mapping (constant per axis).
    flow_grad[..., 0] *= (ww - 1) / 2.0
    flow_grad[..., 1] *= (hh - 1) / 2.0
    flow_grad[..., 2] *= (dd - 1) / 2.0
    return volume_grad, flow_grad


def resample(volume: FeatureVolume, flow: FlowField) -> FeatureVolume:
    """Resample ``volume`` at the coordinates given by ``flow``.

    Each output cell holds the trilinear interpolation of the 8 input cells
    surrounding its flow coordinate, channels interpolated independently.
    Coordinates outside the volume contribute zeros.
    """
    return FeatureVolume(resample_arrays(volume.data, flow.coords))


def resample_backward(
    volume: FeatureVolume, flow: FlowField, output_grad: FeatureVolume
) -> tuple[FeatureVolume, np.ndarray]:
    """Exact analytic gradients of :func:`resample`.

    Returns the gradient w.r.t. the input values (a scatter of the trilinear
    weights) and w.r.t. the flow coordinates, shape ``(D, H, W, 3)``.  At
    cell-boundary sample positions the flow gradient uses the one-sided
    derivative of the containing cell.
    """
    vg, fg = resample_backward_arrays(volume.data, flow.coords, output_grad.data)
    return FeatureVolume(vg), fg


def aggregate(volumes: list[FeatureVolume]) -> FeatureVolume:
    """Cell-wise arithmetic mean of same-shaped volumes."""
    if not volumes:
        raise VolumeError("aggregate requires at least one volume")
    shape = volumes[0].data.shape
    for v in volumes[1:]:
        if v.data.shape != shape:
            raise VolumeError(f"aggregate shape mismatch: {v.data.shape} vs {shape}")
    return FeatureVolume(np.mean([v.data for v in volumes], axis=0))


def cellwise_norm(volume: FeatureVolume) -> FeatureVolume:
    """Per-cell Euclidean norm over channels, returned as a C=1 volume."""
    return FeatureVolume(np.linalg.norm(volume.data, axis=-1, keepdims=True))


def save_volume(path, volume: FeatureVolume) -> None:
    """Write a volume in the VBV1 container (also used for flows and occupancy)."""
    d, h, w = volume.dims
    with open(path, "wb") as f:
        f.write(VOLUME_MAGIC)
        f.write(struct.pack("<4I", d, h, w, volume.channels))
        f.write(volume.data.astype("<f4").tobytes())


def save_flow(path, flow: FlowField) -> None:
    save_volume(path, FeatureVolume(flow.coords))


def load_volume(path) -> FeatureVolume:
    with open(path, "rb") as f:
        magic = f.read(len(VOLUME_MAGIC))
        if magic != VOLUME_MAGIC:
            raise VolumeError(f"bad magic {magic!r}, expected {VOLUME_MAGIC!r}")
        d, h, w, c = struct.unpack("<4I", f.read(16))
        raw = f.read(d * h * w * c * 4)
        if len(raw) != d * h * w * c * 4:
            raise VolumeError("truncated volume file")
        data = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(d, h, w, c)
    return FeatureVolume(data)


def load_flow(path) -> FlowField:
    vol = load_volume(path)
    if vol.channels != 3:
        raise VolumeError(f"flow file must have 3 channels, got {vol.channels}")
    return FlowField(vol.data)
