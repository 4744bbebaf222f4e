"""Encoder, volumetric bottleneck, and the image/occupancy/segmentation decoders.

The desk-scale architecture: two strided 2D convolutions, a reshape into a
cubic feature volume, and one 3D convolution produce the bottleneck; the image
decoder mirrors it (3D conv, reshape, two upsample+conv stages, sigmoid output
with RGB + mask channels).  The occupancy decoder is two 3D convolutions with
a softmax along the depth axis; the segmentation decoder is a 1x1 convolution
over the depth channels followed by a sigmoid and bilinear upsampling.  There
are no skip connections across the bottleneck.  Normalization is per-sample,
per-channel affine normalization over spatial dims (no batch statistics).

Parameters are stored float32 (so checkpoints round-trip losslessly) and all
computation runs in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .flows import RigidPose, relative_flow
from .volume import FeatureVolume, VolumeError

CHECKPOINT_MAGIC = b"VBM1\n"
NORM_EPS = 1e-5
LEAK = 0.01


@dataclass
class Arch:
    """Architecture hyperparameters; image_size must equal 4x bottleneck_side."""

    image_size: int = 32
    bottleneck_side: int = 8
    bottleneck_channels: int = 8
    base_channels: int = 16

    def __post_init__(self) -> None:
        if self.image_size != 4 * self.bottleneck_side:
            raise VolumeError(
                f"image_size must be 4x bottleneck_side, got {self.image_size} vs {self.bottleneck_side}"
            )
        if min(self.image_size, self.bottleneck_side, self.bottleneck_channels, self.base_channels) < 1:
            raise VolumeError("arch fields must be positive")


def parameter_shapes(arch: Arch) -> dict[str, tuple[int, ...]]:
    n, c, base = arch.bottleneck_side, arch.bottleneck_channels, arch.base_channels
    plane = n * c
    return {
        "enc.conv1.w": (3, 3, 3, base),
        "enc.conv1.b": (base,),
        "enc.norm1.gain": (base,),
        "enc.norm1.bias": (base,),
        "enc.conv2.w": (3, 3, base, plane),
        "enc.conv2.b": (plane,),
        "enc.norm2.gain": (plane,),
        "enc.norm2.bias": (plane,),
        "enc.conv3.w": (3, 3, 3, c, c),
        "enc.conv3.b": (c,),
        "dec.conv1.w": (3, 3, 3, c, c),
        "dec.conv1.b": (c,),
        "dec.norm1.gain": (c,),
        "dec.norm1.bias": (c,),
        "dec.conv2.w": (3, 3, plane, 2 * base),
        "dec.conv2.b": (2 * base,),
        "dec.norm2.gain": (2 * base,),
        "dec.norm2.bias": (2 * base,),
        "dec.conv3.w": (3, 3, 2 * base, base),
        "dec.conv3.b": (base,),
        "dec.norm3.gain": (base,),
        "dec.norm3.bias": (base,),
        "dec.out.w": (3, 3, base, 4),
        "dec.out.b": (4,),
        "occ.conv1.w": (3, 3, 3, c, c),
        "occ.conv1.b": (c,),
        "occ.conv2.w": (3, 3, 3, c, 1),
        "occ.conv2.b": (1,),
        "seg.conv.w": (1, 1, n, 1),
        "seg.conv.b": (1,),
    }


class TbnModel:
    """Named parameter tensors plus the architecture that shapes them."""

    def __init__(self, arch: Arch, params: dict[str, np.ndarray]):
        self.arch = arch
        self.params = params

    @classmethod
    def init(cls, arch: Arch | None = None, seed: int = 0) -> "TbnModel":
        """Uniform fan-in initialization, deterministic for a given seed.

        The segmentation head starts as a calibrated occupancy-sum detector
        (positive depth weights, negative bias) rather than random: a column
        with no mass must decode toward "empty" from the first step, or the
        multi-view carving signal stalls in a solid-by-default optimum.
        """
        arch = arch or Arch()
        rng = np.random.default_rng(seed)
        params: dict[str, np.ndarray] = {}
        for name, shape in sorted(parameter_shapes(arch).items()):
            if name == "seg.conv.w":
                params[name] = np.full(shape, 0.5, dtype=np.float32)
            elif name == "seg.conv.b":
                params[name] = np.full(shape, -1.0, dtype=np.float32)
            elif name.endswith(".b") or name.endswith(".bias"):
                params[name] = np.zeros(shape, dtype=np.float32)
            elif name.endswith(".gain"):
                params[name] = np.ones(shape, dtype=np.float32)
            else:
                fan_in = int(np.prod(shape[:-1]))
                bound = 1.0 / np.sqrt(fan_in)
                params[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
        return cls(arch, params)

    def param_nodes(self) -> dict[str, Node]:
        return {k: Node(v.astype(np.float64)) for k, v in self.params.items()}

    def check_finite(self) -> None:
        for name, p in self.params.items():
            if not np.all(np.isfinite(p)):
                raise VolumeError(f"non-finite parameter tensor {name}")


def _norm(x: Node, gain: Node, bias: Node, axes: tuple[int, ...]) -> Node:
    mu = ad.nmean(x, axis=axes, keepdims=True)
    centered = ad.sub(x, mu)
    var = ad.nmean(ad.mul(centered, centered), axis=axes, keepdims=True)
    normed = ad.div(centered, ad.nsqrt(ad.add(var, NORM_EPS)))
    return ad.add(ad.mul(normed, gain), bias)


def encode_graph(p: dict[str, Node], arch: Arch, image: Node) -> Node:
    s, n, c = arch.image_size, arch.bottleneck_side, arch.bottleneck_channels
    if image.value.shape != (s, s, 3):
        raise VolumeError(f"encoder expects a {s}x{s}x3 image, got {image.value.shape}")
    h = ad.conv2d(image, p["enc.conv1.w"], p["enc.conv1.b"], stride=2, pad=1)
    h = ad.leaky_relu(_norm(h, p["enc.norm1.gain"], p["enc.norm1.bias"], (0, 1)), LEAK)
    h = ad.conv2d(h, p["enc.conv2.w"], p["enc.conv2.b"], stride=2, pad=1)
    h = ad.leaky_relu(_norm(h, p["enc.norm2.gain"], p["enc.norm2.bias"], (0, 1)), LEAK)
    v = ad.reshape(h, (n, n, n, c))          # (y, x, z, c)
    v = ad.transpose(v, (2, 0, 1, 3))        # -> (z, y, x, c)
    return ad.conv3d(v, p["enc.conv3.w"], p["enc.conv3.b"], pad=1)


def decode_image_graph(p: dict[str, Node], arch: Arch, volume: Node) -> Node:
    n, c = arch.bottleneck_side, arch.bottleneck_channels
    if volume.value.shape != (n, n, n, c):
        raise VolumeError(f"image decoder expects {(n, n, n, c)}, got {volume.value.shape}")
    h = ad.conv3d(volume, p["dec.conv1.w"], p["dec.conv1.b"], pad=1)
    h = ad.leaky_relu(_norm(h, p["dec.norm1.gain"], p["dec.norm1.bias"], (0, 1, 2)), LEAK)
    h = ad.transpose(h, (1, 2, 0, 3))        # (y, x, z, c)
    h = ad.reshape(h, (n, n, n * c))
    h = ad.conv2d(ad.upsample2x(h), p["dec.conv2.w"], p["dec.conv2.b"], stride=1, pad=1)
    h = ad.leaky_relu(_norm(h, p["dec.norm2.gain"], p["dec.norm2.bias"], (0, 1)), LEAK)
    h = ad.conv2d(ad.upsample2x(h), p["dec.conv3.w"], p["dec.conv3.b"], stride=1, pad=1)
    h = ad.leaky_relu(_norm(h, p["dec.norm3.gain"], p["dec.norm3.bias"], (0, 1)), LEAK)
    return ad.sigmoid(ad.conv2d(h, p["dec.out.w"], p["dec.out.b"], stride=1, pad=1))


def decode_occupancy_graph(p: dict[str, Node], arch: Arch, volume: Node) -> Node:
    n, c = arch.bottleneck_side, arch.bottleneck_channels
    if volume.value.shape != (n, n, n, c):
        raise VolumeError(f"occupancy decoder expects {(n, n, n, c)}, got {volume.value.shape}")
    h = ad.leaky_relu(ad.conv3d(volume, p["occ.conv1.w"], p["occ.conv1.b"], pad=1), LEAK)
    o = ad.conv3d(h, p["occ.conv2.w"], p["occ.conv2.b"], pad=1)
    return ad.softmax(o, axis=0)             # each (y, x) column sums to 1 along z


def decode_segmentation_graph(p: dict[str, Node], arch: Arch, occupancy: Node) -> Node:
    n, s = arch.bottleneck_side, arch.image_size
    if occupancy.value.shape != (n, n, n, 1):
        raise VolumeError(f"segmentation decoder expects {(n, n, n, 1)}, got {occupancy.value.shape}")
    # Image rows run top-down while the volume y-axis points up, so flip y to
    # keep the projected mask aligned with rendered masks.
    h = ad.flip(occupancy, axis=1)
    h = ad.transpose(h, (1, 2, 0, 3))   # depth becomes the channel axis
    h = ad.reshape(h, (n, n, n))
    m = ad.sigmoid(ad.conv2d(h, p["seg.conv.w"], p["seg.conv.b"], stride=1, pad=0))
    m = ad.linear_resize2d(m, s, s)
    return ad.reshape(m, (s, s))


def synthesize_graph(
    p: dict[str, Node],
    arch: Arch,
    inputs: list[tuple[Node, RigidPose]],
    target_pose: RigidPose,
) -> tuple[Node, Node]:
    """Encode every input, warp each into the target frame, average, decode."""
    if not inputs:
        raise VolumeError("synthesize requires at least one input view")
    dims = (arch.bottleneck_side,) * 3
    warped = []
    for image, pose in inputs:
        x = encode_graph(p, arch, image)
        flow = relative_flow(dims, pose, target_pose)
        warped.append(ad.volume_resample(x, flow.coords))
    agg = ad.mean_of(warped)
    return decode_image_graph(p, arch, agg), agg


# ---------------------------------------------------------------------------
# Inference wrappers operating on plain arrays.

def encode(model: TbnModel, image: np.ndarray) -> FeatureVolume:
    out = encode_graph(model.param_nodes(), model.arch, Node(image))
    return FeatureVolume(out.value)


def decode_image(model: TbnModel, volume: FeatureVolume) -> np.ndarray:
    return decode_image_graph(model.param_nodes(), model.arch, Node(volume.data)).value


def decode_occupancy(model: TbnModel, volume: FeatureVolume) -> FeatureVolume:
    return FeatureVolume(decode_occupancy_graph(model.param_nodes(), model.arch, Node(volume.data)).value)


def decode_segmentation(model: TbnModel, occupancy: FeatureVolume) -> np.ndarray:
    return decode_segmentation_graph(model.param_nodes(), model.arch, Node(occupancy.data)).value


def synthesize(
    model: TbnModel,
    inputs: list[tuple[np.ndarray, RigidPose]],
    target_pose: RigidPose,
) -> tuple[np.ndarray, FeatureVolume]:
    nodes = [(Node(img), pose) for img, pose in inputs]
    img, agg = synthesize_graph(model.param_nodes(), model.arch, nodes, target_pose)
    return img.value, FeatureVolume(agg.value)


# ---------------------------------------------------------------------------
# Checkpoint container: tensors then a JSON trailer with the arch.

def save_model(path, model: TbnModel) -> None:
    names = sorted(model.params)
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(names)))
        for name in names:
            data = np.ascontiguousarray(model.params[name], dtype="<f4")
            raw_name = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw_name)))
            f.write(raw_name)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())
        f.write(json.dumps({"arch": asdict(model.arch)}, sort_keys=True).encode("utf-8"))


def load_model(path) -> TbnModel:
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise VolumeError("not a VBM1 checkpoint")
        (count,) = struct.unpack("<I", f.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            shape = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n_values = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(f.read(4 * n_values), dtype="<f4").reshape(shape)
            params[name] = data.astype(np.float32)
        trailer = json.loads(f.read().decode("utf-8"))
    arch = Arch(**trailer["arch"])
    expected = parameter_shapes(arch)
    if set(params) != set(expected):
        raise VolumeError("checkpoint parameter names do not match the architecture")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise VolumeError(f"checkpoint tensor {name} has shape {params[name].shape}, expected {shape}")
    return TbnModel(arch, params)
