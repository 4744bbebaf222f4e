"""Training objectives: pixel L1, structural similarity, and the multi-view
segmentation (space-carving) loss, plus the weighted total.

Every loss accepts either plain arrays or autodiff nodes; with plain inputs a
float is returned, with node inputs the loss stays differentiable.  The
perceptual and adversarial weights exist only as inert configuration: their
terms are fixed at zero in this implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .net import TbnModel, decode_occupancy_graph, decode_segmentation_graph
from .volume import FeatureVolume, FlowField, VolumeError

SSIM_WINDOW = 7
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
BCE_EPS = 1e-6


@dataclass
class LossWeights:
    """Term weights; perceptual and adversarial are retained but inert."""

    perceptual: float = 5.0
    ssim: float = 10.0
    adversarial: float = 0.05
    mask: float = 10.0

    def __post_init__(self) -> None:
        if min(self.perceptual, self.ssim, self.adversarial, self.mask) < 0:
            raise VolumeError("loss weights must be >= 0")


def _wants_node(*values) -> bool:
    return any(isinstance(v, Node) for v in values)


def _finish(node: Node, as_node_result: bool):
    return node if as_node_result else float(node.value)


def _rgb_pair(pred: Node, target: Node) -> tuple[Node, Node]:
    if pred.value.ndim != target.value.ndim:
        raise VolumeError(f"image rank mismatch: {pred.value.shape} vs {target.value.shape}")
    if pred.value.shape != target.value.shape:
        if pred.value.shape[:-1] != target.value.shape[:-1]:
            raise VolumeError(f"image size mismatch: {pred.value.shape} vs {target.value.shape}")
        pred = ad.channel_slice(pred, 0, 3)
        target = ad.channel_slice(target, 0, 3)
        if pred.value.shape != target.value.shape:
            raise VolumeError("images differ beyond an extra mask channel")
    return pred, target


def l1_loss(pred, target):
    """Mean absolute difference over RGB pixels."""
    keep = _wants_node(pred, target)
    p, t = _rgb_pair(ad.as_node(pred), ad.as_node(target))
    return _finish(ad.nmean(ad.nabs(ad.sub(p, t))), keep)


def ssim_loss(pred, target, window: int = SSIM_WINDOW):
    """One minus mean SSIM with a uniform window; 0 iff images are identical."""
    keep = _wants_node(pred, target)
    p, t = _rgb_pair(ad.as_node(pred), ad.as_node(target))
    if p.value.ndim == 2:
        p = ad.reshape(p, p.value.shape + (1,))
        t = ad.reshape(t, t.value.shape + (1,))
    mu_p = ad.uniform_filter2d(p, window)
    mu_t = ad.uniform_filter2d(t, window)
    pp = ad.uniform_filter2d(ad.mul(p, p), window)
    tt = ad.uniform_filter2d(ad.mul(t, t), window)
    pt = ad.uniform_filter2d(ad.mul(p, t), window)
    var_p = ad.sub(pp, ad.mul(mu_p, mu_p))
    var_t = ad.sub(tt, ad.mul(mu_t, mu_t))
    cov = ad.sub(pt, ad.mul(mu_p, mu_t))
    num = ad.mul(ad.add(ad.mul(ad.mul(mu_p, mu_t), 2.0), SSIM_C1), ad.add(ad.mul(cov, 2.0), SSIM_C2))
    den = ad.mul(
        ad.add(ad.add(ad.mul(mu_p, mu_p), ad.mul(mu_t, mu_t)), SSIM_C1),
        ad.add(ad.add(var_p, var_t), SSIM_C2),
    )
    return _finish(ad.sub(1.0, ad.nmean(ad.div(num, den))), keep)


def bce_sum(pred, target, eps: float = BCE_EPS):
    """Binary cross entropy summed over all pixels, with epsilon clamping."""
    keep = _wants_node(pred, target)
    p = ad.clip(ad.as_node(pred), eps, 1.0 - eps)
    t = ad.as_node(target)
    if p.value.shape != t.value.shape:
        raise VolumeError(f"mask shape mismatch: {p.value.shape} vs {t.value.shape}")
    loss = ad.sub(0.0, ad.add(ad.mul(t, ad.nlog(p)), ad.mul(ad.sub(1.0, t), ad.nlog(ad.sub(1.0, p)))))
    return _finish(ad.nsum(loss), keep)


def mask_loss(
    model: TbnModel,
    aggregated_volume,
    view_flows: list[FlowField],
    view_masks: list[np.ndarray],
    target_mask: np.ndarray,
    params: dict[str, Node] | None = None,
):
    """Space-carving segmentation loss.

    Decodes occupancy from the aggregated bottleneck (target frame), warps it
    back into each input frame with the supplied flows, decodes a segmentation
    per view, and sums the pixel-summed BCE against every ground-truth mask,
    including the untransformed target view.
    """
    if len(view_flows) != len(view_masks):
        raise VolumeError(f"{len(view_flows)} flows but {len(view_masks)} masks")
    keep = _wants_node(aggregated_volume) or params is not None
    p = params if params is not None else model.param_nodes()
    vol = aggregated_volume
    if isinstance(vol, FeatureVolume):
        vol = Node(vol.data)
    vol = ad.as_node(vol)
    occ = decode_occupancy_graph(p, model.arch, vol)
    total = bce_sum(decode_segmentation_graph(p, model.arch, occ), Node(target_mask))
    for flow, mask in zip(view_flows, view_masks):
        occ_k = ad.volume_resample(occ, flow.coords)
        seg_k = decode_segmentation_graph(p, model.arch, occ_k)
        total = ad.add(total, bce_sum(seg_k, Node(mask)))
    return _finish(total, keep)


def total_loss(parts: dict, weights: LossWeights):
    """Weighted sum: L1 + w_p*perceptual + w_s*SSIM + w_a*adversarial + w_m*mask.

    The perceptual and adversarial parts default to zero and are kept only so
    the formula (and the weight configuration) stays complete.
    """
    keep = _wants_node(*parts.values())
    terms = {
        "l1": parts.get("l1", 0.0),
        "perceptual": parts.get("perceptual", 0.0),
        "ssim": parts.get("ssim", 0.0),
        "adversarial": parts.get("adversarial", 0.0),
        "mask": parts.get("mask", 0.0),
    }
    for name, value in terms.items():
        raw = value.value if isinstance(value, Node) else value
        if not np.all(np.isfinite(raw)):
            raise VolumeError(f"non-finite loss part {name!r}")
    total = ad.as_node(terms["l1"])
    total = ad.add(total, ad.mul(ad.as_node(terms["perceptual"]), weights.perceptual))
    total = ad.add(total, ad.mul(ad.as_node(terms["ssim"]), weights.ssim))
    total = ad.add(total, ad.mul(ad.as_node(terms["adversarial"]), weights.adversarial))
    total = ad.add(total, ad.mul(ad.as_node(terms["mask"]), weights.mask))
    return _finish(total, keep)
