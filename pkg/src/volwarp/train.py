"""Optimization loop: Adam from scratch, deterministic sampling, loss logging,
plus the finite-difference harnesses used by the ``gradcheck`` command.

Each step samples a batch of scenes; for every scene it draws K input views
(K uniform in 1..max_inputs) and one target view, synthesizes the target,
and minimizes  L1 + w_s*SSIM + w_m*mask  end-to-end.  The pixel-summed mask
term is normalized by the pixel count before weighting so the configured
weight stays comparable across image sizes.  Training is bitwise reproducible
for a fixed seed.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, backward
from .losses import LossWeights, bce_sum, l1_loss, mask_loss, ssim_loss, total_loss
from .net import Arch, TbnModel, synthesize_graph
from .flows import relative_flow
from .volume import NumericError, VolumeError, resample_arrays, resample_backward_arrays


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    steps: int = 3000
    epochs: int = 0              # if > 0, overrides steps as epochs * scenes / batch
    max_inputs: int = 4          # K drawn uniformly from {1..max_inputs} per sample
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0
    eval_every: int = 0          # 0 disables held-out evaluation / early stopping
    patience: int = 5

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise VolumeError("learning rate must be > 0")
        if self.max_inputs < 1:
            raise VolumeError("inputs per sample must be >= 1")
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = {
            "perceptual": self.weights.perceptual,
            "ssim": self.weights.ssim,
            "adversarial": self.weights.adversarial,
            "mask": self.weights.mask,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray | None],
    state: AdamState,
    config: TrainConfig,
) -> None:
    """Standard bias-corrected Adam update, in place.

    Parameters are float32 masters; moments and arithmetic stay float64 so
    updates are deterministic and checkpoints remain lossless.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    b1, b2 = config.beta1, config.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.shape)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        update = config.learning_rate * m_hat / (np.sqrt(v_hat) + config.eps)
        params[name] = (p.astype(np.float64) - update).astype(np.float32)


def _sample_losses(
    p: dict[str, Node],
    model: TbnModel,
    scene,
    input_idx: list[int],
    target_idx: int,
) -> dict[str, Node]:
    arch = model.arch
    dims = (arch.bottleneck_side,) * 3
    views = scene.views
    target_pose, target_image, target_mask = views[target_idx]
    inputs = [(Node(views[i][1][..., :3]), views[i][0]) for i in input_idx]
    pred, agg = synthesize_graph(p, arch, inputs, target_pose)
    rgb = ad.channel_slice(pred, 0, 3)
    parts: dict[str, Node] = {
        "l1": l1_loss(rgb, Node(target_image[..., :3])),
        "ssim": ssim_loss(rgb, Node(target_image[..., :3])),
    }
    back_flows = [relative_flow(dims, target_pose, views[i][0]) for i in input_idx]
    view_masks = [views[i][2] for i in input_idx]
    carve = mask_loss(model, agg, back_flows, view_masks, target_mask, params=p)
    # The image decoder's mask channel is supervised alongside the carving
    # term so compositing has a usable alpha.
    alpha = ad.reshape(ad.channel_slice(pred, 3, 4), target_mask.shape)
    carve = ad.add(carve, bce_sum(alpha, Node(target_mask)))
    parts["mask"] = ad.mul(carve, 1.0 / float(arch.image_size ** 2))
    return parts


def train(
    model: TbnModel,
    scenes: list,
    config: TrainConfig,
    log_path: str | Path | None = None,
    heldout: list | None = None,
) -> list[dict]:
    """Optimize the model in place; returns (and optionally writes) the loss log."""
    if not scenes:
        raise VolumeError("training needs at least one scene")
    steps = config.steps
    if config.epochs > 0:
        steps = config.epochs * max(1, len(scenes) // max(1, config.batch_size))
    rng = np.random.default_rng(config.seed)
    state = AdamState()
    log: list[dict] = []
    sink = open(log_path, "w", encoding="utf-8") if log_path else None
    best_eval = np.inf
    stale_evals = 0
    try:
        for step in range(steps):
            p = model.param_nodes()
            totals: list[Node] = []
            sums = {"L_R": 0.0, "L_S": 0.0, "L_M": 0.0}
            for _ in range(config.batch_size):
                scene = scenes[int(rng.integers(0, len(scenes)))]
                n_views = len(scene.views)
                k = int(rng.integers(1, min(config.max_inputs, n_views - 1) + 1))
                chosen = rng.choice(n_views, size=k + 1, replace=False)
                parts = _sample_losses(p, model, scene, [int(i) for i in chosen[:-1]], int(chosen[-1]))
                totals.append(total_loss(parts, config.weights))
                sums["L_R"] += float(parts["l1"].value)
                sums["L_S"] += float(parts["ssim"].value)
                sums["L_M"] += float(parts["mask"].value)
            batch_total = ad.mean_of(totals)
            if not np.isfinite(batch_total.value):
                raise NumericError(f"non-finite loss at step {step}")
            backward(batch_total)
            entry = {
                "step": step,
                "L_R": sums["L_R"] / config.batch_size,
                "L_S": sums["L_S"] / config.batch_size,
                "L_M": sums["L_M"] / config.batch_size,
                "total": float(batch_total.value),
            }
            log.append(entry)
            if sink:
                sink.write(json.dumps(entry) + "\n")
            grads = {name: node.grad for name, node in p.items()}
            adam_step(model.params, grads, state, config)
            if config.eval_every and heldout and (step + 1) % config.eval_every == 0:
                score = evaluate_l1(model, heldout, n_inputs=1, max_targets=2)
                if score < best_eval - 1e-5:
                    best_eval = score
                    stale_evals = 0
                else:
                    stale_evals += 1
                    if stale_evals >= config.patience:
                        break
    finally:
        if sink:
            sink.close()
    model.check_finite()
    return log


def _eval_input_indices(target: int, n_views: int, n_inputs: int) -> list[int]:
    return [(target + 1 + (j * (n_views - 1)) // n_inputs) % n_views for j in range(n_inputs)]


def evaluate_l1(
    model: TbnModel,
    scenes: list,
    n_inputs: int,
    max_targets: int | None = None,
) -> float:
    """Mean target-view L1 under a fixed deterministic protocol.

    Every scene contributes ``max_targets`` (default: all) target views; the
    inputs are the other views, spread evenly around the ring.
    """
    from .net import synthesize

    errors = []
    for scene in scenes:
        n_views = len(scene.views)
        targets = range(n_views)
        if max_targets is not None:
            stride = max(1, n_views // max_targets)
            targets = list(range(n_views))[::stride][:max_targets]
        for t in targets:
            idx = _eval_input_indices(t, n_views, n_inputs)
            inputs = [(scene.views[i][1][..., :3], scene.views[i][0]) for i in idx]
            pred, _ = synthesize(model, inputs, scene.views[t][0])
            errors.append(l1_loss(pred[..., :3], scene.views[t][1][..., :3]))
    return float(np.mean(errors))


# ---------------------------------------------------------------------------
# Finite-difference gradient checks (the `gradcheck` command).

def _rel_err(a: np.ndarray, b: np.ndarray, floor: float) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom))


def gradcheck_resampler(seed: int = 0, h: float = 1e-3) -> float:
    """Max relative error of the resampler's analytic gradients vs central
    finite differences, for a random volume and an in-bounds flow."""
    rng = np.random.default_rng(seed)
    volume = rng.standard_normal((4, 4, 4, 2))
    coords = rng.uniform(-0.85, 0.85, size=(3, 3, 3, 3))
    # Keep sampled positions away from cell boundaries so the finite
    # difference never crosses a non-differentiable seam.
    for axis, n in ((0, 4), (1, 4), (2, 4)):
        f = (coords[..., axis] + 1.0) * ((n - 1) / 2.0)
        near = np.abs(f - np.round(f)) < 0.05
        coords[..., axis] += np.where(near, 0.12, 0.0)
    out_grad = rng.standard_normal((3, 3, 3, 2))
    volume_grad, flow_grad = resample_backward_arrays(volume, coords, out_grad)

    def loss(vol, crd):
        return float(np.sum(resample_arrays(vol, crd) * out_grad))

    fd_vol = np.zeros_like(volume)
    flat = volume.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = loss(volume, coords)
        flat[i] = orig - h
        down = loss(volume, coords)
        flat[i] = orig
        fd_vol.reshape(-1)[i] = (up - down) / (2 * h)
    fd_flow = np.zeros_like(coords)
    flatc = coords.reshape(-1)
    for i in range(flatc.size):
        orig = flatc[i]
        flatc[i] = orig + h
        up = loss(volume, coords)
        flatc[i] = orig - h
        down = loss(volume, coords)
        flatc[i] = orig
        fd_flow.reshape(-1)[i] = (up - down) / (2 * h)
    return max(_rel_err(volume_grad, fd_vol, 1e-6), _rel_err(flow_grad, fd_flow, 1e-6))


def _microbatch_loss(model: TbnModel, scene, params: dict[str, np.ndarray]) -> float:
    p = {k: Node(v.astype(np.float64)) for k, v in params.items()}
    parts = _sample_losses(p, model, scene, [0, 1], 2)
    return float(total_loss(parts, LossWeights()).value)


def gradcheck_network(
    seed: int = 0, h: float = 1e-4, entries_per_tensor: int = 4
) -> float:
    """End-to-end gradient check of the full training loss on one scene.

    Compares backprop against central finite differences (double precision)
    for a deterministic sample of entries from every parameter tensor.
    Relative error uses a 0.01 floor on the denominator so near-zero
    gradients are compared absolutely.  Per-sample normalization centers
    pre-activations on the leaky-rectifier kink, so a central difference at
    the primary step is occasionally not a valid derivative estimate; such
    entries are re-estimated at h/10 and h/100 and the best agreement counts.
    """
    from .scenes import make_dataset

    model = TbnModel.init(Arch(), seed=seed)
    scene = make_dataset(seed=seed + 17, n_scenes=1, n_views=4, pose_sampling="ring")[0]
    p = model.param_nodes()
    parts = _sample_losses(p, model, scene, [0, 1], 2)
    backward(total_loss(parts, LossWeights()))
    rng = np.random.default_rng(seed + 1)
    worst = 0.0
    base = {k: v.copy() for k, v in model.params.items()}
    for name in sorted(base):
        grad = p[name].grad
        if grad is None:
            raise VolumeError(f"parameter {name!r} received no gradient")
        flat = base[name].reshape(-1)
        picks = rng.choice(flat.size, size=min(entries_per_tensor, flat.size), replace=False)
        work = {k: v.astype(np.float64) for k, v in base.items()}
        for i in picks:
            analytic = grad.reshape(-1)[i]
            orig = work[name].reshape(-1)[i]
            best = np.inf
            for step in (h, h / 10.0, h / 100.0):
                work[name].reshape(-1)[i] = orig + step
                up = _microbatch_loss(model, scene, work)
                work[name].reshape(-1)[i] = orig - step
                down = _microbatch_loss(model, scene, work)
                work[name].reshape(-1)[i] = orig
                fd = (up - down) / (2 * step)
                denom = max(abs(analytic), abs(fd), 0.01)
                best = min(best, abs(analytic - fd) / denom)
                if best < 2e-4:
                    break
            worst = max(worst, best)
    return worst
