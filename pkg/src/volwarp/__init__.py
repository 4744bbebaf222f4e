"""volwarp: warpable volumetric bottlenecks for view synthesis, occupancy
reconstruction, and interactive non-rigid 3D image manipulation."""

from .volume import (
    FeatureVolume,
    FlowField,
    NumericError,
    VolumeError,
    aggregate,
    cellwise_norm,
    identity_flow,
    load_flow,
    load_volume,
    resample,
    resample_backward,
    save_flow,
    save_volume,
)
from .flows import (
    RigidPose,
    StretchSpec,
    TwistSpec,
    compose_flows,
    merge_volumes,
    reflect_merge_flow,
    relative_flow,
    rigid_flow,
    script_flow,
    stretch_flow,
    twist_flow,
)
from .net import (
    Arch,
    TbnModel,
    decode_image,
    decode_occupancy,
    decode_segmentation,
    encode,
    load_model,
    save_model,
    synthesize,
)
from .losses import LossWeights, bce_sum, l1_loss, mask_loss, ssim_loss, total_loss
from .scenes import (
    MultiViewSample,
    VoxelShape,
    generate_shape,
    load_dataset,
    make_dataset,
    render_view,
    save_dataset,
    split_dataset,
)
from .recon import (
    IoUReport,
    extract_mesh,
    iou,
    optimal_threshold_iou,
    reconstruct_with_recycling,
    save_obj,
)
from .train import AdamState, TrainConfig, adam_step, evaluate_l1, train

__version__ = "0.1.0"
