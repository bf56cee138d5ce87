"""Mesh motion fitting against dense feature videos, plus its file formats."""

__version__ = "0.1.0"

from .autodiff import Tape, Tensor, backward, finite_diff_check
from .estimator import MotionFitter
from .evaluation import (
    PoseErrorReport,
    SyntheticScenario,
    accel_error,
    compute_pose_error,
    default_scenario_camera,
    generate_scenario,
    mpjpe,
    pa_mpjpe,
    procrustes_align,
    pve,
)
from .features import (
    FeatureVideo,
    VertexFeatures,
    inpaint_background_features,
    project_features_to_vertices,
    read_ftrv,
    select_reference_frame,
    write_ftrv,
)
from .fitting import (
    AnimationClip,
    FitConfig,
    PoseRegressor,
    active_frame_count,
    diagnostics_log_lines,
    fit_motion,
    frequency_encode,
    load_clip,
    loss_depth,
    loss_fidelity,
    loss_jacobian,
    loss_render,
    loss_smooth,
    reference_alignment_cosine,
    save_clip,
    total_loss,
)
from .mesh import (
    Camera,
    ImagePoint,
    Mesh,
    MeshFormatError,
    bilinear_sample,
    load_mesh,
    project_point,
    project_points,
    save_mesh,
)
from .models import (
    Blendshape,
    JacobianField,
    PoseVector,
    SkeletalLBS,
    apply_pose,
    forward_kinematics,
    joint_positions,
    poisson_solve,
)
from .optim import AdamState, adam_init, adam_step
from .raster import (
    DepthMask,
    FeatureImage,
    rasterize_features,
    render_depth_mask,
    save_pgm,
    vertex_depths,
)
from .rig_io import load_rig, save_rig

__all__ = [
    "__version__",
    "Tape",
    "Tensor",
    "backward",
    "finite_diff_check",
    "MotionFitter",
    "PoseErrorReport",
    "SyntheticScenario",
    "accel_error",
    "compute_pose_error",
    "default_scenario_camera",
    "generate_scenario",
    "mpjpe",
    "pa_mpjpe",
    "procrustes_align",
    "pve",
    "FeatureVideo",
    "VertexFeatures",
    "inpaint_background_features",
    "project_features_to_vertices",
    "read_ftrv",
    "select_reference_frame",
    "write_ftrv",
    "AnimationClip",
    "FitConfig",
    "PoseRegressor",
    "active_frame_count",
    "diagnostics_log_lines",
    "fit_motion",
    "frequency_encode",
    "load_clip",
    "loss_depth",
    "loss_fidelity",
    "loss_jacobian",
    "loss_render",
    "loss_smooth",
    "reference_alignment_cosine",
    "save_clip",
    "total_loss",
    "Camera",
    "ImagePoint",
    "Mesh",
    "MeshFormatError",
    "bilinear_sample",
    "load_mesh",
    "project_point",
    "project_points",
    "save_mesh",
    "Blendshape",
    "JacobianField",
    "PoseVector",
    "SkeletalLBS",
    "apply_pose",
    "forward_kinematics",
    "joint_positions",
    "poisson_solve",
    "AdamState",
    "adam_init",
    "adam_step",
    "DepthMask",
    "FeatureImage",
    "rasterize_features",
    "render_depth_mask",
    "save_pgm",
    "vertex_depths",
    "load_rig",
    "save_rig",
]
