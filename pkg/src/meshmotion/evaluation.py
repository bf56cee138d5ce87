"""Pose error metrics and the synthetic capsule-chain evaluation scenario.

Metrics follow the pose-estimation conventions: MPJPE and PVE are mean
Euclidean distances, PA-MPJPE aligns each frame with the optimal similarity
transform first, and Accel compares second finite differences of joint
trajectories (reported x1e3).

``generate_scenario`` builds a fully deterministic end-to-end test bed: a
capsule mesh skinned to a bone chain, smooth sinusoidal joint trajectories,
and a feature video rasterized from a smooth random unit-norm descriptor
field, so the fitting loop can be evaluated against exact ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import FeatureVideo
from .mesh import Camera, Mesh, project_points
from .models import SkeletalLBS, joint_positions
from .raster import rasterize_features
from .validation import as_float_array, check_finite


def _paired(pred, gt, name: str):
    p = as_float_array(pred, f"pred_{name}", (-1, -1, 3))
    g = as_float_array(gt, f"gt_{name}", (-1, -1, 3))
    if p.shape != g.shape:
        raise ValueError(f"{name} shapes disagree: {p.shape} vs {g.shape}")
    check_finite(p, f"pred_{name}")
    check_finite(g, f"gt_{name}")
    return p, g


def mpjpe(pred_joints, gt_joints) -> float:
    """Mean per-joint position error over all frames."""
    p, g = _paired(pred_joints, gt_joints, "joints")
    return float(np.linalg.norm(p - g, axis=2).mean())


def pve(pred_vertices, gt_vertices) -> float:
    """Per-vertex error: MPJPE evaluated on mesh vertices."""
    p, g = _paired(pred_vertices, gt_vertices, "vertices")
    return float(np.linalg.norm(p - g, axis=2).mean())


def accel_error(pred_joints, gt_joints) -> float:
    """Acceleration error x1e3: second-difference mismatch on interior frames."""
    p, g = _paired(pred_joints, gt_joints, "joints")
    if p.shape[0] < 3:
        raise ValueError(f"need at least 3 frames, got {p.shape[0]}")
    ap = p[2:] - 2.0 * p[1:-1] + p[:-2]
    ag = g[2:] - 2.0 * g[1:-1] + g[:-2]
    return float(np.linalg.norm(ap - ag, axis=2).mean() * 1e3)


def procrustes_align(pred, gt) -> np.ndarray:
    """Best similarity transform (rotation, translation, uniform scale) of
    ``pred`` onto ``gt`` in the least-squares sense, reflections excluded.

    Raises for degenerate predictions (all points coincident), where no scale
    is defined.
    """
    p = as_float_array(pred, "pred", (-1, 3))
    g = as_float_array(gt, "gt", (-1, 3))
    if p.shape != g.shape or p.shape[0] < 3:
        raise ValueError(
            f"need matching point sets with at least 3 points, "
            f"got {p.shape} and {g.shape}"
        )
    mu_p = p.mean(axis=0)
    mu_g = g.mean(axis=0)
    pc = p - mu_p
    gc = g - mu_g
    var_p = (pc * pc).sum() / len(p)
    if var_p <= 0.0:
        raise ValueError("prediction points are all coincident; cannot align")
    cov = gc.T @ pc / len(p)
    u, s, vt = np.linalg.svd(cov)
    flip = np.ones(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        flip[2] = -1.0
    rot = (u * flip) @ vt
    scale = (s * flip).sum() / var_p
    return scale * (pc @ rot.T) + mu_g


def pa_mpjpe(pred_joints, gt_joints) -> float:
    """MPJPE after per-frame Procrustes alignment."""
    p, g = _paired(pred_joints, gt_joints, "joints")
    total = 0.0
    for l in range(p.shape[0]):
        aligned = procrustes_align(p[l], g[l])
        total += float(np.linalg.norm(aligned - g[l], axis=1).mean())
    return total / p.shape[0]


@dataclass(frozen=True)
class PoseErrorReport:
    """All four pose error metrics plus their per-frame breakdown."""

    mpjpe: float
    pa_mpjpe: float
    pve: float
    accel: float
    per_frame_mpjpe: np.ndarray
    per_frame_pa_mpjpe: np.ndarray
    per_frame_pve: np.ndarray
    per_frame_accel: np.ndarray

    def __post_init__(self):
        for name in ("mpjpe", "pa_mpjpe", "pve", "accel"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")

    def lines(self) -> list:
        return [
            f"MPJPE:    {self.mpjpe:.6f}",
            f"PA-MPJPE: {self.pa_mpjpe:.6f}",
            f"PVE:      {self.pve:.6f}",
            f"Accel:    {self.accel:.6f}",
        ]

    def to_dict(self) -> dict:
        return {
            "mpjpe": self.mpjpe,
            "pa_mpjpe": self.pa_mpjpe,
            "pve": self.pve,
            "accel": self.accel,
            "per_frame": {
                "mpjpe": self.per_frame_mpjpe.tolist(),
                "pa_mpjpe": self.per_frame_pa_mpjpe.tolist(),
                "pve": self.per_frame_pve.tolist(),
                "accel": self.per_frame_accel.tolist(),
            },
        }


def compute_pose_error(
    pred_joints, gt_joints, pred_vertices, gt_vertices
) -> PoseErrorReport:
    """Evaluate a fitted motion against ground truth across all metrics."""
    pj, gj = _paired(pred_joints, gt_joints, "joints")
    pv, gv = _paired(pred_vertices, gt_vertices, "vertices")
    if pj.shape[0] != pv.shape[0]:
        raise ValueError(
            f"joint and vertex sequences disagree on frame count: "
            f"{pj.shape[0]} vs {pv.shape[0]}"
        )
    frame_mpjpe = np.linalg.norm(pj - gj, axis=2).mean(axis=1)
    frame_pve = np.linalg.norm(pv - gv, axis=2).mean(axis=1)
    frame_pa = np.array(
        [
            np.linalg.norm(procrustes_align(pj[l], gj[l]) - gj[l], axis=1).mean()
            for l in range(pj.shape[0])
        ]
    )
    ap = pj[2:] - 2.0 * pj[1:-1] + pj[:-2]
    ag = gj[2:] - 2.0 * gj[1:-1] + gj[:-2]
    frame_accel = np.linalg.norm(ap - ag, axis=2).mean(axis=1) * 1e3
    return PoseErrorReport(
        mpjpe=float(frame_mpjpe.mean()),
        pa_mpjpe=float(frame_pa.mean()),
        pve=float(frame_pve.mean()),
        accel=float(frame_accel.mean()) if len(frame_accel) else 0.0,
        per_frame_mpjpe=frame_mpjpe,
        per_frame_pa_mpjpe=frame_pa,
        per_frame_pve=frame_pve,
        per_frame_accel=frame_accel,
    )


# ---------------------------------------------------------------------------
# synthetic scenario


@dataclass(frozen=True)
class SyntheticScenario:
    """Deterministic ground-truth world for end-to-end fitting tests."""

    mesh: Mesh
    rig: SkeletalLBS
    gt_poses: np.ndarray
    gt_joints: np.ndarray
    camera: Camera
    feature_video: FeatureVideo
    vertex_features: np.ndarray
    background: np.ndarray
    seed: int


def _capsule_chain_mesh(n_bones: int, n_vertices: int):
    """Capsule around the y axis from 0 to n_bones, ~14 vertices per ring."""
    ring_size = 14
    n_rings = max((n_vertices - 2) // ring_size, 2)
    ys = np.linspace(0.0, float(n_bones), n_rings)
    # taper the radius toward rounded caps
    span = float(n_bones)
    dist_to_end = np.minimum(ys, span - ys)
    radius = 0.42 * np.sqrt(np.clip(dist_to_end / (0.25 * span), 0.0, 1.0) * (2.0 - np.clip(dist_to_end / (0.25 * span), 0.0, 1.0)))
    radius = np.maximum(radius, 0.02)
    angles = np.arange(ring_size) * (2.0 * np.pi / ring_size)
    verts = []
    for y, r in zip(ys, radius):
        verts.append(
            np.stack(
                [r * np.cos(angles), np.full(ring_size, y), r * np.sin(angles)],
                axis=1,
            )
        )
    verts = np.concatenate(verts)
    bottom = len(verts)
    verts = np.vstack([verts, [[0.0, 0.0, 0.0], [0.0, span, 0.0]]])
    faces = []
    for ring in range(n_rings - 1):
        a = ring * ring_size
        b = a + ring_size
        for k in range(ring_size):
            k2 = (k + 1) % ring_size
            faces.append([a + k, b + k, a + k2])
            faces.append([a + k2, b + k, b + k2])
    for k in range(ring_size):  # caps
        k2 = (k + 1) % ring_size
        faces.append([bottom, k, k2])
        last = (n_rings - 1) * ring_size
        faces.append([bottom + 1, last + k2, last + k])
    return Mesh(verts, faces)


def _chain_rig(mesh: Mesh, n_bones: int) -> SkeletalLBS:
    """Bone b spans y in [b, b+1]; weights blend linearly near each joint."""
    rest_local = np.tile(np.eye(4), (n_bones, 1, 1))
    for b in range(1, n_bones):
        rest_local[b, 1, 3] = 1.0
    parents = [-1] + list(range(n_bones - 1))
    ys = mesh.vertices[:, 1]
    weights = np.zeros((len(ys), n_bones))
    if n_bones == 1:
        weights[:, 0] = 1.0
    else:
        blend = 0.25  # half-width of the linear transition around each joint
        for b in range(n_bones):
            lo = ys - (b - blend)
            hi = (b + 1 + blend) - ys
            w = np.minimum(lo, hi) / (2.0 * blend)
            weights[:, b] = np.clip(w, 0.0, 1.0)
        weights /= weights.sum(axis=1, keepdims=True)
    tails = [None] * n_bones
    tails[-1] = np.array([0.0, 1.0, 0.0])
    names = [f"bone{b}" for b in range(n_bones)]
    return SkeletalLBS(mesh, parents, rest_local, weights, names=names, tails=tails)


def _upsample_bilinear(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Stretch a coarse (gh, gw, d) grid onto (height, width, d)."""
    gh, gw, _ = grid.shape
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    ty = (ys - y0)[:, None, None]
    tx = (xs - x0)[None, :, None]
    top = grid[y0][:, x0] * (1.0 - tx) + grid[y0][:, x1] * tx
    bot = grid[y1][:, x0] * (1.0 - tx) + grid[y1][:, x1] * tx
    return top * (1.0 - ty) + bot * ty


def default_scenario_camera() -> Camera:
    """RGB-resolution camera framing the capsule chain."""
    return Camera(
        fx=900.0,
        fy=900.0,
        cx=640.0,
        cy=352.0,
        width=1280,
        height=704,
        translation=np.array([0.0, -0.8, 4.0]),
    )


def generate_scenario(
    seed: int,
    n_bones: int = 2,
    n_vertices: int = 400,
    n_frames: int = 8,
    feature_dim: int = 64,
    amplitude: float = 0.3,
    noise: float = 0.0,
    feature_size: tuple = (88, 160),
    camera: Camera | None = None,
) -> SyntheticScenario:
    """Build mesh, rig, trajectory, and feature video for one random seed.

    Frame 0 always shows the rest pose, so it doubles as the reference frame.
    ``noise`` is the fraction of every later frame's area (never frame 0)
    overwritten with hallucination patches: blobby regions where the frame's
    own content reappears displaced by a fixed wrong offset (the producer
    moving things that did not move) and flat regions are filled with a
    smooth phantom descriptor field (the producer inventing content). Both
    kinds of patch gravitate toward where the video itself moves: half the
    corrupted area is one sticky patch that stays put across frames, the
    other half flickers to a new location every frame. Raises if any posed
    vertex leaves the camera frustum.
    """
    if min(n_bones, n_vertices, n_frames, feature_dim) < 1:
        raise ValueError("scenario parameters must be positive")
    if not 0.0 <= noise <= 1.0:
        raise ValueError("noise must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    mesh = _capsule_chain_mesh(n_bones, n_vertices)
    rig = _chain_rig(mesh, n_bones)
    cam = default_scenario_camera() if camera is None else camera
    h_feat, w_feat = feature_size
    feat_cam = cam.scaled(w_feat / cam.width, h_feat / cam.height, w_feat, h_feat)

    # per-bone sinusoids, zero at frame 0; strongest motion in the image plane
    freqs = rng.integers(1, 3, size=n_bones)
    sway = 0.25 + 0.5 * rng.random(n_bones)
    poses = np.zeros((n_frames, rig.n_params))
    for l in range(n_frames):
        phase = np.sin(2.0 * np.pi * freqs * l / n_frames)
        for b in range(n_bones):
            poses[l, 3 * b] = 0.25 * amplitude * sway[b] * phase[b]
            poses[l, 3 * b + 2] = amplitude * phase[b]

    # smooth random field over the surface: neighboring vertices get nearly
    # identical descriptors, so projective texturing is close to lossless
    waves = rng.standard_normal((feature_dim, 3)) * 2.5
    phases = rng.uniform(0.0, 2.0 * np.pi, feature_dim)
    feats = np.sin(mesh.vertices @ waves.T + phases)
    feats /= np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12)
    bg_vec = rng.standard_normal(feature_dim)
    bg_vec /= np.linalg.norm(bg_vec)
    bg_img = np.broadcast_to(bg_vec, (h_feat, w_feat, feature_dim))

    frames = np.empty((n_frames, h_feat, w_feat, feature_dim), dtype=np.float32)
    mask0 = None
    joints = np.empty((n_frames, n_bones + 1, 3))
    for l in range(n_frames):
        verts = rig.deform(poses[l])
        xy, _ = project_points(cam, verts)
        if not (
            np.isfinite(xy).all()
            and (xy[:, 0] >= 0).all()
            and (xy[:, 0] <= cam.width - 1).all()
            and (xy[:, 1] >= 0).all()
            and (xy[:, 1] <= cam.height - 1).all()
        ):
            raise ValueError(
                f"frame {l} leaves the camera frustum; lower the amplitude"
            )
        img = rasterize_features(verts, feat_cam, feats, bg_img, faces=mesh.faces)
        frames[l] = img.values.astype(np.float32)
        if l == 0:
            mask0 = img.mask.copy()
        joints[l] = joint_positions(rig, poses[l])
    if noise > 0.0:
        grid_h, grid_w = max(h_feat // 8, 2), max(w_feat // 8, 2)
        dy = int(rng.integers(2, max(h_feat // 6, 3)) * (2 * rng.integers(0, 2) - 1))
        dx = int(rng.integers(2, max(w_feat // 6, 3)) * (2 * rng.integers(0, 2) - 1))
        phantom = _upsample_bilinear(
            rng.standard_normal((grid_h, grid_w, feature_dim)), h_feat, w_feat
        )
        phantom /= np.maximum(np.linalg.norm(phantom, axis=-1, keepdims=True), 1e-12)
        motion = frames.std(axis=0).mean(axis=-1)
        motion /= max(float(motion.max()), 1e-12)
        sticky_bump = _upsample_bilinear(
            rng.standard_normal((grid_h, grid_w, 1)), h_feat, w_feat
        )[..., 0] + 2.0 * motion
        sticky = sticky_bump >= np.quantile(sticky_bump, 1.0 - 0.5 * noise)
        for l in range(1, n_frames):
            bump = _upsample_bilinear(
                rng.standard_normal((grid_h, grid_w, 1)), h_feat, w_feat
            )[..., 0] + motion
            bump[sticky] = -np.inf
            patch = sticky | (bump >= np.quantile(bump, 1.0 - 0.5 * noise))
            shifted = np.roll(frames[l], (dy, dx), axis=(0, 1))
            flat = np.all(shifted == frames[l], axis=-1)
            fill = np.where(flat[..., None], phantom, shifted)
            frames[l][patch] = fill[patch]
    video = FeatureVideo(
        frames,
        reference=0,
        mask=mask0,
        metadata=f"producer=meshmotion-synth seed={seed} noise={noise}",
    )
    return SyntheticScenario(
        mesh=mesh,
        rig=rig,
        gt_poses=poses,
        gt_joints=joints,
        camera=cam,
        feature_video=video,
        vertex_features=feats,
        background=bg_vec,
        seed=int(seed),
    )
